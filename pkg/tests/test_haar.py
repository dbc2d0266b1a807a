import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mouthemo import haar, synthetic
from mouthemo.errors import BoundsError, CascadeImportError, ParameterError, ShapeError
from mouthemo.tensor import SeededRng


def vacuous(base=24):
    f = haar.HaarFeature(((0, 0, base, base // 2, 1.0), (0, base // 2, base, base // 2, -1.0)))
    stage = haar.CascadeStage((haar.Stump(f, 0.0, 1.0, 1.0),), 0.0)
    return haar.Cascade(base, base, (stage,))


def rejecting(base=24):
    f = haar.HaarFeature(((0, 0, base, base, 1.0),))
    stage = haar.CascadeStage((haar.Stump(f, 0.0, 1.0, 1.0),), 1e30)
    return haar.Cascade(base, base, (stage,))


def random_int_image(rng, h, w):
    return np.floor(rng.uniform(h * w) * 256).reshape(h, w)


# --- integral image ---------------------------------------------------------


def test_integral_image_examples():
    assert haar.rect_sum(haar.integral_image([[5.0]]), (0, 0, 1, 1)) == 5
    assert haar.rect_sum(haar.integral_image(np.ones((4, 4))), (0, 0, 4, 4)) == 16
    ii = haar.integral_image([[1.0, 2.0], [3.0, 4.0]])
    assert haar.rect_sum(ii, (0, 0, 2, 2)) == 10
    assert haar.rect_sum(ii, (0, 1, 2, 1)) == 7
    assert haar.rect_sum(haar.integral_image(np.ones((3, 3))), (0, 0, 3, 3)) == 9


def test_integral_image_borders_and_monotone():
    img = random_int_image(SeededRng(0), 6, 9)
    ii = haar.integral_image(img)
    assert ii.sums.shape == (7, 10)
    assert not ii.sums[0].any() and not ii.sums[:, 0].any()
    assert (np.diff(ii.sums, axis=0) >= 0).all() and (np.diff(ii.sums, axis=1) >= 0).all()


def test_rect_sum_bounds():
    ii = haar.integral_image(np.ones((3, 3)))
    for rect in [(0, 0, 0, 1), (0, 0, 1, 0), (2, 2, 2, 1), (-1, 0, 1, 1)]:
        with pytest.raises(BoundsError):
            haar.rect_sum(ii, rect)
    with pytest.raises(ShapeError):
        haar.integral_image(np.zeros((0, 3)))


def test_rect_sum_matches_naive_on_8x8():
    rng = SeededRng(42)
    img = random_int_image(rng, 8, 8)
    ii = haar.integral_image(img)
    for _ in range(50):
        x, y = (int(v) for v in np.floor(rng.uniform(2) * 8))
        w = 1 + int(rng.uniform(1)[0] * (8 - x))
        h = 1 + int(rng.uniform(1)[0] * (8 - y))
        naive = sum(img[r, c] for r in range(y, y + h) for c in range(x, x + w))
        assert haar.rect_sum(ii, (x, y, w, h)) == naive


# --- window evaluation -------------------------------------------------------


def test_eval_window_vacuous_and_rejecting():
    ii = haar.integral_image(random_int_image(SeededRng(1), 30, 30))
    assert haar.eval_window(vacuous(), ii, 3, 4, 1.0)
    assert not haar.eval_window(rejecting(), ii, 3, 4, 1.0)
    with pytest.raises(BoundsError):
        haar.eval_window(vacuous(), ii, 10, 10, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.0, 1.1, 1.25]))
def test_vacuous_and_rejecting_sweep(seed, scale):
    img = random_int_image(SeededRng(seed), 32, 32)
    ii = haar.integral_image(img)
    ww, wh = haar.window_size(vacuous(), scale)
    for y in range(0, 32 - wh + 1, 3):
        for x in range(0, 32 - ww + 1, 3):
            assert haar.eval_window(vacuous(), ii, x, y, scale)
            assert not haar.eval_window(rejecting(), ii, x, y, scale)


def test_planted_feature_by_hand():
    cascade = synthetic.edge_cascade()
    img = synthetic.planted_image(60, 60, 20, 15)
    ii = haar.integral_image(img)
    # feature = 288*255 - 0 = 73440; window std = 127.5; area 576 -> ratio 1.0 > 0.85
    window = img[15:39, 20:44]
    assert window[:12].sum() - window[12:].sum() == 73440
    assert window.std() == 127.5
    assert haar.eval_window(cascade, ii, 20, 15, 1.0)
    assert not haar.eval_window(cascade, haar.integral_image(np.full((60, 60), 90.0)), 20, 15, 1.0)


@pytest.mark.parametrize("scale", [1.0, 1.1, 1.21, 1.6])
def test_grid_evaluation_matches_scalar(scale):
    cascade = synthetic.edge_cascade()
    img = synthetic.planted_image(50, 50, 10, 12)
    img += np.floor(SeededRng(9).uniform(2500) * 20).reshape(50, 50)
    ii = haar.integral_image(img)
    ww, wh = haar.window_size(cascade, scale)
    ys, xs = np.mgrid[0:50 - wh + 1, 0:50 - ww + 1]
    grid = haar.accept_grid(cascade, ii, xs.ravel(), ys.ravel(), scale)
    scalar = [haar.eval_window(cascade, ii, x, y, scale) for x, y in zip(xs.ravel(), ys.ravel())]
    assert grid.tolist() == scalar


def test_flat_windows_rejected_at_every_scale():
    # rounding of scaled rects must not unbalance the feature
    cascade = synthetic.edge_cascade()
    assert haar.raw_windows(cascade, np.full((80, 80), 200.0), 1.05) == []


# --- grouping -------------------------------------------------------------------


def test_group_rectangles_examples():
    one = [haar.DetectionBox(5, 6, 20, 20)]
    assert haar.group_rectangles(one, 0) == [haar.DetectionBox(5, 6, 20, 20, 1)]
    three = [haar.DetectionBox(10, 10, 20, 20), haar.DetectionBox(11, 10, 20, 20),
             haar.DetectionBox(10, 11, 21, 20)]
    # mean x = 31/3 -> 10, y = 31/3 -> 10, w = 61/3 -> 20, h = 20
    assert haar.group_rectangles(three, 2) == [haar.DetectionBox(10, 10, 20, 20, 3)]
    far = [haar.DetectionBox(b.x + 100, b.y, b.w, b.h) for b in three]
    assert len(haar.group_rectangles(three + far, 2)) == 2
    assert haar.group_rectangles(three, 3) == []
    with pytest.raises(ParameterError):
        haar.group_rectangles(three, 0, eps=-1)


# --- multi-scale detection ---------------------------------------------------------


def test_detect_flat_image_has_no_boxes():
    assert haar.detect_multiscale(synthetic.edge_cascade(), np.zeros((50, 50)), 1.1, 0) == []


def test_detect_vacuous_single_window():
    boxes = haar.detect_multiscale(vacuous(), np.zeros((24, 24)), 1.1, 0)
    assert boxes == [haar.DetectionBox(0, 0, 24, 24, 1)]


def test_detect_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        haar.detect_multiscale(vacuous(), np.zeros((30, 30)), 1.0, 0)
    with pytest.raises(ParameterError):
        haar.detect_multiscale(vacuous(), np.zeros((30, 30)), 1.1, 0, min_size=10)


@pytest.mark.parametrize("scale_factor", [1.1, 1.2])
@pytest.mark.parametrize("x0,y0", [(40, 30), (7, 61)])
def test_detect_planted_pattern(scale_factor, x0, y0):
    img = synthetic.planted_image(100, 100, x0, y0)
    boxes = haar.detect_multiscale(synthetic.edge_cascade(), img, scale_factor, 1)
    assert len(boxes) == 1
    assert abs(boxes[0].x - x0) <= 2 and abs(boxes[0].y - y0) <= 2


def test_detection_boxes_inside_and_deterministic():
    img, _, _ = synthetic.face_image()
    img = img + np.floor(SeededRng(3).uniform(img.size) * 30).reshape(img.shape)
    cascade = synthetic.edge_cascade(threshold=0.6)
    first = haar.detect_multiscale(cascade, img, 1.1, 0)
    assert first == haar.detect_multiscale(cascade, img, 1.1, 0)
    assert first == sorted(first, key=lambda b: (b.y, b.x, b.w))
    for b in first:
        assert b.x >= 0 and b.y >= 0 and b.x + b.w <= img.shape[1] and b.y + b.h <= img.shape[0]


# --- cascade import ----------------------------------------------------------------


def test_import_minimal_fixture(fixtures_dir):
    cascade = haar.load_cascade(fixtures_dir / "minimal_cascade.xml")
    assert (cascade.base_width, cascade.base_height) == (24, 24)
    assert len(cascade.stages) == 1 and len(cascade.stages[0].stumps) == 1
    stump = cascade.stages[0].stumps[0]
    assert stump.feature.rects == ((0, 0, 24, 12, 1.0), (0, 12, 24, 12, -1.0))
    assert (stump.threshold, stump.left_value, stump.right_value) == (0.85, 0.0, 1.0)
    assert cascade.stages[0].stage_threshold == 0.5
    assert cascade == synthetic.edge_cascade()


def test_export_round_trip():
    cascade = synthetic.band_cascade()
    assert haar.import_cascade(haar.cascade_to_xml(cascade)) == cascade


@pytest.mark.parametrize("text,needle", [
    ("not xml", "malformed"),
    ("<opencv_storage><c><stages/></c></opencv_storage>", "size"),
    ("<c><size>24 24</size><stages></stages></c>", "empty"),
    ("<c><size>24 24</size><stages><_><trees><_><_><feature><rects><_>0 0 30 12 1.</_>"
     "</rects></feature><threshold>0</threshold><left_val>0</left_val><right_val>1</right_val>"
     "</_></_></trees><stage_threshold>0</stage_threshold></_></stages></c>", "outside"),
    ("<c><size>24 24</size><stages><_><trees><_><_><feature><rects><_>0 0 24 12 1.</_>"
     "<_>0 12 24 12 -1.</_></rects></feature><left_val>0</left_val><right_val>1</right_val>"
     "</_></_></trees><stage_threshold>0</stage_threshold></_></stages></c>", "threshold"),
])
def test_import_errors(text, needle):
    with pytest.raises(CascadeImportError, match=needle):
        haar.import_cascade(text)


def test_import_warns_on_unbalanced_feature():
    cascade = haar.Cascade(24, 24, (haar.CascadeStage((haar.Stump(
        haar.HaarFeature(((0, 0, 24, 12, 1.0),)), 0.0, 0.0, 1.0),), 0.5),))
    with pytest.warns(UserWarning, match="sum to"):
        haar.import_cascade(haar.cascade_to_xml(cascade))


# --- mouth region ----------------------------------------------------------------------


def test_mouth_fallback_geometry():
    img, face_rect, _ = synthetic.face_image()
    face = haar.DetectionBox(*face_rect)
    box = haar.locate_mouth(img, face, rejecting())
    # width 0.6 * 96 = 57.6 -> 58, centred: x = 20 + (96 - 58) // 2 = 39
    # lower third: top = 20 + 64 = 84, height = 116 - 84 = 32
    assert box == haar.DetectionBox(39, 84, 58, 32, 0)
    crop = haar.extract_mouth_roi(img, face, rejecting())
    assert np.array_equal(crop, img[84:116, 39:97])


def test_mouth_detected_in_lower_half():
    img, face_rect, (mx, my, mw, mh) = synthetic.face_image()
    face = haar.DetectionBox(*face_rect)
    box = haar.locate_mouth(img, face, synthetic.edge_cascade())
    assert box.neighbors > 0
    assert box.y >= face.y + face.h // 2 and box.y + box.h <= face.y + face.h
    assert box.x <= mx + mw // 2 < box.x + box.w and box.y <= my + mh // 2 < box.y + box.h


def test_mouth_tie_breaks_topmost_then_leftmost():
    # two identical mouths in the lower half get equal neighbour counts
    face = haar.DetectionBox(0, 0, 120, 120)
    img = np.full((120, 120), 128.0)
    img[60:120] = synthetic.planted_image(60, 120, 70, 20)
    img[60:120, :60] = synthetic.planted_image(60, 60, 10, 20)
    box = haar.locate_mouth(img, face, synthetic.edge_cascade(), haar.DetectParams(min_neighbors=1))
    assert (box.x, box.y) == (10, 80)
    img2 = np.full((120, 120), 128.0)
    img2[60:120, :60] = synthetic.planted_image(60, 60, 10, 30)
    img2[60:120, 60:] = synthetic.planted_image(60, 60, 10, 5)
    box2 = haar.locate_mouth(img2, face, synthetic.edge_cascade(), haar.DetectParams(min_neighbors=1))
    assert (box2.x, box2.y) == (70, 65)


def test_mouth_box_out_of_bounds():
    with pytest.raises(BoundsError):
        haar.locate_mouth(np.zeros((50, 50)), haar.DetectionBox(30, 30, 40, 40), vacuous())


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mouth_roi_invariant(seed):
    rng = SeededRng(seed)
    img = random_int_image(rng, 90, 90)
    fx, fy = (int(v) for v in np.floor(rng.uniform(2) * 30))
    size = 30 + int(rng.uniform(1)[0] * 30)
    face = haar.DetectionBox(fx, fy, size, size)
    box = haar.locate_mouth(img, face, synthetic.edge_cascade(threshold=0.3),
                            haar.DetectParams(min_neighbors=0))
    if box.neighbors == 0:
        assert box == haar.mouth_fallback(face)
    else:
        assert box.y >= face.y + face.h // 2 and box.y + box.h <= face.y + face.h
        assert box.x >= face.x and box.x + box.w <= face.x + face.w


def naive_groups(boxes, min_neighbors, eps):
    """Pairwise union-find over the similarity relation, straight from its definition."""
    parent = list(range(len(boxes)))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            d = eps * min(a.w, a.h, b.w, b.h)
            if (abs(a.x - b.x) <= d and abs(a.y - b.y) <= d
                    and abs(a.x + a.w - b.x - b.w) <= d and abs(a.y + a.h - b.y - b.h) <= d):
                parent[find(i)] = find(j)
    clusters = {}
    for i, b in enumerate(boxes):
        clusters.setdefault(find(i), []).append(b)
    out = []
    for m in clusters.values():
        if len(m) > min_neighbors:
            n = len(m)
            mean = [int(np.floor(sum(getattr(b, k) for b in m) / n + 0.5)) for k in "xywh"]
            out.append(haar.DetectionBox(*mean, n))
    return sorted(out, key=lambda b: (b.y, b.x, b.w))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3))
def test_grouping_matches_naive_union_find(seed, min_neighbors):
    rng = SeededRng(seed)
    boxes = []
    for _ in range(25):
        x, y = (int(v) for v in np.floor(rng.uniform(2) * 40))
        s = 10 + int(rng.uniform(1)[0] * 6)
        boxes.append(haar.DetectionBox(x, y, s, s))
    assert haar.group_rectangles(boxes, min_neighbors, 0.2) == naive_groups(boxes, min_neighbors, 0.2)
