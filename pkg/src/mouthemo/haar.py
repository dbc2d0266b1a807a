"""Haar-cascade detection: integral images, stump cascades, sliding windows.

Cascades are read from the legacy ``haarcascade`` XML layout (stump trees,
upright features only). Detection follows the usual recipe: every window in
a scale pyramid is passed through the stages, accepted windows are clustered
by :func:`group_rectangles`, and the surviving boxes are returned in a fixed
``(y, x, w)`` order.
"""

from __future__ import annotations

import math
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass

import numpy as np

from .errors import BoundsError, CascadeImportError, ParameterError, ShapeError


def _round(v):
    # half-up rounding; Python's round() is banker's rounding
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class IntegralImage:
    """Zero-padded prefix sums; ``sums[y][x]`` covers rows < y and cols < x."""

    sums: np.ndarray
    squared_sums: np.ndarray

    @property
    def height(self):
        return self.sums.shape[0] - 1

    @property
    def width(self):
        return self.sums.shape[1] - 1


def integral_image(gray):
    g = np.asarray(gray, dtype=np.float64)
    if g.ndim != 2 or g.size == 0:
        raise ShapeError(f"integral image needs a non-empty 2-D image, got shape {g.shape}")
    h, w = g.shape
    sums = np.zeros((h + 1, w + 1))
    sq = np.zeros((h + 1, w + 1))
    sums[1:, 1:] = g.cumsum(0).cumsum(1)
    sq[1:, 1:] = (g * g).cumsum(0).cumsum(1)
    return IntegralImage(sums, sq)


def _check_rect(ii, x, y, w, h):
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > ii.width or y + h > ii.height:
        raise BoundsError(
            f"rect ({x}, {y}, {w}, {h}) outside {ii.width}x{ii.height} image"
        )


def rect_sum(ii, rect, squared=False):
    """Sum of pixels (or squared pixels) inside ``rect = (x, y, w, h)``."""
    x, y, w, h = (int(v) for v in rect[:4])
    _check_rect(ii, x, y, w, h)
    s = ii.squared_sums if squared else ii.sums
    return float(s[y + h, x + w] - s[y, x + w] - s[y + h, x] + s[y, x])


@dataclass(frozen=True)
class HaarFeature:
    rects: tuple  # (x, y, w, h, weight) in base-window coordinates


@dataclass(frozen=True)
class Stump:
    feature: HaarFeature
    threshold: float
    left_value: float
    right_value: float


@dataclass(frozen=True)
class CascadeStage:
    stumps: tuple
    stage_threshold: float

    def __post_init__(self):
        if not self.stumps:
            raise ParameterError("a cascade stage needs at least one stump")


@dataclass(frozen=True)
class Cascade:
    base_width: int
    base_height: int
    stages: tuple

    def __post_init__(self):
        if self.base_width < 4 or self.base_height < 4:
            raise ParameterError("cascade base window must be at least 4x4")
        if not self.stages:
            raise ParameterError("a cascade needs at least one stage")
        for stage in self.stages:
            for st in stage.stumps:
                for x, y, w, h, _ in st.feature.rects:
                    if x < 0 or y < 0 or w <= 0 or h <= 0 or \
                            x + w > self.base_width or y + h > self.base_height:
                        raise ParameterError(
                            f"rect {(x, y, w, h)} outside the {self.base_width}x"
                            f"{self.base_height} base window"
                        )


@dataclass(frozen=True)
class DetectionBox:
    x: int
    y: int
    w: int
    h: int
    neighbors: int = 1

    @property
    def rect(self):
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class DetectParams:
    scale_factor: float = 1.1
    min_neighbors: int = 3
    eps: float = 0.2
    min_size: tuple | None = None


def window_size(cascade, scale):
    return _round(cascade.base_width * scale), _round(cascade.base_height * scale)


def scaled_rects(feature, scale, ww, wh):
    """Feature rects scaled and rounded to pixels inside a ``ww`` x ``wh`` window.

    Rounding can unbalance a feature whose weighted areas cancel at base
    size, which makes flat windows respond. For such features the first
    rect's weight is recomputed so the scaled weighted areas cancel again.
    """
    out = []
    for rx, ry, rw, rh, weight in feature.rects:
        sx, sy = _round(rx * scale), _round(ry * scale)
        sw = max(1, min(_round(rw * scale), ww - sx))
        sh = max(1, min(_round(rh * scale), wh - sy))
        out.append((sx, sy, sw, sh, weight))
    balanced = abs(sum(r[2] * r[3] * r[4] for r in feature.rects)) <= 1e-3
    if balanced and len(out) > 1:
        rest = sum(r[2] * r[3] * r[4] for r in out[1:])
        sx, sy, sw, sh, _ = out[0]
        out[0] = (sx, sy, sw, sh, -rest / (sw * sh))
    return out


def eval_window(cascade, ii, x, y, scale):
    """True iff the window at ``(x, y)`` scaled by ``scale`` passes every stage.

    Each stump compares its feature sum (rects from :func:`scaled_rects`)
    against ``threshold * std * area``, where ``std`` is the window's pixel
    standard deviation (at least 1) and ``area`` the scaled window area.
    """
    ww, wh = window_size(cascade, scale)
    x, y = int(x), int(y)
    _check_rect(ii, x, y, ww, wh)
    area = float(ww * wh)
    s = rect_sum(ii, (x, y, ww, wh))
    sq = rect_sum(ii, (x, y, ww, wh), squared=True)
    mean = s / area
    norm = math.sqrt(max(sq / area - mean * mean, 0.0))
    norm = max(norm, 1.0)
    for stage in cascade.stages:
        score = 0.0
        for st in stage.stumps:
            f = 0.0
            for sx, sy, sw, sh, weight in scaled_rects(st.feature, scale, ww, wh):
                f += weight * rect_sum(ii, (x + sx, y + sy, sw, sh))
            score += st.left_value if f < st.threshold * norm * area else st.right_value
        if score < stage.stage_threshold:
            return False
    return True


def group_rectangles(boxes, min_neighbors=3, eps=0.2):
    """Cluster similar boxes and average each cluster.

    Two boxes are similar when every edge moves by at most ``eps`` times the
    smallest side involved; clusters are the transitive closure of that
    relation. A cluster survives when it holds more than ``min_neighbors``
    boxes and is emitted as its rounded mean with ``neighbors`` set to its
    size.
    """
    if eps < 0:
        raise ParameterError("eps must be >= 0")
    boxes = list(boxes)
    if not boxes:
        return []
    r = np.array([b.rect for b in boxes], dtype=np.float64)
    x0, y0, w, h = r.T
    x1, y1 = x0 + w, y0 + h
    side = np.minimum(w, h)
    labels = np.arange(len(boxes))
    for i in range(len(boxes)):
        delta = eps * np.minimum(side[i], side)
        near = ((np.abs(x0 - x0[i]) <= delta) & (np.abs(y0 - y0[i]) <= delta)
                & (np.abs(x1 - x1[i]) <= delta) & (np.abs(y1 - y1[i]) <= delta))
        linked = np.unique(labels[near])
        if linked.size > 1:
            labels[np.isin(labels, linked)] = linked[0]
    out = []
    for lab in np.unique(labels):
        members = r[labels == lab]
        n = len(members)
        if n <= min_neighbors:
            continue
        mx, my, mw, mh = (_round(v) for v in members.sum(axis=0) / n)
        out.append(DetectionBox(mx, my, mw, mh, n))
    return sorted(out, key=lambda b: (b.y, b.x, b.w))


def raw_windows(cascade, gray, scale_factor=1.1, min_size=None, ii=None):
    """Every accepted window over the scale pyramid, before grouping."""
    if scale_factor <= 1.0:
        raise ParameterError(f"scale_factor must exceed 1, got {scale_factor}")
    gray = np.asarray(gray, dtype=np.float64)
    if ii is None:
        ii = integral_image(gray)
    min_w, min_h = _min_size(cascade, min_size)
    scale = max(min_w / cascade.base_width, min_h / cascade.base_height)
    hits = []
    while True:
        ww, wh = window_size(cascade, scale)
        if ww > ii.width or wh > ii.height:
            break
        stride = max(1, _round(scale))
        ys, xs = np.meshgrid(np.arange(0, ii.height - wh + 1, stride),
                             np.arange(0, ii.width - ww + 1, stride), indexing="ij")
        ok = accept_grid(cascade, ii, xs.ravel(), ys.ravel(), scale)
        hits += [DetectionBox(int(x), int(y), ww, wh)
                 for x, y in zip(xs.ravel()[ok], ys.ravel()[ok])]
        scale *= scale_factor
    return hits


def _min_size(cascade, min_size):
    if min_size is None:
        min_size = (cascade.base_width, cascade.base_height)
    elif isinstance(min_size, (int, float)):
        min_size = (min_size, min_size)
    if min_size[0] < cascade.base_width or min_size[1] < cascade.base_height:
        raise ParameterError(f"min_size {min_size} smaller than the cascade base window")
    return min_size


def accept_grid(cascade, ii, xs, ys, scale):
    """Vectorised :func:`eval_window` over many window origins at one scale."""
    ww, wh = window_size(cascade, scale)
    xs, ys = np.asarray(xs, dtype=np.int64), np.asarray(ys, dtype=np.int64)
    if xs.size and (xs.min() < 0 or ys.min() < 0 or xs.max() + ww > ii.width
                    or ys.max() + wh > ii.height):
        raise BoundsError("window grid leaves the image")

    def box_sum(table, x, y, w, h):
        return table[y + h, x + w] - table[y, x + w] - table[y + h, x] + table[y, x]

    area = float(ww * wh)
    mean = box_sum(ii.sums, xs, ys, ww, wh) / area
    var = box_sum(ii.squared_sums, xs, ys, ww, wh) / area - mean * mean
    norm = np.maximum(np.sqrt(np.maximum(var, 0.0)), 1.0)
    alive = np.ones(xs.shape, dtype=bool)
    for stage in cascade.stages:
        score = np.zeros(xs.shape)
        for st in stage.stumps:
            f = np.zeros(xs.shape)
            for sx, sy, sw, sh, weight in scaled_rects(st.feature, scale, ww, wh):
                f += weight * box_sum(ii.sums, xs + sx, ys + sy, sw, sh)
            score += np.where(f < st.threshold * norm * area, st.left_value, st.right_value)
        alive &= score >= stage.stage_threshold
    return alive


def detect_multiscale(cascade, gray, scale_factor=1.1, min_neighbors=3, min_size=None,
                      eps=0.2):
    """Multi-scale sliding-window detection followed by grouping."""
    hits = raw_windows(cascade, gray, scale_factor, min_size)
    return group_rectangles(hits, min_neighbors, eps)


def detect(cascade, gray, params=DetectParams()):
    return detect_multiscale(cascade, gray, params.scale_factor, params.min_neighbors,
                             params.min_size, params.eps)


# ---------------------------------------------------------------------------
# Legacy haarcascade XML


def _child(elem, tag, where):
    found = elem.find(tag)
    if found is None:
        raise CascadeImportError(f"<{where}> lacks a <{tag}> element")
    return found


def _number(elem, tag, where):
    node = _child(elem, tag, where)
    try:
        return float((node.text or "").strip())
    except ValueError:
        raise CascadeImportError(f"<{tag}> in {where} is not a number: {node.text!r}") from None


def import_cascade(xml_text):
    """Parse a legacy ``haarcascade`` XML document into a :class:`Cascade`."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise CascadeImportError(f"malformed XML: {exc}") from None
    # the cascade element is usually wrapped in <opencv_storage>
    node = root if root.find("size") is not None else next(
        (c for c in root if c.find("size") is not None), None)
    if node is None:
        raise CascadeImportError("no element with a <size> child found")
    try:
        bw, bh = (int(v) for v in node.find("size").text.split())
    except (ValueError, AttributeError):
        raise CascadeImportError("<size> must hold two integers 'W H'") from None
    stages_el = _child(node, "stages", node.tag)
    stages = []
    for si, stage_el in enumerate(stages_el):
        where = f"stages/_[{si}]"
        trees = _child(stage_el, "trees", where)
        stumps = []
        for ti, tree in enumerate(trees):
            nodes = list(tree)
            twhere = f"{where}/trees/_[{ti}]"
            if len(nodes) != 1:
                raise CascadeImportError(f"{twhere}: only single-stump trees are supported")
            stumps.append(_parse_stump(nodes[0], bw, bh, twhere))
        if not stumps:
            raise CascadeImportError(f"{where}: stage has no trees")
        stages.append(CascadeStage(tuple(stumps), _number(stage_el, "stage_threshold", where)))
    if not stages:
        raise CascadeImportError("<stages> is empty")
    return Cascade(bw, bh, tuple(stages))


def _parse_stump(nd, bw, bh, where):
    feat = _child(nd, "feature", where)
    tilted = feat.find("tilted")
    if tilted is not None and (tilted.text or "0").strip() not in ("0", ""):
        raise CascadeImportError(f"{where}: tilted features are not supported")
    rects = []
    for rect_el in _child(feat, "rects", where + "/feature"):
        parts = (rect_el.text or "").split()
        if len(parts) != 5:
            raise CascadeImportError(f"{where}: rect {rect_el.text!r} needs 'x y w h weight'")
        try:
            x, y, w, h = (int(float(p)) for p in parts[:4])
            weight = float(parts[4])
        except ValueError:
            raise CascadeImportError(f"{where}: bad rect {rect_el.text!r}") from None
        if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > bw or y + h > bh:
            raise CascadeImportError(f"{where}: rect {rect_el.text.strip()!r} outside {bw}x{bh}")
        rects.append((x, y, w, h, weight))
    if not rects:
        raise CascadeImportError(f"{where}: feature has no rects")
    balance = sum(r[2] * r[3] * r[4] for r in rects)
    if abs(balance) > 1e-3:
        warnings.warn(f"{where}: weighted rect areas sum to {balance:g}, not 0", stacklevel=3)
    return Stump(
        HaarFeature(tuple(rects)),
        _number(nd, "threshold", where),
        _number(nd, "left_val", where),
        _number(nd, "right_val", where),
    )


def cascade_to_xml(cascade, name="cascade"):
    """Serialise ``cascade`` in the same legacy layout :func:`import_cascade` reads."""
    lines = ["<?xml version=\"1.0\"?>", "<opencv_storage>",
             f"<{name} type_id=\"opencv-haar-classifier\">",
             f"  <size>{cascade.base_width} {cascade.base_height}</size>", "  <stages>"]
    for stage in cascade.stages:
        lines += ["    <_>", "      <trees>"]
        for st in stage.stumps:
            lines += ["        <_>", "          <_>", "            <feature>", "              <rects>"]
            lines += [f"                <_>{x} {y} {w} {h} {wt!r}</_>"
                      for x, y, w, h, wt in st.feature.rects]
            lines += ["              </rects>", "              <tilted>0</tilted>",
                      "            </feature>",
                      f"            <threshold>{st.threshold!r}</threshold>",
                      f"            <left_val>{st.left_value!r}</left_val>",
                      f"            <right_val>{st.right_value!r}</right_val>",
                      "          </_>", "        </_>"]
        lines += ["      </trees>", f"      <stage_threshold>{stage.stage_threshold!r}</stage_threshold>",
                  "      <parent>-1</parent>", "      <next>-1</next>", "    </_>"]
    lines += ["  </stages>", f"</{name}>", "</opencv_storage>", ""]
    return "\n".join(lines)


def load_cascade(path):
    with open(path, encoding="utf-8") as fh:
        return import_cascade(fh.read())


# ---------------------------------------------------------------------------
# Face -> mouth region


def _check_box(gray, box):
    h, w = gray.shape
    if box.w <= 0 or box.h <= 0 or box.x < 0 or box.y < 0 or box.x + box.w > w or box.y + box.h > h:
        raise BoundsError(f"box {box.rect} outside {w}x{h} image")


def mouth_fallback(face):
    """Lower third of the face, 60% of its width, centred horizontally."""
    mw = max(1, _round(0.6 * face.w))
    top = face.y + _round(2.0 * face.h / 3.0)
    mh = max(1, face.y + face.h - top)
    return DetectionBox(face.x + (face.w - mw) // 2, min(top, face.y + face.h - 1), mw, mh, 0)


def locate_mouth(gray, face, mouth_cascade, params=DetectParams()):
    """Mouth box inside ``face``: best detection in the lower half, else fallback.

    The best detection has the most neighbours; ties go to the topmost, then
    leftmost box. Returned boxes are in full-image coordinates; a fallback box
    carries ``neighbors=0``.
    """
    gray = np.asarray(gray, dtype=np.float64)
    _check_box(gray, face)
    top = face.y + face.h // 2
    region = gray[top:face.y + face.h, face.x:face.x + face.w]
    found = []
    min_w, min_h = _min_size(mouth_cascade, params.min_size)
    if region.shape[1] >= min_w and region.shape[0] >= min_h:
        found = detect_multiscale(mouth_cascade, region, params.scale_factor,
                                  params.min_neighbors, params.min_size, params.eps)
    if not found:
        return mouth_fallback(face)
    best = min(found, key=lambda b: (-b.neighbors, b.y, b.x))
    return DetectionBox(best.x + face.x, best.y + top, best.w, best.h, best.neighbors)


def crop(gray, box):
    gray = np.asarray(gray)
    _check_box(gray, box)
    return gray[box.y:box.y + box.h, box.x:box.x + box.w].copy()


def extract_mouth_roi(gray, face, mouth_cascade, params=DetectParams()):
    """Crop of the mouth region inside ``face`` (see :func:`locate_mouth`)."""
    return crop(gray, locate_mouth(gray, face, mouth_cascade, params))


def pick_face(boxes):
    """Most-supported face; ties go to the larger, then topmost-leftmost box."""
    if not boxes:
        return None
    return min(boxes, key=lambda b: (-b.neighbors, -b.w * b.h, b.y, b.x))
