"""Dataset ingestion: P5 graymaps, resizing, label maps and stratified splits."""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, LabelError

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def load_pgm(data):
    """Decode a binary (P5) portable graymap with maxval <= 255.

    Returns a float64 array of shape (height, width) with the raw 0..maxval
    values. Header comments and arbitrary whitespace are accepted.
    """
    data = bytes(data)
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise FormatError("truncated graymap header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FormatError(f"not a P5 graymap (magic {fields[0][:2]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise FormatError("non-numeric graymap header field") from None
    if width < 1 or height < 1:
        raise FormatError(f"bad graymap size {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"maxval {maxval} not supported (must be 1..255)")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after graymap header")
    pos += 1
    raster = data[pos:pos + width * height]
    if len(raster) < width * height:
        raise FormatError(
            f"graymap payload has {len(raster)} bytes, expected {width * height}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).astype(np.float64)


def save_pgm(gray):
    """Encode a 2-D array of 0..255 values as P5 bytes (values are rounded)."""
    g = np.clip(np.rint(np.asarray(gray, dtype=np.float64)), 0, 255).astype(np.uint8)
    if g.ndim != 2:
        raise FormatError("only 2-D images can be written as graymaps")
    h, w = g.shape
    return b"P5\n%d %d\n255\n" % (w, h) + g.tobytes()


def read_pgm(path):
    with open(path, "rb") as fh:
        return load_pgm(fh.read())


def write_pgm(path, gray):
    with open(path, "wb") as fh:
        fh.write(save_pgm(gray))


def resize_bilinear(gray, height, width):
    """Bilinear resampling with corner-aligned sample positions."""
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape

    def axis(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(height, h)
    x0, x1, fx = axis(width, w)
    top = g[y0][:, x0] * (1 - fx) + g[y0][:, x1] * fx
    bot = g[y1][:, x0] * (1 - fx) + g[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def preprocess(gray, size):
    """Resize to ``size`` x ``size`` and scale 0..255 intensities into [0, 1]."""
    g = np.asarray(gray, dtype=np.float64)
    if g.shape == (size, size):
        out = g / 255.0
    else:
        out = resize_bilinear(g, size, size) / 255.0
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class LabelMap:
    """Class names in alphabetical order; a name's position is its label."""

    names: tuple

    @classmethod
    def of(cls, names):
        names = tuple(sorted({str(n).strip() for n in names if str(n).strip()}))
        if len(names) < 2:
            raise LabelError("need at least two classes")
        return cls(names)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise LabelError(f"unknown class {name!r}; known: {', '.join(self.names)}") from None

    def __len__(self):
        return len(self.names)


@dataclass
class Sample:
    image: np.ndarray
    label: int
    source_id: str


def load_dataset(root, label_map):
    """Read ``root/<ClassName>/*.pgm`` into samples sorted by (class, file name).

    Images are returned as raw 0..255 intensities; see :func:`to_arrays`.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    samples = []
    for entry in sorted(os.listdir(root)):
        cdir = root / entry
        if not cdir.is_dir():
            continue
        if entry not in label_map.names:
            raise DataError(f"{cdir}: directory does not name a known class")
        label = label_map.index(entry)
        for fname in sorted(os.listdir(cdir)):
            if not fname.lower().endswith(".pgm"):
                continue
            path = cdir / fname
            try:
                image = read_pgm(path)
            except (OSError, FormatError) as exc:
                raise DataError(f"{path}: {exc}") from None
            samples.append(Sample(image, label, f"{entry}/{Path(fname).stem}"))
    samples.sort(key=lambda s: (s.label, s.source_id))
    return samples


@dataclass(frozen=True)
class SplitPlan:
    """Per-class training and validation counts; the rest becomes test data.

    ``train`` and ``validation`` are either one int for every class or a
    mapping from label index to count.
    """

    train: int | dict
    validation: int | dict

    def counts(self, label):
        t = self.train[label] if isinstance(self.train, dict) else self.train
        v = self.validation[label] if isinstance(self.validation, dict) else self.validation
        return int(t), int(v)


def split_dataset(samples, plan, rng):
    """Stratified shuffle-and-cut: per class, train first, validation next."""
    by_class = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    train, val, test = [], [], []
    for label in sorted(by_class):
        members = by_class[label]
        n_train, n_val = plan.counts(label)
        if n_train < 0 or n_val < 0 or n_train + n_val > len(members):
            raise DataError(
                f"class {label} has {len(members)} samples, plan asks for "
                f"{n_train} train + {n_val} validation"
            )
        order = rng.shuffle(members)
        train += order[:n_train]
        val += order[n_train:n_train + n_val]
        test += order[n_train + n_val:]
    return train, val, test


def write_split_manifest(path, label_map, train, val, test):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "class", "split"])
        for split, members in (("train", train), ("validation", val), ("test", test)):
            for s in members:
                w.writerow([s.source_id, label_map.names[s.label], split])


def apply_split_manifest(path, samples):
    """Partition ``samples`` as recorded in a split manifest (manifest order)."""
    by_id = {s.source_id: s for s in samples}
    parts = {"train": [], "validation": [], "test": []}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["source_id"] not in by_id:
                raise DataError(f"{path}: unknown sample {row['source_id']!r}")
            if row["split"] not in parts:
                raise DataError(f"{path}: unknown split {row['split']!r}")
            parts[row["split"]].append(by_id[row["source_id"]])
    return parts["train"], parts["validation"], parts["test"]


def to_arrays(samples, size):
    """Stack samples into an (N, 1, size, size) float array and a label vector."""
    if not samples:
        return np.zeros((0, 1, size, size)), np.zeros(0, dtype=np.int64)
    x = np.stack([preprocess(s.image, size) for s in samples])[:, None]
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y
