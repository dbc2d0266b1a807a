"""Synthetic images and matching hand-built cascades for fixtures and demos.

Nothing here pretends to look like a face. The "mouth" is a block that is
bright on top and dark below; the "face" is a block of three horizontal
bands (bright, dark, bright) with a mouth drawn into its bottom band. Each
has a one-stump cascade tuned to respond to it.
"""

from __future__ import annotations

import numpy as np

from .haar import Cascade, CascadeStage, HaarFeature, Stump
from .tensor import SeededRng


def edge_cascade(base=24, threshold=0.85):
    """Fires on windows whose upper half is much brighter than the lower half."""
    half = base // 2
    feature = HaarFeature(((0, 0, base, half, 1.0), (0, half, base, base - half, -1.0)))
    return Cascade(base, base, (CascadeStage((Stump(feature, threshold, 0.0, 1.0),), 0.5),))


def band_cascade(base=24, threshold=1.1):
    """Fires on bright / dark / bright horizontal thirds (weights +1, -2, +1)."""
    third = base // 3
    feature = HaarFeature((
        (0, 0, base, third, 1.0),
        (0, third, base, third, -2.0),
        (0, 2 * third, base, third, 1.0),
    ))
    return Cascade(base, base, (CascadeStage((Stump(feature, threshold, 0.0, 1.0),), 0.5),))


def planted_image(height, width, x, y, size=24, background=128.0):
    """Flat image with a ``size`` x ``size`` block, bright on top and dark below."""
    img = np.full((height, width), float(background))
    half = size // 2
    img[y:y + half, x:x + size] = 255.0
    img[y + half:y + size, x:x + size] = 0.0
    return img


def face_image(face_size=96, margin=20, mouth_size=24, mouth_offset=(36, 64),
               background=128.0):
    """Image holding one banded "face" with a planted mouth in its bottom band.

    Returns ``(image, face_rect, mouth_rect)``; rectangles are ``(x, y, w, h)``
    in image coordinates. The default mouth offset puts the mouth inside the
    lower half of the face.
    """
    side = face_size + 2 * margin
    img = np.full((side, side), float(background))
    fx = fy = margin
    third = face_size // 3
    img[fy:fy + face_size, fx:fx + face_size] = 220.0
    img[fy + third:fy + 2 * third, fx:fx + face_size] = 40.0
    mx, my = fx + mouth_offset[0], fy + mouth_offset[1]
    half = mouth_size // 2
    img[my:my + half, mx:mx + mouth_size] = 255.0
    img[my + half:my + mouth_size, mx:mx + mouth_size] = 0.0
    return img, (fx, fy, face_size, face_size), (mx, my, mouth_size, mouth_size)


def noise_image(height, width, rng):
    """Uniform integer noise in 0..255 drawn from a :class:`SeededRng`."""
    return np.floor(rng.uniform(height * width) * 256.0).reshape(height, width)


def toy_mouths(per_class=10, size=16, seed=5, noise=0.3):
    """Three separable 0..1 textures: horizontal edge, vertical edge, checker.

    Returns ``(images, labels)`` shaped (N, 1, size, size) and (N,).
    """
    rng = SeededRng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    bases = [
        (yy < size // 2).astype(float),
        (xx < size // 2).astype(float),
        ((yy + xx) % 4 < 2).astype(float),
    ]
    xs, ys = [], []
    for label, base in enumerate(bases):
        for _ in range(per_class):
            grain = rng.uniform(size * size).reshape(size, size)
            xs.append((1.0 - noise) * base + noise * grain)
            ys.append(label)
    return np.array(xs)[:, None], np.array(ys, dtype=np.int64)
