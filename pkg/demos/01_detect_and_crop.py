"""
Detecting a face and cropping the mouth
=======================================

Builds a synthetic image, runs the multi-scale cascade detector on it and
cuts out the mouth region. Real use swaps the synthetic cascades for OpenCV
haarcascade XML files loaded with ``haar.load_cascade``.
"""

import numpy as np

from mouthemo import haar, synthetic

# a banded 96 px "face" with a bright-over-dark "mouth" in its bottom band
img, face_true, mouth_true = synthetic.face_image()
print("image", img.shape, "planted face", face_true, "planted mouth", mouth_true)

# %%
# The integral image gives any rectangle sum with four lookups.
ii = haar.integral_image(img)
x, y, w, h = face_true
print("face block sum", haar.rect_sum(ii, face_true), "==", img[y:y + h, x:x + w].sum())

# %%
# Sliding the face cascade over a pyramid of window sizes fires many times
# around the true face; grouping merges those hits into one box.
face_cascade = synthetic.band_cascade()
raw = haar.raw_windows(face_cascade, img, 1.1, (24, 24))
faces = haar.detect(face_cascade, img, haar.DetectParams(scale_factor=1.1, min_neighbors=3))
print(len(raw), "raw windows grouped into", [b.rect for b in faces])

# %%
# The mouth is searched for only in the lower half of the chosen face.
face = haar.pick_face(faces)
mouth = haar.locate_mouth(img, face, synthetic.edge_cascade())
print("mouth box", mouth.rect, "neighbors", mouth.neighbors)

# with no mouth detection we fall back to a fixed box in the lower third
print("fallback box", haar.mouth_fallback(face).rect)

roi = haar.crop(img, mouth)
print("crop", roi.shape, "top row mean", roi[0].mean(), "bottom row mean", roi[-1].mean())

# %%
# Cascades round-trip through the OpenCV XML layout.
xml = haar.cascade_to_xml(face_cascade)
assert haar.import_cascade(xml) == face_cascade
print(xml.splitlines()[0])
