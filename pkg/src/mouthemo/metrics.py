"""Confusion matrices and the accuracy / F1 figures derived from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, LabelError


@dataclass
class ConfusionMatrix:
    """K x K integer counts indexed ``counts[true][predicted]``."""

    counts: np.ndarray

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if self.counts.shape != other.counts.shape:
            raise LabelError("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.counts + other.counts)


def confusion(predictions, labels, num_classes):
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if predictions.shape != labels.shape:
        raise LabelError(
            f"{predictions.size} predictions but {labels.size} labels"
        )
    for name, v in (("prediction", predictions), ("label", labels)):
        if v.size and (v.min() < 0 or v.max() >= num_classes):
            raise LabelError(f"{name} outside [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


def _nonempty(cm):
    total = cm.total
    if total <= 0:
        raise DataError("confusion matrix is empty")
    return total


def accuracy_of(cm):
    total = _nonempty(cm)
    return int(np.trace(cm.counts)) / total


def f1_of_class(cm, k):
    """F1 of class ``k``; a zero denominator anywhere yields 0.0."""
    _nonempty(cm)
    if not 0 <= k < cm.num_classes:
        raise LabelError(f"class index {k} outside [0, {cm.num_classes})")
    tp = int(cm.counts[k, k])
    predicted = int(cm.counts[:, k].sum())
    actual = int(cm.counts[k, :].sum())
    precision = tp / predicted if predicted else 0.0
    recall = tp / actual if actual else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def micro_f1(cm):
    """F1 from TP/FP/FN pooled over all classes.

    For single-label data pooled FP and FN both equal ``total - trace``, so
    the result is the accuracy, bit for bit.
    """
    _nonempty(cm)
    c = cm.counts
    tp = int(np.trace(c))
    fp = int(sum(c[:, k].sum() - c[k, k] for k in range(cm.num_classes)))
    fn = int(sum(c[k, :].sum() - c[k, k] for k in range(cm.num_classes)))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def fmt4(x):
    """Four-decimal rendering used in every CSV and console table."""
    return f"{x:.4f}"
