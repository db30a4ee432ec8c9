"""
Pixel-level scoring of predicted iris masks. Iris (label 1) is the positive class.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from django.core.exceptions import ValidationError


@dataclass(frozen=True)
class PixelCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValidationError("Pixel counts must be non-negative.")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return PixelCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


@dataclass(frozen=True)
class EvalRecord:
    """
    Scores of one test image. ``precision``, ``recall`` and ``f1`` are
    ``None`` where their denominator vanishes.
    """
    sample_id: str
    counts: PixelCounts
    e: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    dataset: str = ''

    @property
    def f1_defined(self):
        return self.f1 is not None


def _check_sizes(pred, truth):
    if pred.size != truth.size:
        raise ValidationError(
            f"Prediction is {pred.width}x{pred.height} but ground truth is {truth.width}x{truth.height}."
        )


def confusion_counts(pred, truth):
    _check_sizes(pred, truth)
    p = pred.labels.astype(bool)
    t = truth.labels.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return PixelCounts(tp=tp, fp=fp, tn=p.size - tp - fp - fn, fn=fn)


def segmentation_error(pred, truth):
    """
    Fraction of pixels where prediction and ground truth disagree (mean XOR).

    Raises:
        ValidationError: If the masks differ in size.
    """
    _check_sizes(pred, truth)
    return float(np.count_nonzero(pred.labels != truth.labels)) / pred.labels.size


def precision_recall(counts):
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else None
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else None
    return precision, recall


def f1_score(counts):
    """
    Harmonic mean of precision and recall, or ``None`` when the prediction or
    the ground truth has no iris pixel, or both ratios are zero.
    """
    precision, recall = precision_recall(counts)
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def evaluate_sample(sample_id, pred, truth, dataset=''):
    counts = confusion_counts(pred, truth)
    precision, recall = precision_recall(counts)
    return EvalRecord(
        sample_id=sample_id,
        counts=counts,
        e=(counts.fp + counts.fn) / counts.total,
        precision=precision,
        recall=recall,
        f1=f1_score(counts),
        dataset=dataset,
    )
