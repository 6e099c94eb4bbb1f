"""Evaluation metrics: association AP/mAP, binary accuracy, ZSL accuracy, PR curves.

Rankings sort by descending score with ties broken by original position, so
every metric is deterministic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .relations import UNKNOWN

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    ap: float

    @property
    def points(self):
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def _ranking(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores and labels must be parallel 1-D sequences")
    order = np.argsort(-scores, kind="stable")
    return scores[order], labels[order]


def average_precision(scores, labels) -> float:
    """Non-interpolated AP: mean of precision@rank over the positive items."""
    _, ranked = _ranking(scores, labels)
    n_pos = ranked.sum()
    if n_pos == 0:
        raise DataError("average precision is undefined without positives")
    hits = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    # fsum: correctly rounded, so the value does not depend on summation order
    return math.fsum((hits / ranks)[ranked == 1].tolist()) / int(n_pos)


def mean_ap(score_rows, label_rows) -> float:
    """Unweighted mean of per-row AP; rows without positives are skipped.

    ``label_rows`` may contain ``UNKNOWN`` cells, which are left out of the
    ranking of their row.
    """
    aps = []
    for i, (s, y) in enumerate(zip(score_rows, label_rows)):
        s, y = np.asarray(s, dtype=np.float64), np.asarray(y)
        known = y != UNKNOWN
        if not np.any(y[known] == 1):
            log.warning("row %d has no positive labels; excluded from mAP", i)
            continue
        aps.append(average_precision(s[known], y[known]))
    if not aps:
        raise DataError("no row has a positive label")
    return float(np.mean(aps))


def binary_accuracy(predicted, truth) -> float:
    """Fraction of matching cells, counting only cells whose truth is known."""
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape:
        raise DataError(f"shape mismatch {predicted.shape} vs {truth.shape}")
    known = truth != UNKNOWN
    if not known.any():
        raise DataError("no known truth cells")
    return float(np.mean(predicted[known] == truth[known]))


def mean_per_class_accuracy(predicted, true, classes=None) -> float:
    return per_class_accuracy(predicted, true, classes)[0]


def per_class_accuracy(predicted, true, classes=None):
    """Returns ``(mean, {class: accuracy})`` over classes that have images."""
    predicted, true = list(predicted), list(true)
    if len(predicted) != len(true):
        raise DataError("prediction and truth lengths differ")
    if classes is None:
        classes = sorted(set(true), key=true.index)
    per_class = {}
    for c in classes:
        idx = [i for i, t in enumerate(true) if t == c]
        if not idx:
            log.warning("class %r has no images; excluded from accuracy", c)
            continue
        per_class[c] = sum(predicted[i] == c for i in idx) / len(idx)
    if not per_class:
        raise DataError("no class has images")
    return float(np.mean(list(per_class.values()))), per_class


def pr_curve(scores, labels) -> PRCurve:
    """One (recall, precision) point per distinct score, thresholds descending."""
    s, y = _ranking(scores, labels)
    if y.sum() == 0:
        raise DataError("precision-recall is undefined without positives")
    tp = np.cumsum(y)
    n = np.arange(1, len(y) + 1)
    # last position of each run of equal scores
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    return PRCurve(
        thresholds=s[last],
        precision=tp[last] / n[last],
        recall=tp[last] / y.sum(),
        ap=average_precision(scores, labels),
    )
