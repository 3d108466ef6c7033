"""Binary classification metrics.

The positive class is always "violation". Balanced accuracy is the mean of
sensitivity and specificity; ROC-AUC uses the Mann-Whitney rank statistic
(exact, ties get half credit) rather than curve integration.

Metrics with an undefined denominator raise UndefinedMetricError instead of
silently returning 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UndefinedMetricError(ValueError):
    """A metric's denominator is zero for the given data."""


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_from_scores(scores, labels, threshold: float = 0.5) -> Confusion:
    """Threshold probability scores (predict positive when score >= t)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    pred = s >= threshold
    return Confusion(
        tp=int(np.sum(pred & y)),
        fp=int(np.sum(pred & ~y)),
        tn=int(np.sum(~pred & ~y)),
        fn=int(np.sum(~pred & y)),
    )


def balanced_accuracy(c: Confusion) -> float:
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise UndefinedMetricError("balanced accuracy needs both classes present")
    sensitivity = c.tp / (c.tp + c.fn)
    specificity = c.tn / (c.tn + c.fp)
    return (sensitivity + specificity) / 2.0


def accuracy(c: Confusion) -> float:
    if c.total == 0:
        raise UndefinedMetricError("accuracy undefined on an empty sample")
    return (c.tp + c.tn) / c.total


def f1(c: Confusion) -> float:
    if 2 * c.tp + c.fp + c.fn == 0:
        raise UndefinedMetricError("F1 undefined without positives in labels or predictions")
    return 2 * c.tp / (2 * c.tp + c.fp + c.fn)


def roc_auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 * P(tie), via midranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC-AUC needs both classes present")

    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[y].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def summarize(scores, labels, threshold: float = 0.5) -> dict[str, float]:
    """The four headline metrics in one dict (keys: bal_acc, acc, f1, roc_auc)."""
    c = confusion_from_scores(scores, labels, threshold)
    return {
        "bal_acc": balanced_accuracy(c),
        "acc": accuracy(c),
        "f1": f1(c),
        "roc_auc": roc_auc(scores, labels),
    }
