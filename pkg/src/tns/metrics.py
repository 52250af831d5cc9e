"""Accuracy, average precision, ROC AUC and Kendall's tau-b."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


class UndefinedMetricError(DataError):
    """AP/AUC requested on single-class labels; ``accuracy`` is still attached."""

    def __init__(self, msg, accuracy=None):
        super().__init__(msg)
        self.accuracy = accuracy


@dataclass
class MetricReport:
    accuracy: float
    average_precision: float | None
    roc_auc: float | None
    losses: list = field(default_factory=list)
    sample_ids: list = field(default_factory=list)

    def to_dict(self):
        return {"accuracy": self.accuracy, "ap": self.average_precision,
                "auc": self.roc_auc, "n": len(self.losses)}


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if scores.shape != labels.shape:
        raise DataError(f"{len(scores)} scores vs {len(labels)} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("labels must be binary (0/1)")
    return scores, labels


def accuracy(scores, labels, threshold=0.5):
    scores, labels = _check(scores, labels)
    return float(np.mean((scores >= threshold) == (labels == 1))) if len(scores) else float("nan")


def average_precision(scores, labels):
    """Sum over distinct thresholds of (recall step) x precision; ties share a threshold."""
    scores, labels = _check(scores, labels)
    n_pos = labels.sum()
    if n_pos == 0 or n_pos == len(labels):
        raise UndefinedMetricError("average precision needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = tp[last]
    precision = tp / (last + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def roc_auc(scores, labels):
    """Mann-Whitney statistic; tied positive/negative pairs count 1/2."""
    scores, labels = _check(scores, labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def compute_metrics(scores, labels, strict=True):
    """Accuracy at 0.5, AP and AUC.

    With ``strict=False`` single-class inputs give ``None`` for AP/AUC instead
    of raising.
    """
    acc = accuracy(scores, labels)
    try:
        ap = average_precision(scores, labels)
        auc = roc_auc(scores, labels)
    except UndefinedMetricError as e:
        if strict:
            raise UndefinedMetricError(str(e), accuracy=acc) from None
        ap = auc = None
    return MetricReport(acc, ap, auc)


# -- rank correlation ----------------------------------------------------------

def _inversions(seq):
    """Number of pairs i < j with seq[i] > seq[j] (merge sort)."""
    seq = list(seq)
    n = len(seq)
    count = 0
    width = 1
    buf = seq[:]
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if seq[j] < seq[i]:
                    buf[k] = seq[j]
                    count += mid - i
                    j += 1
                else:
                    buf[k] = seq[i]
                    i += 1
                k += 1
            buf[k:hi] = seq[i:mid] if i < mid else seq[j:hi]
        seq, buf = buf, seq
        width *= 2
    return count


def _tie_pairs(x):
    _, c = np.unique(x, return_counts=True, axis=0)
    c = c.astype(np.int64)
    return int(np.sum(c * (c - 1) // 2))


def tau_counts(a, b):
    """``(C - D, n0, ties_a, ties_b)`` as exact integers."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = len(a)
    order = np.lexsort((b, a))
    D = _inversions(b[order].tolist())
    n0 = n * (n - 1) // 2
    t_a = _tie_pairs(a)
    t_b = _tie_pairs(b)
    t_ab = _tie_pairs(np.column_stack([a, b]))
    return n0 - t_a - t_b + t_ab - 2 * D, n0, t_a, t_b


def kendall_tau(a, b):
    """Kendall's tau-b between two aligned value (or rank) sequences."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DataError("sequences must have equal length")
    if len(a) < 2:
        raise DataError("kendall_tau needs at least 2 samples")
    s, n0, t_a, t_b = tau_counts(a, b)
    denom = (n0 - t_a) * (n0 - t_b)
    if denom == 0:
        raise DataError("kendall_tau undefined when one sequence is constant")
    return s / math.sqrt(denom)


def loss_order_agreement(losses_a, losses_b):
    """Tau between two ``{sample_id: loss}`` maps over the same sample ids."""
    if set(losses_a) != set(losses_b):
        raise DataError("loss dumps cover different sample ids")
    ids = sorted(losses_a)
    return kendall_tau([losses_a[i] for i in ids], [losses_b[i] for i in ids])
