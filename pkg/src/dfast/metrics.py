"""Binary classification metrics at a fixed 0.5 threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

THRESHOLD = 0.5
REPORT_COLUMNS = ("model", "accuracy", "auc", "f1", "sensitivity", "specificity", "tp", "fp", "tn", "fn")


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricReport:
    """Undefined ratios (zero denominator, one-class AUC) are ``None``."""

    accuracy: float | None
    auc: float | None
    f1: float | None
    sensitivity: float | None
    specificity: float | None
    tp: int
    fp: int
    tn: int
    fn: int

    def as_row(self, model_id):
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        return [model_id, fmt(self.accuracy), fmt(self.auc), fmt(self.f1), fmt(self.sensitivity),
                fmt(self.specificity), self.tp, self.fp, self.tn, self.fn]


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(int)
    if scores.size == 0:
        raise ContractError("scored set is empty")
    if scores.size != labels.size:
        raise ContractError(f"{scores.size} scores but {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0 or 1")
    return scores, labels


def confusion(scores, labels, threshold=THRESHOLD) -> Confusion:
    """Predicted positive iff score >= threshold."""
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return Confusion(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def auc(scores, labels) -> float:
    """Mann–Whitney AUC: (concordant + ½·tied) / (P·N), via average ranks."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC needs at least one positive and one negative sample")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    # twice the U statistic is an integer, so the division is exact up to rounding
    u2 = 2.0 * ranks[labels == 1].sum() - n_pos * (n_pos + 1)
    return u2 / (2.0 * n_pos * n_neg)


def _ratio(num, den):
    return None if den == 0 else num / den


def report_from_confusion(c: Confusion, auc_value=None) -> MetricReport:
    return MetricReport(
        accuracy=_ratio(c.tp + c.tn, c.total),
        auc=auc_value,
        f1=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        specificity=_ratio(c.tn, c.tn + c.fp),
        tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn,
    )


def summary(scores, labels, threshold=THRESHOLD) -> MetricReport:
    c = confusion(scores, labels, threshold)
    try:
        auc_value = auc(scores, labels)
    except ContractError:
        auc_value = None
    return report_from_confusion(c, auc_value)


def is_undefined(v):
    return v is None or (isinstance(v, float) and math.isnan(v))
