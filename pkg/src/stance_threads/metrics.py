"""Classification metrics over the fixed four-label set."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import LengthMismatch
from .thread_model import N_LABELS

K = N_LABELS


def _as_int(labels) -> np.ndarray:
    return np.asarray([int(y) for y in labels], dtype=int)


def _check(gold, pred):
    g, p = _as_int(gold), _as_int(pred)
    if g.shape != p.shape:
        raise LengthMismatch(f"{g.shape[0]} gold labels vs {p.shape[0]} predictions")
    return g, p


def confusion_counts(gold, pred) -> np.ndarray:
    g, p = _check(gold, pred)
    counts = np.zeros((K, K), dtype=int)
    np.add.at(counts, (g, p), 1)
    return counts


def per_class_prf(gold, pred) -> np.ndarray:
    """(4, 3) array of precision, recall, F1; any 0/0 is taken as 0."""
    counts = confusion_counts(gold, pred)
    tp = np.diag(counts).astype(float)
    pred_tot = counts.sum(axis=0)
    gold_tot = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(gold_tot > 0, tp / gold_tot, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    return np.stack([precision, recall, f1], axis=1)


def macro_f1(gold, pred) -> float:
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold labels vs {len(pred)} predictions")
    return float(per_class_prf(gold, pred)[:, 2].mean())


def confusion(gold, pred) -> np.ndarray:
    """Row-normalized confusion matrix (rows: gold, columns: predicted)."""
    counts = confusion_counts(gold, pred).astype(float)
    rows = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)


@dataclass(frozen=True)
class McNemarResult:
    b: int
    c: int
    statistic: float
    p_value: float

    def to_dict(self) -> dict:
        return {"b": self.b, "c": self.c, "statistic": self.statistic, "p_value": self.p_value}


def chi2_sf_1df(x: float) -> float:
    """Survival function of the chi-square distribution with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


def mcnemar_from_counts(b: int, c: int) -> McNemarResult:
    if b + c == 0:
        return McNemarResult(b, c, 0.0, 1.0)
    stat = max(abs(b - c) - 1, 0) ** 2 / (b + c)
    return McNemarResult(b, c, float(stat), chi2_sf_1df(stat))


def mcnemar(gold: Sequence, pred_a: Sequence, pred_b: Sequence) -> McNemarResult:
    """Continuity-corrected McNemar test on the discordant pairs of two classifiers."""
    g, a = _check(gold, pred_a)
    _, bb = _check(gold, pred_b)
    ok_a, ok_b = a == g, bb == g
    return mcnemar_from_counts(int(np.sum(ok_a & ~ok_b)), int(np.sum(~ok_a & ok_b)))
