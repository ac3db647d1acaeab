"""Scalar evaluation measures. Class 1 (defective) is the positive class."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ScoreReport:
    """Undefined scores (zero denominators) are ``None``."""

    precision: float | None = None
    recall: float | None = None
    f_measure: float | None = None
    auc: float | None = None
    ppc: float | None = None
    pnpc: float | None = None
    for_rate: float | None = None
    mcc: float | None = None
    ai: float | None = None
    fi: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _labels(v, name) -> np.ndarray:
    a = np.asarray(v).reshape(-1)
    if not np.isin(a, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 labels")
    return a.astype(np.int64)


def confusion_counts(predicted, truth) -> ConfusionCounts:
    p, t = _labels(predicted, "predicted"), _labels(truth, "truth")
    if len(p) != len(t):
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(t)} labels")
    return ConfusionCounts(
        tp=int(np.sum((p == 1) & (t == 1))),
        fp=int(np.sum((p == 1) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
        tn=int(np.sum((p == 0) & (t == 0))),
    )


def _ratio(num, den):
    return num / den if den else None


def mcc_score(c: ConfusionCounts) -> float:
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)


def classification_metrics(c: ConfusionCounts) -> ScoreReport:
    n = c.total
    if n < 1:
        raise ValueError("confusion counts are empty")
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if precision is None or recall is None or precision + recall == 0:
        f = None
    else:
        f = 2 * precision * recall / (precision + recall)
    return ScoreReport(
        precision=precision,
        recall=recall,
        f_measure=f,
        ppc=c.tn / n,
        pnpc=(c.tp + c.fp + c.fn) / n,
        for_rate=_ratio(c.fn, c.tn + c.fn),
        mcc=mcc_score(c),
    )


def auc_score(scores, truth) -> float | None:
    """Mann-Whitney AUC; tied (positive, negative) pairs count one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    t = _labels(truth, "truth")
    if len(s) != len(t):
        raise ValueError("scores and labels differ in length")
    n_pos = int(t.sum())
    n_neg = len(t) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    u = ranks[t == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def coincidence_degree(interpretations: Sequence[Iterable[str]], normalize: str = "k") -> float:
    """Overlap of repeated top-k interpretations of one instance.

    ``normalize="k"`` divides the intersection size by k, so identical sets
    score 1. ``normalize="count"`` divides by the number of interpretations.
    """
    items = [list(s) for s in interpretations]
    sets = [frozenset(s) for s in items]
    sizes = [len(s) for s in items]
    if len(sets) < 2:
        raise ValueError("coincidence degree needs at least two interpretations")
    if len(set(sizes)) != 1 or sizes[0] < 1 or any(len(s) != k for s, k in zip(sets, sizes)):
        raise ValueError(f"interpretations must be non-empty sets of equal size, got sizes {sizes}")
    common = len(frozenset.intersection(*sets))
    if normalize == "k":
        return common / sizes[0]
    if normalize == "count":
        return common / len(sets)
    raise ValueError(f"unknown normalisation {normalize!r}")


def top_k_count(percent: float, n_metrics: int) -> int:
    """Number of metrics in a CD-k% comparison."""
    return max(1, math.ceil(percent / 100.0 * n_metrics))


def _agreement(a, b) -> float:
    a, b = _labels(a, "labels"), _labels(b, "labels")
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("need at least one label")
    return float(np.mean(a == b))


def fidelity_fi(f_labels, g_labels) -> float:
    """Share of instances where predictor and interpreter agree."""
    return _agreement(f_labels, g_labels)


def accuracy_ai(g_labels, truth) -> float:
    """Share of instances where the interpreter matches the ground truth."""
    return _agreement(g_labels, truth)


def effect_band(d: float) -> str:
    m = abs(d)
    if m < 0.2:
        return "small"
    if m < 0.8:
        return "medium"
    return "large"


def cohens_d(group1, group2) -> tuple[float | None, str | None]:
    a = np.asarray(group1, dtype=np.float64)
    b = np.asarray(group2, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two values")
    sd1, sd2 = a.std(), b.std()
    if sd1 == 0 and sd2 == 0:
        return None, None
    d = float((a.mean() - b.mean()) / math.sqrt((sd1**2 + sd2**2) / 2))
    return d, effect_band(d)


def score_predictions(
    truth, f_labels, f_scores=None, g_labels=None
) -> ScoreReport:
    """Full report for a predictor, with AI/FI when interpreter labels are given."""
    report = classification_metrics(confusion_counts(f_labels, truth))
    extra = {}
    if f_scores is not None:
        extra["auc"] = auc_score(f_scores, truth)
    if g_labels is not None:
        extra["ai"] = accuracy_ai(g_labels, truth)
        extra["fi"] = fidelity_fi(f_labels, g_labels)
    return ScoreReport(**{**report.to_dict(), **extra})
