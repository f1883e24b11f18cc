"""Classification metrics: ROC/AUROC, PR/AUPRC, confusion counts and decision curves."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

THRESHOLD = 0.5
DECISION_GRID = np.round(np.arange(1, 100) / 100, 2)


class MetricsError(ValueError):
    pass


@dataclass
class EvalSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.labels = np.asarray(self.labels).astype(int)
        if self.scores.ndim != 1 or self.scores.shape != self.labels.shape:
            raise MetricsError("scores and labels must be 1-d with equal lengths")
        if len(self.scores) < 1:
            raise MetricsError("empty evaluation set")
        if not np.all(np.isfinite(self.scores)) or np.any((self.scores < 0) | (self.scores > 1)):
            raise MetricsError("scores must be finite and in [0, 1]")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise MetricsError("labels must be 0 or 1")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def prevalence(self) -> float:
        return float(self.labels.mean())


def _as_set(e, labels=None) -> EvalSet:
    return e if isinstance(e, EvalSet) else EvalSet(e, labels)


def auroc(e: EvalSet | np.ndarray, labels=None) -> float:
    """P(random positive outranks random negative), ties counted 1/2 (midranks)."""
    e = _as_set(e, labels)
    pos = e.labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUROC needs both classes")
    ranks = rankdata(e.scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _tie_groups(e: EvalSet):
    """Cumulative (TP, FP) after each descending-score tie group."""
    order = np.argsort(-e.scores, kind="stable")
    s, y = e.scores[order], e.labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    return s[last], tp, fp


def roc_curve(e: EvalSet | np.ndarray, labels=None):
    """(fpr, tpr, thresholds) starting at (0, 0); one point per distinct score."""
    e = _as_set(e, labels)
    n_pos, n_neg = int(e.labels.sum()), int(e.n - e.labels.sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("ROC needs both classes")
    thr, tp, fp = _tie_groups(e)
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, thr]


def pr_curve(e: EvalSet | np.ndarray, labels=None):
    """(recall, precision, thresholds), one point per distinct score."""
    e = _as_set(e, labels)
    n_pos = int(e.labels.sum())
    if n_pos == 0:
        raise MetricsError("PR curve needs at least one positive")
    thr, tp, fp = _tie_groups(e)
    return tp / n_pos, tp / (tp + fp), thr


def auprc(e: EvalSet | np.ndarray, labels=None) -> float:
    """Step-curve area: sum over tie groups of (recall gain) x precision."""
    recall, precision, _ = pr_curve(e, labels)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / (self.tp + self.fp + self.tn + self.fn)

    @property
    def f1(self) -> float:
        den = 2 * self.tp + self.fp + self.fn
        return 0.0 if den == 0 else 2 * self.tp / den

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "f1": self.f1, "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion_metrics(e: EvalSet | np.ndarray, labels=None, threshold: float = THRESHOLD) -> Confusion:
    """Counts with positive prediction at score >= threshold."""
    e = _as_set(e, labels)
    pred = e.scores >= threshold
    y = e.labels == 1
    return Confusion(int(np.sum(pred & y)), int(np.sum(pred & ~y)), int(np.sum(~pred & ~y)), int(np.sum(~pred & y)))


def _check_pt(pt: float) -> None:
    if not 0 < pt < 1:
        raise MetricsError(f"threshold probability {pt} not in (0, 1)")


def net_benefit(e: EvalSet | np.ndarray, pt: float, labels=None) -> float:
    """TP/n - FP/n * pt/(1-pt), treating cases with score >= pt."""
    _check_pt(pt)
    e = _as_set(e, labels)
    c = confusion_metrics(e, threshold=pt)
    return c.tp / e.n - c.fp / e.n * pt / (1 - pt)


def treat_all(prevalence: float, pt: float) -> float:
    _check_pt(pt)
    return prevalence - (1 - prevalence) * pt / (1 - pt)


def treat_none(pt: float) -> float:
    _check_pt(pt)
    return 0.0


def decision_curve(e: EvalSet | np.ndarray, labels=None, grid=DECISION_GRID) -> list[dict]:
    e = _as_set(e, labels)
    return [
        {"pt": float(pt), "model": net_benefit(e, pt), "treat_all": treat_all(e.prevalence, pt), "treat_none": 0.0}
        for pt in grid
    ]


def summary(e: EvalSet | np.ndarray, labels=None, threshold: float = THRESHOLD) -> dict:
    """AUROC, AUPRC and thresholded metrics; undefined rank metrics become NaN."""
    e = _as_set(e, labels)
    out = {"n": e.n, "prevalence": e.prevalence}
    try:
        out["auroc"] = auroc(e)
    except MetricsError:
        out["auroc"] = float("nan")
    try:
        out["auprc"] = auprc(e)
    except MetricsError:
        out["auprc"] = float("nan")
    out.update(confusion_metrics(e, threshold=threshold).as_dict())
    return out


def _write(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_roc_csv(e: EvalSet, path) -> None:
    fpr, tpr, thr = roc_curve(e)
    _write(path, ["threshold", "fpr", "tpr"], zip(thr, fpr, tpr))


def write_pr_csv(e: EvalSet, path) -> None:
    recall, precision, thr = pr_curve(e)
    _write(path, ["threshold", "recall", "precision"], zip(thr, recall, precision))


def write_decision_csv(e: EvalSet, path, grid=DECISION_GRID) -> None:
    rows = decision_curve(e, grid=grid)
    _write(path, ["pt", "model", "treat_all", "treat_none"], ([r["pt"], r["model"], r["treat_all"], r["treat_none"]] for r in rows))
