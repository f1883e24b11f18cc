import csv
import itertools

import numpy as np
import pytest

from scipy.integrate import trapezoid

from vesseltwin import metrics as MT

GRID = (0.1, 0.4, 0.5, 0.9)
PAIRS = [(s, y) for s in GRID for y in (0, 1)]
PT_GRID = (0.1, 0.3, 0.5, 0.8)


def datasets(max_n=6):
    """Every dataset of size <= max_n over the score grid, up to reordering."""
    for n in range(1, max_n + 1):
        for combo in itertools.combinations_with_replacement(PAIRS, n):
            yield np.array([c[0] for c in combo]), np.array([c[1] for c in combo])


def brute_auroc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def counts(s, y, t):
    tp = sum(1 for a, b in zip(s, y) if a >= t and b == 1)
    fp = sum(1 for a, b in zip(s, y) if a >= t and b == 0)
    fn = sum(1 for a, b in zip(s, y) if a < t and b == 1)
    tn = len(s) - tp - fp - fn
    return tp, fp, tn, fn


def brute_auprc(s, y):
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        tp, fp, _, _ = counts(s, y, t)
        recall = tp / y.sum()
        total += (recall - prev_recall) * tp / (tp + fp)
        prev_recall = recall
    return total


def test_exhaustive_oracles():
    checked = 0
    for s, y in datasets():
        npos = y.sum()
        if 0 < npos < len(y):
            assert MT.auroc(s, y) == pytest.approx(brute_auroc(s, y), abs=1e-12)
        if npos > 0:
            assert MT.auprc(s, y) == pytest.approx(brute_auprc(s, y), abs=1e-12)
        for t in (0.5, 0.3):
            tp, fp, tn, fn = counts(s, y, t)
            c = MT.confusion_metrics(s, y, threshold=t)
            assert (c.tp, c.fp, c.tn, c.fn) == (tp, fp, tn, fn)
            want_f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
            assert c.f1 == pytest.approx(want_f1, abs=1e-12)
        for pt in PT_GRID:
            tp, fp, _, _ = counts(s, y, pt)
            assert MT.net_benefit(s, pt, y) == pytest.approx(tp / len(s) - fp / len(s) * pt / (1 - pt), abs=1e-12)
        checked += 1
    assert checked > 3000


def test_order_invariance():
    rng = np.random.default_rng(0)
    s = rng.choice(GRID, 8)
    y = np.array([0, 1, 1, 0, 1, 0, 0, 1])
    base = (MT.auroc(s, y), MT.auprc(s, y), MT.confusion_metrics(s, y).f1)
    for _ in range(10):
        p = rng.permutation(8)
        assert (MT.auroc(s[p], y[p]), MT.auprc(s[p], y[p]), MT.confusion_metrics(s[p], y[p]).f1) == base


def test_example_four_cases():
    s, y = np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1])
    assert MT.auroc(s, y) == 0.75
    assert MT.auprc(s, y) == pytest.approx(brute_auprc(s, y), abs=1e-12)
    assert MT.auprc(s, y) == pytest.approx(5 / 6, abs=1e-12)
    c = MT.confusion_metrics(s, y)
    assert (c.tp, c.fn, c.tn, c.fp) == (1, 1, 2, 0) and c.accuracy == 0.75


def test_ties_half():
    assert MT.auroc(np.full(4, 0.3), np.array([0, 1, 0, 1])) == 0.5


def test_example_perfect():
    s, y = np.array([0.9, 0.8, 0.3, 0.1]), np.array([1, 1, 0, 0])
    assert MT.auroc(s, y) == 1.0 and MT.auprc(s, y) == 1.0
    c = MT.confusion_metrics(s, y)
    assert c.accuracy == 1.0 and c.f1 == 1.0
    hard = np.array([1.0, 1.0, 0.0, 0.0])
    for pt in PT_GRID:
        assert MT.net_benefit(hard, pt, y) == pytest.approx(0.5, abs=1e-15)


def test_all_negative_predictions():
    assert MT.confusion_metrics(np.array([0.1, 0.2]), np.array([1, 0])).f1 == 0.0


def test_treat_all_example():
    assert MT.treat_all(0.3, 0.2) == pytest.approx(0.125, abs=1e-15)


def test_threshold_inclusive():
    c = MT.confusion_metrics(np.array([0.5]), np.array([1]))
    assert c.tp == 1


@pytest.mark.parametrize("prev", [0.0, 0.1, 0.3, 0.5, 1.0])
@pytest.mark.parametrize("pt", [0.05, 0.2, 0.5, 0.9])
def test_treat_all_analytic(prev, pt):
    assert MT.treat_all(prev, pt) == pytest.approx(prev - (1 - prev) * pt / (1 - pt), abs=1e-15)
    assert MT.treat_none(pt) == 0.0


def test_treat_all_equals_zero_score_model():
    y = np.array([1, 0, 0, 1, 0, 0, 0, 0, 0, 1])
    for pt in PT_GRID:
        assert MT.net_benefit(np.zeros(10) + 1.0, pt, y) == pytest.approx(MT.treat_all(y.mean(), pt), abs=1e-15)
        assert MT.net_benefit(np.zeros(10), pt, y) == 0.0


def test_random_scores():
    rng = np.random.default_rng(3)
    y = (rng.random(10_000) < 0.2).astype(int)
    s = rng.random(10_000)
    assert MT.auroc(s, y) == pytest.approx(0.5, abs=0.03)
    assert MT.auprc(s, y) == pytest.approx(y.mean(), abs=0.03)


def test_curves():
    s, y = np.array([0.9, 0.4, 0.4, 0.8, 0.1]), np.array([1, 0, 1, 0, 0])
    fpr, tpr, thr = MT.roc_curve(s, y)
    assert (fpr[0], tpr[0]) == (0, 0) and (fpr[-1], tpr[-1]) == (1, 1)
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    assert trapezoid(tpr, fpr) == pytest.approx(MT.auroc(s, y))
    recall, precision, _ = MT.pr_curve(s, y)
    assert recall[-1] == 1.0 and np.all((precision > 0) & (precision <= 1))


@pytest.mark.parametrize("scores,labels", [([], []), ([0.5, 0.2], [1]), ([1.2], [1]), ([np.nan], [0]), ([0.3], [2])])
def test_invalid(scores, labels):
    with pytest.raises(MT.MetricsError):
        MT.EvalSet(scores, labels)


def test_undefined():
    with pytest.raises(MT.MetricsError):
        MT.auroc(np.array([0.2, 0.3]), np.array([1, 1]))
    with pytest.raises(MT.MetricsError):
        MT.auprc(np.array([0.2, 0.3]), np.array([0, 0]))
    with pytest.raises(MT.MetricsError):
        MT.net_benefit(np.array([0.2]), 1.0, np.array([0]))
    out = MT.summary(np.array([0.2, 0.7]), np.array([0, 0]))
    assert np.isnan(out["auroc"]) and np.isnan(out["auprc"]) and out["f1"] == 0.0


def test_csv(tmp_path):
    e = MT.EvalSet([0.9, 0.4, 0.35, 0.8], [1, 0, 1, 0])
    MT.write_roc_csv(e, tmp_path / "roc.csv")
    MT.write_pr_csv(e, tmp_path / "pr.csv")
    MT.write_decision_csv(e, tmp_path / "dc.csv")
    rows = list(csv.DictReader(open(tmp_path / "roc.csv")))
    assert list(rows[0]) == ["threshold", "fpr", "tpr"] and len(rows) == 5
    rows = list(csv.DictReader(open(tmp_path / "dc.csv")))
    assert len(rows) == 99 and float(rows[0]["pt"]) == 0.01
    assert float(rows[49]["treat_all"]) == pytest.approx(0.0)
