import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu
from sklearn.metrics import roc_auc_score

from ramanfuse.errors import DataError
from ramanfuse.models.metrics import (
    TABLE_COLUMNS, confusion, cross_validate, evaluate_scores, format_mean_std, prf, roc_auc, roc_curve,
    write_forest_csv, write_performance_csv,
)

from oracles import pairwise_auc


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(4, 60))
def test_auc_equals_pairwise_oracle(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    s = np.round(rng.random(n), 1)  # coarse rounding forces ties
    assert roc_auc(y, s) == pytest.approx(pairwise_auc(y, s), abs=1e-12)


def test_auc_matches_mann_whitney_and_sklearn(rng):
    y = rng.integers(0, 2, 200)
    s = rng.random(200)
    u = mannwhitneyu(s[y == 1], s[y == 0]).statistic
    auc = roc_auc(y, s)
    assert auc == pytest.approx(u / ((y == 1).sum() * (y == 0).sum()), abs=1e-9)
    assert auc == pytest.approx(roc_auc_score(y, s), abs=1e-12)


def test_roc_curve_endpoints_and_monotone(rng):
    y = rng.integers(0, 2, 50)
    y[:2] = [0, 1]
    pts = roc_curve(y, rng.random(50))
    assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)
    assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)
    with pytest.raises(DataError):
        roc_curve([1, 1], [0.2, 0.3])


def test_perfect_and_inverted_auc():
    y = np.array([0, 0, 1, 1])
    assert roc_auc(y, [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert roc_auc(y, [0.9, 0.8, 0.2, 0.1]) == 0.0
    assert roc_auc(y, [0.5] * 4) == 0.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_prf_matches_confusion_arithmetic(pairs):
    y, yhat = np.array(pairs).T
    tp, fp, fn, tn = confusion(y, yhat)
    assert tp + fp + fn + tn == len(pairs)
    p, r, f1 = prf(tp, fp, fn)
    assert p == (tp / (tp + fp) if tp + fp else 0.0)
    assert r == (tp / (tp + fn) if tp + fn else 0.0)
    assert f1 == (2 * p * r / (p + r) if p + r else 0.0)


def test_evaluate_scores_fields():
    y = np.array([1, 1, 0, 0, 1])
    s = np.array([0.9, 0.4, 0.6, 0.1, 0.7])
    r = evaluate_scores(y, s, 0.5)
    assert r.confusion == (2, 1, 1, 1)
    assert r.accuracy == pytest.approx(3 / 5)
    assert r.per_class[0] == prf(1, 1, 1)
    assert r.auc == pytest.approx(pairwise_auc(y, s))
    single = evaluate_scores(np.ones(3), np.array([0.2, 0.6, 0.9]))
    assert single.auc is None and single.auc_reason


def test_loocv_runs_n_folds():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(20)
    y = (x > 0).astype(int)
    calls = []

    def fit_predict(tr, te):
        calls.append((tr, te))
        assert te.size == 1 and te[0] not in tr and tr.size == 19
        return (x[te] > 0).astype(float)

    res = cross_validate(fit_predict, y, [np.array([i]) for i in range(20)], scheme="loocv")
    assert len(res) == 20 == len(calls)
    assert res.pooled.auc == 1.0 and res.mean["accuracy"] == 1.0
    # single-sample folds have no AUC, so the per-fold mean is undefined
    assert np.isnan(res.mean["auc"])


def test_cross_validate_independent_of_jobs():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(60)
    y = (x + rng.standard_normal(60) > 0).astype(int)
    folds = [np.arange(i, 60, 5) for i in range(5)]

    def fit_predict(tr, te):
        w = np.polyfit(x[tr], y[tr], 1)
        return np.polyval(w, x[te])

    a = cross_validate(fit_predict, y, folds, jobs=1)
    b = cross_validate(fit_predict, y, folds, jobs=2)
    assert a.mean == b.mean and a.std == b.std
    vals = [f.accuracy for f in a.folds]
    assert a.std["accuracy"] == pytest.approx(np.std(vals, ddof=1))


def test_performance_csv_column_order(tmp_path):
    r = evaluate_scores([0, 1, 1, 0], [0.2, 0.7, 0.4, 0.1])
    write_performance_csv(tmp_path / "p.csv", [("Early fusion", r)])
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert tuple(rows[0]) == TABLE_COLUMNS == ("Model", "Accuracy", "Precision", "Recall", "AUC", "F1 Score")
    assert rows[1][0] == "Early fusion" and float(rows[1][1]) == pytest.approx(0.75)


def test_forest_csv_layout(tmp_path):
    r = evaluate_scores([0, 1, 1, 0], [0.2, 0.7, 0.4, 0.1])
    r.cv_mean, r.cv_std = {"accuracy": 0.8132}, {"accuracy": 0.0571}
    write_forest_csv(tmp_path / "f.csv", [("RF Both", r, {0: "Control", 1: "CRC"})])
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[1][:2] == ["RF Both", "Control"] and rows[1][5] == "75.00%" and rows[1][6] == "0.81 ± 0.057"
    assert rows[2][:2] == ["RF Both", "CRC"] and rows[2][5] == ""


def test_format_mean_std():
    assert format_mean_std(0.81, 0.0571) == "0.81 ± 0.057"
    assert format_mean_std(float("nan"), 0.1) == "n/a"
