"""Acceptance suite: one test per criterion, each with its stated tolerance and time budget.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion with the measured quantities.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from ramanfuse import cli
from ramanfuse.config import load_config, preprocess_config
from ramanfuse.dataset import GRID, SignalSpec, assemble, generate_synthetic, make_splits, prepare_matrices
from ramanfuse.explain import lime_explain, shap_exact, shap_kernel
from ramanfuse.meta import ExclusionPolicy, apply_exclusions
from ramanfuse.models import default_model, train
from ramanfuse.models.forest import train_forest
from ramanfuse.models.metrics import confusion, cross_validate, prf, roc_auc
from ramanfuse.pipeline import build_model, forest_config, train_config
from ramanfuse.spectra import (
    Spectrum, Stage, cosmic_threshold, despike, flagged_samples, normalize_to_phenylalanine, preprocess_many,
    quality_control, savgol_coeffs, savgol_smooth,
)

from oracles import (
    SMALL, designed_linear, despike_reference, ls_central_weights, numeric_gradient_error, pairwise_auc,
)

GOLDEN = Path(__file__).parent / "golden"
DEMO_INI = Path(__file__).parents[1] / "configs" / "demo.ini"
FUSION = ("early", "joint", "late")


class Budget:
    """Wall-clock budget for one criterion."""

    def __init__(self, seconds):
        self.seconds = seconds
        self.t0 = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.t0

    def check(self, record):
        record("runtime_s", f"{self.elapsed:.1f}")
        assert self.elapsed < self.seconds, f"took {self.elapsed:.1f} s, budget {self.seconds} s"


def _normalized(y):
    return Spectrum("S", 0, GRID, y, stage=Stage.DESPIKED)


# --- preprocessing -----------------------------------------------------------------


@pytest.mark.criterion(1, "Savitzky-Golay polynomial reproduction")
def test_c01_savgol_polynomial_reproduction(record_property):
    budget = Budget(1.0)
    rng = np.random.default_rng(1)
    t = np.linspace(-1.0, 1.0, GRID.size)
    worst = 0.0
    for m in (2, 3, 4):
        for order in (2, 3):
            for degree in range(order + 1):
                for _ in range(5):
                    y = np.polyval(rng.normal(size=degree + 1) * 10, t)
                    out = savgol_smooth(y, m, order)
                    worst = max(worst, float(np.max(np.abs(out[m:-m] - y[m:-m]))))
    record_property("max_abs_err", f"{worst:.2e}")
    assert worst < 1e-9
    budget.check(record_property)


@pytest.mark.criterion(2, "preprocessing oracle suite")
def test_c02_preprocessing_oracles(record_property):
    budget = Budget(10.0)
    w_err = float(np.max(np.abs(savgol_coeffs(2, 2) - ls_central_weights(2, 2))))
    record_property("sg_weight_err", f"{w_err:.1e}")
    assert w_err < 1e-12

    rng = np.random.default_rng(2)
    mismatches = 0
    for _ in range(1000):
        y = rng.gamma(3.0, 100.0, GRID.size)
        y[rng.integers(0, GRID.size, rng.integers(0, 6))] += rng.uniform(2e3, 2e4)
        T = cosmic_threshold(y, 8.0)
        out, idx = despike(y, T)
        ref = despike_reference(y, T)
        mismatches += int(not np.array_equal(out, ref)) + int(not np.array_equal(idx, np.flatnonzero(y >= T)))
    record_property("despike_mismatches", mismatches)
    assert mismatches == 0

    worst = 0.0
    for _ in range(200):
        y = rng.random(GRID.size) + 0.05
        a = 10 ** rng.uniform(-3, 4)
        n1 = normalize_to_phenylalanine(_normalized(y), (995, 1010), 1.0).intensities
        n2 = normalize_to_phenylalanine(_normalized(a * y), (995, 1010), 1.0).intensities
        worst = max(worst, float(np.max(np.abs(n1 - n2) / np.maximum(1.0, np.abs(n1)))))
    record_property("norm_invariance_err", f"{worst:.1e}")
    assert worst < 1e-12
    budget.check(record_property)


@pytest.mark.criterion(3, "QC recovery of planted outliers")
def test_c03_qc_recovery(record_property):
    budget = Budget(30.0)
    syn = generate_synthetic(600, SignalSpec.default(), seed=0)
    assert len(syn.outliers) == 30
    pp = preprocess_many(syn.spectra, preprocess_config(load_config()))
    _, recs = quality_control(pp, {r.patient_id: str(r.diagnosis) for r in syn.records}, 3.0)
    flagged = flagged_samples(recs)
    tp = len(flagged & syn.outliers)
    precision, recall = tp / max(len(flagged), 1), tp / len(syn.outliers)
    record_property("precision", f"{precision:.3f}")
    record_property("recall", f"{recall:.3f}")
    assert precision == 1.0 and recall == 1.0
    budget.check(record_property)


# --- models -------------------------------------------------------------------------


@pytest.mark.criterion(4, "gradient check for every fusion variant")
def test_c04_gradient_check(record_property):
    budget = Budget(60.0)
    rng = np.random.default_rng(4)
    xs, xm = rng.standard_normal((5, 40)), rng.standard_normal((5, 15))
    y = np.array([1, 0, 1, 1, 0.0])[:, None]
    errs = {v: numeric_gradient_error(default_model(v, 40, 15, seed=7, hidden=SMALL), xs, xm, y) for v in FUSION}
    for v, e in errs.items():
        record_property(v, f"{e:.1e}")
    assert max(errs.values()) < 1e-4
    budget.check(record_property)


def benchmark_cohort(n, signal, seed, task="polyp_vs_control"):
    """Synthesize, preprocess, QC and assemble a cohort the way the pipeline does."""
    syn = generate_synthetic(n, signal, seed)
    pp = preprocess_many(syn.spectra, preprocess_config(load_config()))
    kept_spectra, recs = quality_control(pp, {r.patient_id: str(r.diagnosis) for r in syn.records}, 3.0)
    kept, _ = apply_exclusions(syn.records, ExclusionPolicy())
    return assemble(kept_spectra, kept, task, "unbalanced", seed, flagged_samples(recs))


def benchmark_aucs(c, seed, models):
    """Held-out AUC of each named model plus a logistic-regression probe on the combined layout."""
    cfg = load_config()
    plan = make_splits(c, 5, seed)
    M, y = prepare_matrices(c, plan.train), c.labels
    fit_rows = np.concatenate([plan.train, plan.val])
    probe = LogisticRegression(C=0.1, max_iter=5000).fit(M.combined()[fit_rows], y[fit_rows])
    out = {"probe": roc_auc(y[plan.test], probe.decision_function(M.combined()[plan.test]))}
    for name in models:
        if name == "forest":
            p = train_forest(M.spectra, y, fit_rows, forest_config(cfg)).predict_proba(M.spectra[plan.test])
        else:
            model = build_model(cfg, name, M.spectra.shape[1], M.meta.shape[1], seed)
            model = train(model, M.spectra, M.meta, y, plan.train, plan.val, train_config(cfg))
            p = model.predict_proba(M.spectra[plan.test], M.meta[plan.test])
        out[name] = roc_auc(y[plan.test], p)
    return out


@pytest.mark.slow
@pytest.mark.criterion(5, "separability benchmark and null-signal control")
def test_c05_separability(record_property):
    budget = Budget(600.0)
    sep = benchmark_aucs(benchmark_cohort(400, SignalSpec.separable(), 0), 0, FUSION)
    for k, v in sep.items():
        record_property(f"separable_{k}", f"{v:.3f}")
    null = [benchmark_aucs(benchmark_cohort(600, SignalSpec.null(), s), s, FUSION) for s in range(5)]
    null_mean = {v: float(np.mean([r[v] for r in null])) for v in FUSION}
    for k, v in null_mean.items():
        record_property(f"null_{k}", f"{v:.3f}")
    assert sep["probe"] >= 0.95
    assert all(sep[v] >= 0.95 for v in FUSION)
    assert all(abs(m - 0.5) <= 0.07 for m in null_mean.values())
    budget.check(record_property)


C6_N = 2000
C6_SEEDS = (0, 1, 2)
C6_SIGNAL = SignalSpec.split(1.5, 1.8)
SINGLE_MODALITY = ("spectra_only", "meta_only", "vanilla", "forest")


@pytest.mark.slow
@pytest.mark.criterion(6, "fusion beats the best single-modality model by 0.03")
def test_c06_fusion_gain(record_property):
    runs = [benchmark_aucs(benchmark_cohort(C6_N, C6_SIGNAL, s), s, ("early", "joint") + SINGLE_MODALITY)
            for s in C6_SEEDS]
    mean = {k: float(np.mean([r[k] for r in runs])) for k in runs[0]}
    for k, v in mean.items():
        record_property(k, f"{v:.3f}")
    best_single = max(mean[k] for k in SINGLE_MODALITY)
    gains = {v: mean[v] - best_single for v in ("early", "joint")}
    record_property("gain_early", f"{gains['early']:.3f}")
    record_property("gain_joint", f"{gains['joint']:.3f}")
    assert min(gains.values()) >= 0.03


# --- explanations -------------------------------------------------------------------


@pytest.mark.criterion(7, "SHAP exactness")
def test_c07_shap_exactness(record_property):
    budget = Budget(120.0)
    rng = np.random.default_rng(7)
    kernel_err = 0.0
    for m in range(2, 11):
        W = rng.normal(size=(m, 4))

        def f(X, W=W):
            return 1.0 / (1.0 + np.exp(-np.tanh(X @ W).sum(axis=1) - 0.3 * X[:, 0] * X[:, -1]))

        x, bg = rng.normal(size=m), rng.normal(size=(20, m))
        k = shap_kernel(f, x, bg, n_samples=max(2**m, 2 * m + 2))
        e = shap_exact(f, x, bg)
        kernel_err = max(kernel_err, float(np.max(np.abs(np.array(list(k.scores.values()))
                                                          - np.array(list(e.scores.values()))))))
    record_property("kernel_vs_exact", f"{kernel_err:.1e}")

    linear_err, eff_exact = 0.0, 0.0
    for m in (3, 8, 14):
        w, x, b = rng.normal(size=m), rng.normal(size=m), rng.normal(size=m)
        a = shap_exact(lambda X, w=w: X @ w, x, b[None, :])
        linear_err = max(linear_err, float(np.max(np.abs(np.array(list(a.scores.values())) - w * (x - b)))))
        W = rng.normal(size=(m, 3))

        def g(X, W=W):
            return np.sin(X @ W).prod(axis=1)

        ex = shap_exact(g, x, rng.normal(size=(10, m)))
        eff_exact = max(eff_exact, abs(ex.total() - float(g(x[None, :])[0])))
    record_property("linear_err", f"{linear_err:.1e}")
    record_property("efficiency_exact", f"{eff_exact:.1e}")

    W = rng.normal(size=(40, 5))

    def h(X):
        return 1.0 / (1.0 + np.exp(-np.tanh(X @ W).sum(axis=1)))

    x = rng.normal(size=40)
    s = shap_kernel(h, x, rng.normal(size=(50, 40)), n_samples=4096, seed=3)
    eff_sampled = abs(s.total() - float(h(x[None, :])[0]))
    record_property("efficiency_sampled", f"{eff_sampled:.1e}")

    assert kernel_err < 1e-8
    assert linear_err < 1e-10
    assert eff_exact < 1e-9
    assert eff_sampled < 1e-3
    budget.check(record_property)


@pytest.mark.criterion(8, "LIME fidelity on a globally linear model")
def test_c08_lime_fidelity(record_property):
    budget = Budget(30.0)
    worst_rel, worst_r2 = 0.0, 1.0
    for m, k, n in ((30, 5, 2000), (881, 10, 5000)):
        w, top = designed_linear(m, k, seed=m)
        x = np.random.default_rng(m).normal(size=m)
        a = lime_explain(lambda X, w=w: X @ w + 0.5, x, n_perturbations=n, k=k, seed=8)
        assert sorted(int(name[1:]) for name in a.scores) == sorted(top.tolist())
        rel = max(abs(a.scores[f"x{j}"] - w[j]) / abs(w[j]) for j in top)
        worst_rel, worst_r2 = max(worst_rel, rel), min(worst_r2, a.local_r2)
    record_property("max_rel_coef_err", f"{worst_rel:.1e}")
    record_property("min_local_r2", f"{worst_r2:.5f}")
    assert worst_rel <= 0.05 and worst_r2 >= 0.99
    budget.check(record_property)


# --- metrics ------------------------------------------------------------------------


@pytest.mark.criterion(9, "metric identities")
def test_c09_metric_identities(record_property):
    rng = np.random.default_rng(9)
    y = rng.integers(0, 2, 200)
    s = np.round(rng.random(200), 2)
    auc_err = abs(roc_auc(y, s) - pairwise_auc(y, s))
    record_property("auc_err", f"{auc_err:.1e}")
    assert auc_err < 1e-9

    for _ in range(200):
        yt, yp = rng.integers(0, 2, 50), rng.integers(0, 2, 50)
        tp, fp, fn, tn = confusion(yt, yp)
        assert (tp, fp, fn, tn) == (int(np.sum((yt == 1) & (yp == 1))), int(np.sum((yt == 0) & (yp == 1))),
                                    int(np.sum((yt == 1) & (yp == 0))), int(np.sum((yt == 0) & (yp == 0))))
        p, r, f1 = prf(tp, fp, fn)
        assert p == (tp / (tp + fp) if tp + fp else 0.0)
        assert r == (tp / (tp + fn) if tp + fn else 0.0)
        assert f1 == (2 * p * r / (p + r) if p + r else 0.0)

    x = rng.standard_normal(20)
    labels = (x > 0).astype(int)
    folds = [np.array([i]) for i in range(20)]
    res = cross_validate(lambda tr, te: (x[te] > 0).astype(float), labels, folds, scheme="loocv")
    record_property("loocv_folds", len(res))
    assert len(res) == 20


# --- end to end --------------------------------------------------------------------


def _artifacts(out):
    metrics = sorted(p for p in (out / "evaluate").rglob("*.csv"))
    reports = sorted((out / "report").glob("*.report.*"))
    return metrics + reports


@pytest.mark.slow
@pytest.mark.criterion(10, "end-to-end determinism and report golden")
def test_c10_determinism_and_golden(tmp_path, record_property):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["run-all", "--config", str(DEMO_INI), "--output-dir", str(out)]) == 0
        outs.append(out)
    a, b = (_artifacts(o) for o in outs)
    assert [p.relative_to(outs[0]) for p in a] == [p.relative_to(outs[1]) for p in b]
    differing = [str(p.relative_to(outs[0])) for p, q in zip(a, b) if p.read_bytes() != q.read_bytes()]
    record_property("files_compared", len(a))
    assert not differing, differing

    md = (outs[0] / "report" / "P0009.report.md").read_text()
    txt = (outs[0] / "report" / "P0009.report.txt").read_text()
    for needle in ("risk for CRC", "/10 (", "/12 (", "Potential false positives due to medications/comorbidities"):
        assert needle in md
    assert "potential false positives due to medications/comorbidities" in txt
    assert md == (GOLDEN / "P0009.report.md").read_text()
    assert txt == (GOLDEN / "P0009.report.txt").read_text()
