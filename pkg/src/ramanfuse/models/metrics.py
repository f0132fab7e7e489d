"""Confusion-matrix metrics, ROC/AUC, and cross-validation aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..errors import DataError

METRICS = ("accuracy", "precision", "recall", "auc", "f1")
# column order of the published performance tables
TABLE_COLUMNS = ("Model", "Accuracy", "Precision", "Recall", "AUC", "F1 Score")


def confusion(y, yhat) -> tuple[int, int, int, int]:
    """Return ``(tp, fp, fn, tn)`` for binary labels."""
    y, yhat = np.asarray(y).astype(int).ravel(), np.asarray(yhat).astype(int).ravel()
    if y.shape != yhat.shape:
        raise DataError("label and prediction lengths differ")
    tp = int(np.sum((y == 1) & (yhat == 1)))
    fp = int(np.sum((y == 0) & (yhat == 1)))
    fn = int(np.sum((y == 1) & (yhat == 0)))
    tn = int(np.sum((y == 0) & (yhat == 0)))
    return tp, fp, fn, tn


def _ratio(a, b) -> float:
    return a / b if b > 0 else 0.0


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Precision, recall and F1; each is 0 when its denominator is 0."""
    p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    return p, r, (2 * p * r / (p + r) if p + r > 0 else 0.0)


def roc_curve(y, scores) -> np.ndarray:
    """ROC points (fpr, tpr) from sweeping every distinct score, high to low.

    Tied scores move together, so the curve takes diagonal steps there.
    """
    y = np.asarray(y).astype(int).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    n_pos, n_neg = int(y.sum()), int(y.size - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    return np.column_stack([np.r_[0.0, fps / n_neg], np.r_[0.0, tps / n_pos]])


def trapezoid_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_auc(y, scores) -> float:
    return trapezoid_area(roc_curve(y, scores))


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    roc_points: np.ndarray | None
    per_class: dict[int, tuple[float, float, float]]
    confusion: tuple[int, int, int, int]
    n: int
    auc_reason: str = ""
    cv_mean: dict[str, float] = field(default_factory=dict)
    cv_std: dict[str, float] = field(default_factory=dict)

    def metric(self, name: str) -> float | None:
        return getattr(self, name)

    def as_row(self) -> dict[str, float | None]:
        return {m: self.metric(m) for m in METRICS}


def evaluate_scores(y, scores, threshold: float = 0.5) -> EvalReport:
    """Metrics for probability ``scores`` against binary labels ``y``."""
    y = np.asarray(y).astype(int).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.size == 0 or y.size != s.size:
        raise DataError("evaluation needs equal, non-zero numbers of labels and scores")
    yhat = (s >= threshold).astype(int)
    tp, fp, fn, tn = confusion(y, yhat)
    p, r, f1 = prf(tp, fp, fn)
    per_class = {1: (p, r, f1), 0: prf(tn, fn, fp)}
    if 0 < y.sum() < y.size:
        pts = roc_curve(y, s)
        auc, pts_out, reason = trapezoid_area(pts), pts, ""
    else:
        auc, pts_out, reason = None, None, "single-class test set"
    return EvalReport((tp + tn) / y.size, p, r, f1, auc, pts_out, per_class, (tp, fp, fn, tn), int(y.size), reason)


@dataclass
class CVResult:
    scheme: str
    folds: list[EvalReport]
    mean: dict[str, float]
    std: dict[str, float]
    pooled: EvalReport
    fold_scores: list[np.ndarray]

    def __len__(self):
        return len(self.folds)


def aggregate(reports: Sequence[EvalReport]) -> tuple[dict[str, float], dict[str, float]]:
    """Mean and sample standard deviation of each metric over folds where it is defined."""
    mean, std = {}, {}
    for m in METRICS:
        vals = np.array([r.metric(m) for r in reports if r.metric(m) is not None], dtype=np.float64)
        mean[m] = float(vals.mean()) if vals.size else float("nan")
        std[m] = float(vals.std(ddof=1)) if vals.size > 1 else float("nan")
    return mean, std


def cross_validate(fit_predict: Callable[[np.ndarray, np.ndarray], np.ndarray], labels,
                   folds: Sequence[np.ndarray], threshold: float = 0.5, jobs: int = 1,
                   scheme: str = "stratified_kfold") -> CVResult:
    """Retrain from scratch on each fold and evaluate on the held-out rows.

    ``fit_predict(train_idx, test_idx)`` must return scores for
    ``test_idx``.  Folds are independent, so ``jobs > 1`` runs them in
    worker processes; results do not depend on the job count.
    """
    labels = np.asarray(labels).astype(int)
    n = labels.size
    everything = np.arange(n)
    pairs = [(np.setdiff1d(everything, f), np.asarray(f, dtype=int)) for f in folds]
    if jobs > 1:
        from joblib import Parallel, delayed

        scores = Parallel(n_jobs=jobs)(delayed(fit_predict)(tr, te) for tr, te in pairs)
    else:
        scores = [fit_predict(tr, te) for tr, te in pairs]
    scores = [np.asarray(s, dtype=np.float64).ravel() for s in scores]
    reports = [evaluate_scores(labels[te], s, threshold) for (_, te), s in zip(pairs, scores)]
    mean, std = aggregate(reports)
    pooled_idx = np.concatenate([te for _, te in pairs])
    pooled = evaluate_scores(labels[pooled_idx], np.concatenate(scores), threshold)
    pooled.cv_mean, pooled.cv_std = mean, std
    return CVResult(scheme, reports, mean, std, pooled, scores)


def format_mean_std(mean: float, std: float) -> str:
    if not np.isfinite(mean):
        return "n/a"
    if not np.isfinite(std):
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {std:.3f}"


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and not np.isfinite(v)) else f"{v:.4f}"


def write_performance_csv(path: str | Path, rows: Sequence[tuple[str, EvalReport]]) -> None:
    """One row per model, columns in published-table order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for name, r in rows:
            w.writerow([name, _fmt(r.accuracy), _fmt(r.precision), _fmt(r.recall), _fmt(r.auc), _fmt(r.f1)])


FOREST_COLUMNS = ("Model", "Label", "Precision", "Recall", "F1", "Accuracy", "CV Mean")


def write_forest_csv(path: str | Path, rows: Sequence[tuple[str, EvalReport, dict[int, str]]]) -> None:
    """Per-class rows for forest sub-models; CV mean on the first row of each model."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FOREST_COLUMNS)
        for name, r, class_names in rows:
            cv = format_mean_std(r.cv_mean.get("accuracy", float("nan")), r.cv_std.get("accuracy", float("nan"))) if r.cv_mean else "n/a"
            for j, cls in enumerate(sorted(class_names)):
                p, rc, f1 = r.per_class[cls]
                w.writerow([name, class_names[cls], _fmt(p), _fmt(rc), _fmt(f1),
                            f"{100 * r.accuracy:.2f}%" if j == 0 else "", cv if j == 0 else ""])
