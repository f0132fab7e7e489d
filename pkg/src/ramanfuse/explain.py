"""Shapley-value and LIME attributions, and their consensus feature set."""

from __future__ import annotations

import csv
import logging
import warnings
import zlib
from dataclasses import dataclass, field
from math import comb, factorial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

MAX_EXACT_FEATURES = 20
MAX_BACKGROUND = 100
METHODS = ("shap_exact", "shap_kernel", "lime")

Model = Callable[[np.ndarray], np.ndarray]


@dataclass
class Attribution:
    sample_id: str
    method: str
    scores: dict[str, float]
    base_value: float
    n_perturbations: int
    seed: int | None
    prediction: float = float("nan")
    local_r2: float | None = None

    def ranked(self, nonzero: bool = True) -> list[tuple[str, float]]:
        """Features by decreasing |score|, ties broken by name."""
        items = [(k, v) for k, v in self.scores.items() if v != 0.0 or not nonzero]
        return sorted(items, key=lambda kv: (-abs(kv[1]), kv[0]))

    def top(self, k: int) -> list[str]:
        return [name for name, _ in self.ranked()[:k]]

    def total(self) -> float:
        return self.base_value + float(sum(self.scores.values()))


@dataclass
class ConsensusEntry:
    feature: str
    shap_rank: int
    lime_rank: int


@dataclass
class ConsensusSet:
    k: int
    by_class: dict[str, list[ConsensusEntry]] = field(default_factory=dict)

    def features(self, label: str | None = None) -> list[str]:
        if label is not None:
            return [e.feature for e in self.by_class.get(label, [])]
        return [e.feature for entries in self.by_class.values() for e in entries]

    def merge(self, other: "ConsensusSet") -> "ConsensusSet":
        out = ConsensusSet(self.k, {k: list(v) for k, v in self.by_class.items()})
        for label, entries in other.by_class.items():
            have = {e.feature for e in out.by_class.setdefault(label, [])}
            out.by_class[label].extend(e for e in entries if e.feature not in have)
        return out


def explain_seed(base_seed: int, sample_id: str, method: str) -> int:
    """Stable per-(sample, method) seed so explanations are order independent."""
    ss = np.random.SeedSequence([int(base_seed), zlib.crc32(str(sample_id).encode()), METHODS.index(method)])
    return int(ss.generate_state(1)[0])


def background_rows(x_train: np.ndarray, max_rows: int = MAX_BACKGROUND, seed: int = 0) -> np.ndarray:
    x_train = np.atleast_2d(x_train)
    if x_train.shape[0] <= max_rows:
        return x_train
    rng = np.random.default_rng(seed)
    return x_train[np.sort(rng.choice(x_train.shape[0], max_rows, replace=False))]


def _names(names, m):
    if names is None:
        return [f"x{j}" for j in range(m)]
    if len(names) != m:
        raise DataError(f"{len(names)} feature names for {m} features")
    return list(names)


def _reference(background: np.ndarray, m: int) -> np.ndarray:
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if background.shape[0] == 0:
        raise DataError("background set is empty")
    if background.shape[1] != m:
        raise DataError(f"background has {background.shape[1]} features, sample has {m}")
    return background.mean(axis=0)


def _coalition_values(f: Model, x: np.ndarray, ref: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """f evaluated with absent features set to the background mean."""
    return np.asarray(f(np.where(masks, x, ref)), dtype=np.float64).ravel()


def shap_exact(f: Model, x, background, feature_names: Sequence[str] | None = None,
               sample_id: str = "", max_background: int = MAX_BACKGROUND, seed: int = 0) -> Attribution:
    """Shapley values by enumerating all 2^M coalitions (M <= 20)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    m = x.size
    if m > MAX_EXACT_FEATURES:
        raise ConfigError(f"exact enumeration over {m} features is infeasible; use shap_kernel")
    ref = _reference(background_rows(np.atleast_2d(background), max_background, seed), m)
    names = _names(feature_names, m)
    codes = np.arange(1 << m)
    masks = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    v = _coalition_values(f, x, ref, masks)
    size = masks.sum(axis=1)
    weight = np.array([factorial(s) * factorial(m - s - 1) / factorial(m) for s in range(m)])
    phi = np.empty(m)
    for i in range(m):
        without = codes[~masks[:, i]]
        phi[i] = np.sum(weight[size[without]] * (v[without | (1 << i)] - v[without]))
    return Attribution(sample_id, "shap_exact", dict(zip(names, phi.tolist())), float(v[0]),
                       int(codes.size), seed, float(v[-1]))


def _shapley_kernel(m: int, s: np.ndarray) -> np.ndarray:
    return (m - 1) / (np.array([comb(m, int(k)) for k in s], dtype=np.float64) * s * (m - s))


def _coalitions(m: int, n_samples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Coalition masks (excluding empty and full) with regression weights."""
    if n_samples >= (1 << m):
        codes = np.arange(1, (1 << m) - 1)
        masks = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
        return masks, _shapley_kernel(m, masks.sum(axis=1))
    sizes = np.arange(1, m)
    p = (m - 1) / (sizes * (m - sizes))
    p /= p.sum()
    n_pairs = (n_samples - 2) // 2
    drawn = rng.choice(sizes, size=n_pairs, p=p)
    masks = np.zeros((2 * n_pairs, m), dtype=bool)
    for j, s in enumerate(drawn):
        on = rng.choice(m, size=s, replace=False)
        masks[2 * j, on] = True
        masks[2 * j + 1] = ~masks[2 * j]
    # sizes were drawn in proportion to the kernel, so rows weigh equally
    return masks, np.ones(masks.shape[0])


def shap_kernel(f: Model, x, background, n_samples: int = 2048, seed: int = 0,
                feature_names: Sequence[str] | None = None, sample_id: str = "",
                max_background: int = MAX_BACKGROUND, ridge: float = 1e-6) -> Attribution:
    """Kernel SHAP: Shapley-kernel weighted least squares with the efficiency constraint.

    The all-off and all-on coalitions enter as the constraint
    ``sum(phi) = f(x) - f(ref)``, imposed by eliminating the last feature.
    When ``n_samples`` covers every coalition they are enumerated with exact
    kernel weights; otherwise coalition sizes are sampled in proportion to
    the kernel and paired with their complements.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    m = x.size
    if n_samples < 2 * m + 2:
        raise ConfigError(f"n_samples={n_samples} is below 2M+2={2 * m + 2}")
    names = _names(feature_names, m)
    ref = _reference(background_rows(np.atleast_2d(background), max_background, seed), m)
    rng = np.random.default_rng(seed)
    ends = _coalition_values(f, x, ref, np.array([np.zeros(m, bool), np.ones(m, bool)]))
    base, fx = float(ends[0]), float(ends[1])
    if m == 1:
        return Attribution(sample_id, "shap_kernel", {names[0]: fx - base}, base, 2, seed, fx)
    masks, w = _coalitions(m, n_samples, rng)
    v = _coalition_values(f, x, ref, masks) - base
    delta = fx - base
    z = masks.astype(np.float64)
    A = z[:, :-1] - z[:, -1:]
    b = v - z[:, -1] * delta
    sw = np.sqrt(w)
    Aw, bw = A * sw[:, None], b * sw
    G = Aw.T @ Aw
    rhs = Aw.T @ bw
    try:
        if np.linalg.matrix_rank(Aw) < m - 1:
            raise np.linalg.LinAlgError("rank deficient")
        head = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("kernel SHAP regression is singular; using a ridge fallback", RuntimeWarning, stacklevel=2)
        lam = ridge * max(np.trace(G) / G.shape[0], 1.0)
        head = np.linalg.solve(G + lam * np.eye(G.shape[0]), rhs)
    phi = np.r_[head, delta - head.sum()]
    return Attribution(sample_id, "shap_kernel", dict(zip(names, phi.tolist())), base,
                       int(masks.shape[0] + 2), seed, fx)


def _wls(X: np.ndarray, y: np.ndarray, w: np.ndarray, alpha: float = 0.0) -> tuple[np.ndarray, float]:
    """Weighted least squares with an unpenalized intercept; returns (coef, intercept)."""
    sw = np.sqrt(w / w.sum())
    xm = (w @ X) / w.sum()
    ym = float(w @ y / w.sum())
    Xc, yc = (X - xm) * sw[:, None], (y - ym) * sw
    if alpha > 0:
        coef = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(X.shape[1]), Xc.T @ yc)
    else:
        coef = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    return coef, ym - float(xm @ coef)


def lime_explain(f: Model, x, n_perturbations: int = 1000, kernel_width: float | None = None,
                 k: int = 10, seed: int = 0, feature_names: Sequence[str] | None = None,
                 sample_id: str = "", scale=None, binary_mask=None, binary_levels=None,
                 flip_probability: float = 0.3, selection_alpha: float = 1e-3) -> Attribution:
    """Local weighted linear surrogate restricted to ``k`` features.

    Numeric features are perturbed with Gaussian noise of per-feature
    ``scale``; binary features switch between their two ``binary_levels``
    with ``flip_probability``.  Proximity weights are
    ``exp(-d^2 / width^2)`` with ``d`` the Euclidean distance in units of
    ``scale``.  The ``k`` features with the largest ridge coefficients are
    kept and refit by weighted least squares.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    m = x.size
    if n_perturbations < 50:
        raise ConfigError("LIME needs at least 50 perturbations")
    names = _names(feature_names, m)
    scale = np.ones(m) if scale is None else np.asarray(scale, dtype=np.float64).ravel()
    binary = np.zeros(m, bool) if binary_mask is None else np.asarray(binary_mask, bool).ravel()
    if binary_levels is None:
        lo, hi = np.zeros(m), np.ones(m)
    else:
        lo, hi = (np.asarray(a, dtype=np.float64).ravel() for a in binary_levels)
    width = 0.75 * np.sqrt(m) if kernel_width is None else float(kernel_width)
    rng = np.random.default_rng(seed)

    Z = np.repeat(x[None, :], n_perturbations, axis=0)
    noise = rng.standard_normal((n_perturbations, m)) * scale
    Z[:, ~binary] += noise[:, ~binary]
    flips = (rng.random((n_perturbations, m)) < flip_probability) & binary
    Z = np.where(flips, lo + hi - Z, Z)
    Z[0] = x
    unit = np.where(scale > 0, scale, 1.0)
    d2 = np.sum(((Z - x) / unit) ** 2, axis=1)
    w = np.ones(n_perturbations) if np.isinf(width) else np.exp(-d2 / width**2)
    if w.sum() <= 0:
        raise DataError("all LIME proximity weights vanished; increase kernel_width")
    wn = w / w.sum()
    spread = wn @ (Z - wn @ Z) ** 2
    bad = np.flatnonzero(spread <= 1e-12 * np.maximum(1.0, np.abs(x)) ** 2)
    if bad.size:
        raise DataError(f"perturbations of feature {names[bad[0]]!r} have no variance")
    y = np.asarray(f(Z), dtype=np.float64).ravel()
    fx = float(y[0])

    k = min(int(k), m)
    if k < m:
        coef, _ = _wls(Z, y, w, alpha=selection_alpha)
        order = sorted(range(m), key=lambda j: (-abs(coef[j]), names[j]))
        keep = np.array(sorted(order[:k]))
    else:
        keep = np.arange(m)
    coef, intercept = _wls(Z[:, keep], y, w)
    resid = y - (Z[:, keep] @ coef + intercept)
    ym = wn @ y
    ss_tot = float(wn @ (y - ym) ** 2)
    if ss_tot <= 1e-24 * max(1.0, ym * ym):
        coef = np.zeros_like(coef)
        r2 = None
    else:
        r2 = 1.0 - float(wn @ resid**2) / ss_tot
    scores = {names[j]: float(c) for j, c in zip(keep, coef)}
    return Attribution(sample_id, "lime", scores, float(intercept), n_perturbations, seed, fx, r2)


def consensus(shap: Attribution, lime: Attribution, k: int = 10, label: str = "positive") -> ConsensusSet:
    """Features in the top ``k`` of both explanations, ordered by SHAP rank."""
    if shap.sample_id != lime.sample_id:
        raise DataError("consensus needs attributions for the same sample")
    s_rank = {n: i + 1 for i, n in enumerate(shap.top(k))}
    l_rank = {n: i + 1 for i, n in enumerate(lime.top(k))}
    common = sorted(set(s_rank) & set(l_rank), key=lambda n: (s_rank[n], n))
    return ConsensusSet(k, {label: [ConsensusEntry(n, s_rank[n], l_rank[n]) for n in common]})


def describe_consensus(cs: ConsensusSet, label: str) -> str:
    feats = cs.features(label)
    return ", ".join(feats) if feats else "no consensus features"


# --- CSV -----------------------------------------------------------------------

ATTRIBUTION_COLUMNS = ("sample_id", "method", "feature", "score", "rank")
CONSENSUS_COLUMNS = ("class", "feature", "shap_rank", "lime_rank")


def write_attributions_csv(path: str | Path, attributions: Sequence[Attribution], nonzero: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ATTRIBUTION_COLUMNS)
        for a in attributions:
            for r, (name, score) in enumerate(a.ranked(nonzero), start=1):
                w.writerow([a.sample_id, a.method, name, f"{score:.10g}", r])


def read_attributions_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["score"], r["rank"] = float(r["score"]), int(r["rank"])
    return rows


def write_consensus_csv(path: str | Path, cs: ConsensusSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONSENSUS_COLUMNS)
        for label in sorted(cs.by_class):
            for e in cs.by_class[label]:
                w.writerow([label, e.feature, e.shap_rank, e.lime_rank])


def read_consensus_csv(path: str | Path, k: int = 10) -> ConsensusSet:
    cs = ConsensusSet(k)
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            cs.by_class.setdefault(r["class"], []).append(
                ConsensusEntry(r["feature"], int(r["shap_rank"]), int(r["lime_rank"])))
    return cs
