"""Raman spectrum container, preprocessing chain and baseline QC.

The chain runs in a fixed order::

    raw -> smoothed -> background_corrected -> despiked -> normalized

Every operation takes a :class:`Spectrum` at the preceding stage and returns a
new one; nothing is mutated in place.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, FitError, GridMismatchError, StageError, WindowError

MAD_TO_SIGMA = 1.4826
DIVERGENCE_EPS = 1e-9


class Stage(str, enum.Enum):
    RAW = "raw"
    SMOOTHED = "smoothed"
    BACKGROUND_CORRECTED = "background_corrected"
    DESPIKED = "despiked"
    NORMALIZED = "normalized"

    @property
    def order(self) -> int:
        return list(Stage).index(self)


class QC(str, enum.Enum):
    UNCHECKED = "unchecked"
    PASSED = "passed"
    FLAGGED_DIVERGENT = "flagged_divergent"


@dataclass(frozen=True)
class Spectrum:
    sample_id: str
    replicate_index: int
    wavenumbers: np.ndarray
    intensities: np.ndarray
    stage: Stage = Stage.RAW
    qc: QC = QC.UNCHECKED
    replaced_indices: tuple[int, ...] = ()

    def __post_init__(self):
        wn = np.asarray(self.wavenumbers, dtype=np.float64)
        y = np.asarray(self.intensities, dtype=np.float64)
        if wn.ndim != 1 or y.ndim != 1:
            raise DataError("wavenumbers and intensities must be 1-D")
        if wn.size != y.size:
            raise DataError(
                f"{self.sample_id}: {wn.size} wavenumbers but {y.size} intensities"
            )
        if wn.size < 5:
            raise DataError(f"{self.sample_id}: spectrum needs >= 5 points, got {wn.size}")
        if np.any(np.diff(wn) <= 0):
            raise DataError(f"{self.sample_id}: wavenumbers must be strictly increasing")
        if self.replicate_index < 0:
            raise DataError("replicate_index must be >= 0")
        object.__setattr__(self, "wavenumbers", wn)
        object.__setattr__(self, "intensities", y)
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "qc", QC(self.qc))

    def __len__(self):
        return self.intensities.size

    def advance(self, stage: Stage, intensities: np.ndarray, **changes) -> "Spectrum":
        if stage.order <= self.stage.order:
            raise StageError(f"cannot move from {self.stage.value} back to {stage.value}")
        return replace(self, stage=stage, intensities=intensities, **changes)

    def require(self, stage: Stage):
        if self.stage is not stage:
            raise StageError(
                f"{self.sample_id}#{self.replicate_index}: expected stage "
                f"{stage.value}, got {self.stage.value}"
            )


@dataclass(frozen=True)
class PreprocessConfig:
    sg_half_width: int = 5
    sg_order: int = 3
    bg_degree: int = 5
    cosmic_threshold_k: float = 8.0
    phe_window: tuple[float, float] = (995.0, 1010.0)
    phe_scale: float = 1.0
    baseline_divergence_k: float = 3.0
    bg_max_iter: int = 100
    bg_tol: float = 1e-6

    def __post_init__(self):
        if self.sg_half_width < 1:
            raise ConfigError("sg_half_width must be >= 1")
        if not 0 <= self.sg_order < 2 * self.sg_half_width + 1:
            raise ConfigError("sg_order must satisfy 0 <= order < 2*half_width + 1")
        if self.bg_degree < 0:
            raise ConfigError("bg_degree must be >= 0")
        if self.cosmic_threshold_k <= 0:
            raise ConfigError("cosmic_threshold_k must be positive")
        lo, hi = self.phe_window
        if not lo < hi:
            raise ConfigError("phe_window must be an increasing interval")
        if self.phe_scale <= 0:
            raise ConfigError("phe_scale must be positive")
        if self.baseline_divergence_k <= 0:
            raise ConfigError("baseline_divergence_k must be positive")


@dataclass(frozen=True)
class ConditionBaseline:
    condition_label: str
    mean_spectrum: np.ndarray
    pointwise_std: np.ndarray
    n_members: int
    wavenumbers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_members < 2:
            raise DataError("a condition baseline needs at least 2 members")
        if self.mean_spectrum.shape != self.pointwise_std.shape:
            raise DataError("mean and std vectors differ in length")


@dataclass(frozen=True)
class QCDecision:
    qc: QC
    score: float


# --- Savitzky-Golay -------------------------------------------------------


@lru_cache(maxsize=256)
def _sg_weights(left: int, right: int, order: int) -> tuple[float, ...]:
    """Weights evaluating the LS polynomial fit on offsets [-left, right] at 0."""
    offsets = np.arange(-left, right + 1, dtype=np.float64)
    order = min(order, offsets.size - 1)
    A = np.vander(offsets, order + 1, increasing=True)
    # row 0 of (A^T A)^-1 A^T is the intercept estimator, i.e. the fit at offset 0
    gram = A.T @ A
    coef = np.linalg.solve(gram, A.T)
    return tuple(coef[0])


def savgol_coeffs(half_width: int, order: int) -> np.ndarray:
    """Central smoothing weights ``c_{-m} .. c_m`` for a window of ``2m+1`` points."""
    if half_width < 1:
        raise WindowError("half_width must be >= 1")
    if not 0 <= order < 2 * half_width + 1:
        raise DataError(f"order {order} must be below the window length {2 * half_width + 1}")
    return np.array(_sg_weights(half_width, half_width, order))


def savgol_smooth(y: np.ndarray, half_width: int, order: int) -> np.ndarray:
    """Smooth ``y`` (1-D, or 2-D with one signal per row).

    Interior points use the fixed central weights. Within ``half_width`` of
    either end the window is truncated to the available points and the
    polynomial refitted, so no data is invented beyond the ends.
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[-1]
    window = 2 * half_width + 1
    if window > n:
        raise WindowError(f"window of {window} points exceeds spectrum length {n}")
    c = savgol_coeffs(half_width, order)
    out = np.empty_like(y)
    # sliding dot product; c is symmetric so correlation == convolution
    view = np.lib.stride_tricks.sliding_window_view(y, window, axis=-1)
    out[..., half_width : n - half_width] = view @ c
    for i in range(half_width):
        w_left = np.array(_sg_weights(i, half_width, order))
        out[..., i] = y[..., : i + half_width + 1] @ w_left
        j = n - 1 - i
        w_right = np.array(_sg_weights(half_width, i, order))
        out[..., j] = y[..., j - half_width :] @ w_right
    return out


def savitzky_golay(s: Spectrum, m: int, order: int) -> Spectrum:
    s.require(Stage.RAW)
    if 2 * m + 1 > len(s):
        raise WindowError(f"window 2m+1={2 * m + 1} larger than spectrum ({len(s)} points)")
    if order >= 2 * m + 1:
        raise DataError(f"order {order} must be < window length {2 * m + 1}")
    return s.advance(Stage.SMOOTHED, savgol_smooth(s.intensities, m, order))


# --- fluorescence background -------------------------------------------------


@lru_cache(maxsize=32)
def _poly_projector(wn_bytes: bytes, degree: int) -> tuple[np.ndarray, np.ndarray]:
    wn = np.frombuffer(wn_bytes, dtype=np.float64)
    # map onto [-1, 1]: same fitted curve, far better conditioned Vandermonde
    t = (2.0 * wn - (wn[0] + wn[-1])) / (wn[-1] - wn[0])
    V = np.vander(t, degree + 1, increasing=True)
    if np.linalg.matrix_rank(V) < degree + 1:
        raise FitError(f"polynomial background of degree {degree} is rank deficient")
    # hat-matrix factor: fitted values = V @ (P @ y)
    P = np.linalg.pinv(V)
    return V, P


def fit_background(
    wavenumbers: np.ndarray,
    y: np.ndarray,
    degree: int,
    max_iter: int = 100,
    tol: float = 1e-6,
) -> np.ndarray:
    """Iterative clipped polynomial fit of the fluorescence background.

    Fit, clip the working signal to the fit where it lies above, refit. Stops
    after ``max_iter`` rounds or when the fitted curve moves by less than
    ``tol`` times the data range. Accepts one signal or a stack of rows; rows
    converge independently.
    """
    wn = np.ascontiguousarray(wavenumbers, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if degree + 1 >= wn.size:
        raise FitError(f"degree {degree} needs more than {degree + 1} points")
    V, P = _poly_projector(wn.tobytes(), degree)
    work = np.atleast_2d(y).copy()
    scale = np.ptp(work, axis=1)
    scale[scale == 0] = 1.0
    fit = work @ P.T @ V.T
    active = np.ones(work.shape[0], dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        rows = np.flatnonzero(active)
        work[rows] = np.minimum(work[rows], fit[rows])
        new = work[rows] @ P.T @ V.T
        change = np.max(np.abs(new - fit[rows]), axis=1) / scale[rows]
        fit[rows] = new
        active[rows[change < tol]] = False
    if not np.all(np.isfinite(fit)):
        raise FitError("background fit produced non-finite values")
    return fit.reshape(y.shape)


def correct_background(s: Spectrum, degree: int, max_iter: int = 100, tol: float = 1e-6) -> Spectrum:
    s.require(Stage.SMOOTHED)
    if degree + 1 >= len(s):
        raise FitError(f"degree {degree} too high for {len(s)} points")
    bg = fit_background(s.wavenumbers, s.intensities, degree, max_iter, tol)
    return s.advance(Stage.BACKGROUND_CORRECTED, s.intensities - bg)


# --- cosmic rays -------------------------------------------------------------


def cosmic_threshold(y: np.ndarray, k: float) -> float:
    """T = median + k * 1.4826 * MAD."""
    med = float(np.median(y))
    mad = float(np.median(np.abs(y - med)))
    return med + k * MAD_TO_SIGMA * mad


def despike(y: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Single pass of the piecewise rule; neighbours are read from the input.

    Endpoints at or above the threshold take the value of their only neighbour.
    """
    y = np.asarray(y, dtype=np.float64)
    hit = y >= threshold
    out = y.copy()
    interior = hit.copy()
    interior[[0, -1]] = False
    idx = np.flatnonzero(interior)
    out[idx] = 0.5 * (y[idx - 1] + y[idx + 1])
    if hit[0]:
        out[0] = y[1]
    if hit[-1]:
        out[-1] = y[-2]
    return out, np.flatnonzero(hit)


def remove_cosmic_rays(
    s: Spectrum, k: float, threshold: float | None = None
) -> tuple[Spectrum, list[int]]:
    """Replace points at or above T with their neighbour mean.

    ``threshold`` fixes T directly; otherwise T comes from the robust rule
    with multiplier ``k``.
    """
    s.require(Stage.BACKGROUND_CORRECTED)
    T = cosmic_threshold(s.intensities, k) if threshold is None else float(threshold)
    out, idx = despike(s.intensities, T)
    replaced = [int(i) for i in idx]
    return s.advance(Stage.DESPIKED, out, replaced_indices=tuple(replaced)), replaced


# --- phenylalanine normalisation -------------------------------------------


def phenylalanine_intensity(wavenumbers: np.ndarray, y: np.ndarray, window: Sequence[float]) -> float:
    lo, hi = window
    mask = (wavenumbers >= lo) & (wavenumbers <= hi)
    if not mask.any():
        raise WindowError(
            f"phenylalanine window [{lo}, {hi}] misses the axis "
            f"[{wavenumbers[0]}, {wavenumbers[-1]}]"
        )
    return float(np.max(y[mask]))


def normalize_to_phenylalanine(s: Spectrum, window: Sequence[float], C: float) -> Spectrum:
    s.require(Stage.DESPIKED)
    if C <= 0:
        raise DataError("scale C must be positive")
    i_phe = phenylalanine_intensity(s.wavenumbers, s.intensities, window)
    if not i_phe > 0:
        raise DataError(
            f"{s.sample_id}#{s.replicate_index}: degenerate phenylalanine peak "
            f"(I_Phe={i_phe:g}); spectrum flagged"
        )
    return s.advance(Stage.NORMALIZED, (s.intensities / i_phe) * C)


# --- baseline and divergence -----------------------------------------------


def _stack(spectra: Sequence[Spectrum]) -> tuple[np.ndarray, np.ndarray]:
    grid = spectra[0].wavenumbers
    for s in spectra[1:]:
        if s.wavenumbers.shape != grid.shape or not np.array_equal(s.wavenumbers, grid):
            raise GridMismatchError(f"{s.sample_id} is on a different wavenumber grid")
    return grid, np.vstack([s.intensities for s in spectra])


def compute_baseline(spectra: Sequence[Spectrum], label: str) -> ConditionBaseline:
    if len(spectra) < 2:
        raise DataError(f"baseline for {label!r} needs >= 2 spectra, got {len(spectra)}")
    for s in spectra:
        s.require(Stage.NORMALIZED)
    grid, Y = _stack(spectra)
    return ConditionBaseline(
        condition_label=label,
        mean_spectrum=Y.mean(axis=0),
        pointwise_std=Y.std(axis=0, ddof=1),
        n_members=len(spectra),
        wavenumbers=grid,
    )


def divergence_score(y: np.ndarray, b: ConditionBaseline) -> float:
    """Mean absolute z-score against the baseline, std floored at 1e-9."""
    if y.shape != b.mean_spectrum.shape:
        raise GridMismatchError(
            f"spectrum has {y.size} points, baseline {b.mean_spectrum.size}"
        )
    sd = np.maximum(b.pointwise_std, DIVERGENCE_EPS)
    return float(np.mean(np.abs(y - b.mean_spectrum) / sd))


def flag_divergent(s: Spectrum, b: ConditionBaseline, k: float) -> QCDecision:
    s.require(Stage.NORMALIZED)
    if b.wavenumbers is not None and not np.array_equal(s.wavenumbers, b.wavenumbers):
        raise GridMismatchError(f"{s.sample_id} grid does not match baseline grid")
    score = divergence_score(s.intensities, b)
    return QCDecision(QC.FLAGGED_DIVERGENT if score > k else QC.PASSED, score)


# --- chain + cohort QC --------------------------------------------------------


def preprocess(s: Spectrum, cfg: PreprocessConfig) -> Spectrum:
    """Run the four-step chain on one raw spectrum."""
    s = savitzky_golay(s, cfg.sg_half_width, cfg.sg_order)
    s = correct_background(s, cfg.bg_degree, cfg.bg_max_iter, cfg.bg_tol)
    s, _ = remove_cosmic_rays(s, cfg.cosmic_threshold_k)
    return normalize_to_phenylalanine(s, cfg.phe_window, cfg.phe_scale)


def preprocess_many(spectra: Sequence[Spectrum], cfg: PreprocessConfig) -> list[Spectrum]:
    """Batched :func:`preprocess` for spectra sharing one grid.

    Smoothing and the background fit run on the stacked matrix; results agree
    with mapping :func:`preprocess` over the list up to BLAS rounding.
    """
    if not spectra:
        return []
    for s in spectra:
        s.require(Stage.RAW)
    grid, Y = _stack(spectra)
    if 2 * cfg.sg_half_width + 1 > grid.size:
        raise WindowError("smoothing window larger than spectrum")
    S = savgol_smooth(Y, cfg.sg_half_width, cfg.sg_order)
    C = S - fit_background(grid, S, cfg.bg_degree, cfg.bg_max_iter, cfg.bg_tol)
    out = []
    for s, smooth, corr in zip(spectra, S, C):
        cur = s.advance(Stage.SMOOTHED, smooth)
        cur = cur.advance(Stage.BACKGROUND_CORRECTED, corr)
        cur, _ = remove_cosmic_rays(cur, cfg.cosmic_threshold_k)
        out.append(normalize_to_phenylalanine(cur, cfg.phe_window, cfg.phe_scale))
    return out


@dataclass(frozen=True)
class QCRecord:
    sample_id: str
    replicate: int
    stage: Stage
    qc: QC
    divergence_score: float
    within_sample_score: float
    replaced_indices: tuple[int, ...]


def robust_baseline(spectra: Sequence[Spectrum], label: str) -> ConditionBaseline:
    """Pointwise median and 1.4826*MAD; a contamination-resistant seed baseline."""
    if len(spectra) < 2:
        raise DataError(f"baseline for {label!r} needs >= 2 spectra")
    grid, Y = _stack(spectra)
    med = np.median(Y, axis=0)
    mad = MAD_TO_SIGMA * np.median(np.abs(Y - med), axis=0)
    return ConditionBaseline(label, med, mad, len(spectra), grid)


def _flag_group(members: list[Spectrum], label: str, k: float) -> dict[int, QCDecision]:
    """Seed with a robust baseline, keep survivors, then flag against their mean B."""
    seed = robust_baseline(members, label)
    survivors = [s for s in members if flag_divergent(s, seed, k).qc is QC.PASSED]
    base = compute_baseline(survivors if len(survivors) >= 2 else members, label)
    return {i: flag_divergent(s, base, k) for i, s in enumerate(members)}


def quality_control(
    spectra: Sequence[Spectrum], conditions: dict[str, str], k: float
) -> tuple[list[Spectrum], list[QCRecord]]:
    """Flag replicates diverging from their condition or from their own sample.

    ``conditions`` maps sample_id to a condition label; unknown samples form
    their own ``"unknown"`` group. A replicate is flagged when it diverges from
    the condition baseline B (mean over the condition's replicates that survive
    a robust first screen) or from the mean of its own sample's replicates.
    """
    by_cond: dict[str, list[int]] = {}
    by_sample: dict[str, list[int]] = {}
    for i, s in enumerate(spectra):
        by_cond.setdefault(conditions.get(s.sample_id, "unknown"), []).append(i)
        by_sample.setdefault(s.sample_id, []).append(i)

    cond_dec: dict[int, QCDecision] = {}
    for label, idx in by_cond.items():
        members = [spectra[i] for i in idx]
        if len(members) < 2:
            cond_dec[idx[0]] = QCDecision(QC.PASSED, 0.0)
            continue
        for j, d in _flag_group(members, label, k).items():
            cond_dec[idx[j]] = d

    within: dict[int, QCDecision] = {}
    for sid, idx in by_sample.items():
        if len(idx) < 2:
            within[idx[0]] = QCDecision(QC.PASSED, 0.0)
            continue
        base = compute_baseline([spectra[i] for i in idx], sid)
        for i in idx:
            within[i] = flag_divergent(spectra[i], base, k)

    out, records = [], []
    for i, s in enumerate(spectra):
        flagged = QC.FLAGGED_DIVERGENT in (cond_dec[i].qc, within[i].qc)
        qc = QC.FLAGGED_DIVERGENT if flagged else QC.PASSED
        out.append(replace(s, qc=qc))
        records.append(
            QCRecord(s.sample_id, s.replicate_index, s.stage, qc,
                     cond_dec[i].score, within[i].score, s.replaced_indices)
        )
    return out, records


def flagged_samples(records: Iterable[QCRecord]) -> set[str]:
    """Samples with a strict majority of replicates flagged divergent."""
    votes: dict[str, list[bool]] = {}
    for r in records:
        votes.setdefault(r.sample_id, []).append(r.qc is QC.FLAGGED_DIVERGENT)
    return {sid for sid, v in votes.items() if 2 * sum(v) > len(v)}


# --- CSV I/O -----------------------------------------------------------------


def split_column(name: str) -> tuple[str, int]:
    sid, sep, rep = name.rpartition("_")
    if not sep or not rep.isdigit():
        raise DataError(f"spectrum column {name!r} is not <sample_id>_<replicate>")
    return sid, int(rep)


def read_spectra_csv(path: str | Path, stage: Stage = Stage.RAW) -> list[Spectrum]:
    path = Path(path)
    with path.open(newline="") as fh:
        header = next(csv.reader(fh))
    if not header or header[0] != "wavenumber":
        raise DataError(f"{path}: first column must be 'wavenumber'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    wn = data[:, 0]
    out = []
    for j, name in enumerate(header[1:], start=1):
        sid, rep = split_column(name)
        out.append(Spectrum(sid, rep, wn, data[:, j], stage=stage))
    return out


def write_spectra_csv(path: str | Path, spectra: Sequence[Spectrum]) -> None:
    if not spectra:
        raise DataError("no spectra to write")
    grid, Y = _stack(spectra)
    header = ["wavenumber"] + [f"{s.sample_id}_{s.replicate_index}" for s in spectra]
    table = np.column_stack([grid, Y.T])
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.10g")


QC_COLUMNS = ("sample_id", "replicate", "stage", "qc", "divergence_score", "replaced_indices")


def write_qc_csv(path: str | Path, records: Iterable[QCRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QC_COLUMNS)
        for r in records:
            w.writerow([
                r.sample_id, r.replicate, r.stage.value, r.qc.value,
                f"{r.divergence_score:.6f}", ";".join(map(str, r.replaced_indices)),
            ])


def read_qc_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["replicate"] = int(r["replicate"])
        r["divergence_score"] = float(r["divergence_score"])
    return rows
