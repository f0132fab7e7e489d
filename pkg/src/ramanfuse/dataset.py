"""Cohort assembly, split plans and the synthetic cohort generator."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .meta import (
    EXCLUDED_GROUPS,
    EncodedMeta,
    MetaEncoder,
    MetaSchema,
    PatientRecord,
)
from .spectra import QC, Spectrum, Stage

GRID = np.arange(400.0, 1801.0, 2.0)
PHE_CENTER = 1004.0  # on-grid, so the normalization argmax is stable

# (center cm^-1, gaussian sigma cm^-1, relative amplitude); loosely serum-like
SERUM_BANDS: tuple[tuple[float, float, float], ...] = (
    (430.0, 14.0, 0.35), (480.0, 16.0, 0.45), (525.0, 14.0, 0.30),
    (575.0, 16.0, 0.30), (621.0, 10.0, 0.35), (643.0, 10.0, 0.40),
    (700.0, 12.0, 0.35), (720.0, 10.0, 0.40), (758.0, 12.0, 0.50),
    (785.0, 12.0, 0.35), (828.0, 12.0, 0.45), (853.0, 10.0, 0.60),
    (880.0, 12.0, 0.40), (928.0, 14.0, 0.50), (957.0, 12.0, 0.45),
    (PHE_CENTER, 5.0, 1.00), (1032.0, 10.0, 0.45), (1060.0, 14.0, 0.50),
    (1086.0, 12.0, 0.40), (1125.0, 14.0, 0.55), (1157.0, 10.0, 0.70),
    (1175.0, 10.0, 0.35), (1208.0, 10.0, 0.40), (1248.0, 18.0, 0.70),
    (1275.0, 14.0, 0.55), (1303.0, 14.0, 0.60), (1340.0, 14.0, 0.65),
    (1370.0, 12.0, 0.40), (1400.0, 12.0, 0.45), (1450.0, 16.0, 0.90),
    (1520.0, 10.0, 0.75), (1552.0, 12.0, 0.40), (1585.0, 10.0, 0.45),
    (1605.0, 10.0, 0.50), (1655.0, 18.0, 0.95), (1700.0, 16.0, 0.30),
    (1745.0, 14.0, 0.35),
)

CLASS_NAMES = {0: "early_cancer", 1: "control", 2: "polyp"}
POSITIVE_CLASS = {"polyp": 2, "crc": 0}

# Table-1 composition: (diagnosis, sex) -> count
TABLE1_COUNTS = {(1, "M"): 249, (1, "F"): 222, (2, "M"): 182, (2, "F"): 120, (0, "M"): 149, (0, "F"): 113}
# Table-2 smoking mix per diagnosis, code -> count
TABLE2_SMOKING = {
    1: {0: 140, 1: 60, 2: 25, 4: 1},
    0: {0: 139, 1: 65, 2: 22, 4: 0},
    2: {0: 109, 1: 75, 2: 38, 4: 4},
}


class Task(str, enum.Enum):
    POLYP_VS_CONTROL = "polyp_vs_control"
    CRC_VS_CONTROL = "crc_vs_control"

    @property
    def positive_diagnosis(self) -> int:
        return 2 if self is Task.POLYP_VS_CONTROL else 0

    @property
    def short(self) -> str:
        return "polyp" if self is Task.POLYP_VS_CONTROL else "crc"


class Balance(str, enum.Enum):
    UNBALANCED = "unbalanced"
    BALANCED = "balanced"


# --- synthetic generation ------------------------------------------------------


@dataclass(frozen=True)
class SignalSpec:
    """Planted class effects.

    ``band_effects[cls][center]`` shifts that band's amplitude by the given
    number of between-patient amplitude SDs for patients of class ``cls``
    ("polyp" or "crc"). ``meta_effects[cls][column]`` shifts ``age``/``bmi``
    by that many SDs, or adds it to the log-odds of a binary field
    (``sex``, ``previous_malignancy``, ``comorbidity_<x>``, ``med_<x>``,
    ``symptom_<x>``).
    """

    band_effects: Mapping[str, Mapping[float, float]] = field(default_factory=dict)
    meta_effects: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    outlier_fraction: float = 0.0
    outlier_sigma: float = 6.0

    def __post_init__(self):
        centers = {b[0] for b in SERUM_BANDS}
        for cls, effects in {**self.band_effects, **self.meta_effects}.items():
            if cls not in POSITIVE_CLASS:
                raise DataError(f"unknown class {cls!r}; use 'polyp' or 'crc'")
        for cls, effects in self.band_effects.items():
            for c in effects:
                if c not in centers:
                    raise DataError(f"no band at {c} cm^-1 to carry a class effect")
                if c == PHE_CENTER:
                    raise DataError("the phenylalanine anchor cannot carry a class effect")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise DataError("outlier_fraction must be in [0, 1)")

    @classmethod
    def null(cls) -> "SignalSpec":
        return cls()

    @classmethod
    def default(cls) -> "SignalSpec":
        return cls(
            band_effects={
                "polyp": {928.0: 1.5, 1060.0: 1.5, 1400.0: 1.0},
                "crc": {853.0: 2.0, 957.0: 1.5, 1125.0: 1.5, 1745.0: 1.0},
            },
            meta_effects={
                "polyp": {"age": 0.5, "sex": 0.6, "previous_malignancy": 1.2},
                "crc": {"age": 0.7, "previous_malignancy": 1.0, "symptom_gastrointestinal_bleeding": 1.5},
            },
            outlier_fraction=0.05,
        )


    @classmethod
    def separable(cls) -> "SignalSpec":
        """Strong spectral effects, enough for a linear probe to separate classes."""
        return cls(
            band_effects={
                "polyp": {928.0: 3.0, 1060.0: 3.0, 1400.0: 2.5, 1248.0: -2.5},
                "crc": {853.0: 3.0, 957.0: 3.0, 1125.0: 2.5, 1745.0: -2.5},
            },
            meta_effects={"polyp": {"age": 0.5}, "crc": {"age": 0.7}},
        )

    @classmethod
    def split(cls, spectral: float = 1.0, meta: float = 1.0) -> "SignalSpec":
        """Class signal divided between the two modalities.

        ``spectral`` and ``meta`` scale comparable per-modality effects so the
        default puts about half the discriminative power in each.
        """
        bands = {928.0: 0.8, 1060.0: 0.8, 1400.0: -0.8}
        crc_bands = {853.0: 0.8, 957.0: 0.8, 1125.0: -0.8}
        meta_fx = {"age": 0.7, "bmi": 0.5, "previous_malignancy": 1.5,
                   "symptom_change_in_bowel_habit": 1.5, "symptom_abdominal_pain": 1.5}
        return cls(
            band_effects={"polyp": {c: spectral * v for c, v in bands.items()},
                          "crc": {c: spectral * v for c, v in crc_bands.items()}},
            meta_effects={k: {c: meta * v for c, v in meta_fx.items()} for k in ("polyp", "crc")},
        )


@dataclass(frozen=True)
class SyntheticConfig:
    n_replicates: int = 6
    amplitude_cv: float = 0.10
    phe_cv: float = 0.03
    replicate_cv: float = 0.02
    counts: float = 4000.0
    background_level: float = 3.0
    spike_probability: float = 0.3
    spike_height: tuple[float, float] = (0.5, 2.0)
    excluded_prevalence: float = 0.005
    group_prevalence: float = 0.01
    missing_rate: float = 0.0
    mean_medications: float = 2.5


@dataclass
class SyntheticCohort:
    grid: np.ndarray
    spectra: list[Spectrum]
    records: list[PatientRecord]
    manifest: list[dict]

    @property
    def outliers(self) -> set[str]:
        return {m["patient_id"] for m in self.manifest if m["planted_outlier"]}


def _class_sizes(n: int, fractions: Mapping[tuple[int, str], float]) -> dict:
    keys = sorted(fractions)
    raw = np.array([fractions[k] for k in keys], dtype=float)
    raw = raw / raw.sum() * n
    sizes = np.floor(raw).astype(int)
    for j in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[j] += 1
    return dict(zip(keys, sizes.tolist()))


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _logit(p):
    return np.log(p / (1.0 - p))


def _band_profiles(grid: np.ndarray) -> np.ndarray:
    return np.vstack([np.exp(-0.5 * ((grid - c) / w) ** 2) for c, w, _ in SERUM_BANDS])


def generate_synthetic(
    n_patients: int,
    signal: SignalSpec | None = None,
    seed: int = 0,
    schema: MetaSchema | None = None,
    config: SyntheticConfig | None = None,
    grid: np.ndarray | None = None,
    composition: Mapping[tuple[int, str], float] | None = None,
) -> SyntheticCohort:
    """Simulate raw replicate spectra, patient records and a ground-truth manifest.

    Class and sex proportions follow ``composition`` (Table-1 counts by
    default); smoking codes follow the per-class Table-2 mix.
    """
    if n_patients < 3:
        raise DataError("need at least 3 patients")
    signal = SignalSpec.null() if signal is None else signal
    schema = MetaSchema.default() if schema is None else schema
    cfg = SyntheticConfig() if config is None else config
    grid = GRID if grid is None else np.asarray(grid, dtype=np.float64)
    rng = np.random.default_rng(seed)

    sizes = _class_sizes(n_patients, composition or TABLE1_COUNTS)
    cells = [(d, s) for (d, s), k in sorted(sizes.items()) for _ in range(k)]
    order = rng.permutation(len(cells))
    cells = [cells[i] for i in order]
    n_out = int(round(signal.outlier_fraction * n_patients))
    outlier_rows = set(rng.choice(n_patients, size=n_out, replace=False).tolist()) if n_out else set()

    profiles = _band_profiles(grid)
    mu = np.array([a for _, _, a in SERUM_BANDS])
    phe_idx = [c for c, _, _ in SERUM_BANDS].index(PHE_CENTER)
    cv = np.full(mu.size, cfg.amplitude_cv)
    cv[phe_idx] = cfg.phe_cv
    t = (2.0 * grid - (grid[0] + grid[-1])) / (grid[-1] - grid[0])

    med_names = schema.medications
    med_w = 1.0 / np.arange(1, len(med_names) + 1) ** 0.8
    med_w /= med_w.sum()
    base_prev = {c: 0.1 for c in schema.comorbidities}
    base_prev.update({"hypertension": 0.3, "hypercholesterolaemia": 0.2, "type2_diabetes": 0.12})

    spectra, records, manifest = [], [], []
    for i, (dx, sex) in enumerate(cells):
        pid = f"P{i:04d}"
        cls = {2: "polyp", 0: "crc"}.get(dx)
        meff = dict(signal.meta_effects.get(cls, {})) if cls else {}
        beff = dict(signal.band_effects.get(cls, {})) if cls else {}

        def binary(name, p0):
            return bool(rng.random() < _sigmoid(_logit(p0) + meff.get(name, 0.0)))

        # sex comes from the cell; an effect on "sex" reweights it by rejection
        if "sex" in meff and rng.random() < abs(_sigmoid(meff["sex"]) - 0.5):
            sex = "M" if meff["sex"] > 0 else "F"
        age = 62.0 + 10.0 * (rng.standard_normal() + meff.get("age", 0.0))
        bmi = 27.0 + 4.5 * (rng.standard_normal() + meff.get("bmi", 0.0))
        age, bmi = max(age, 18.0), max(bmi, 15.0)
        smoke_mix = TABLE2_SMOKING[dx]
        codes = sorted(smoke_mix)
        probs = np.array([smoke_mix[c] for c in codes], dtype=float)
        smoking = int(rng.choice(codes, p=probs / probs.sum()))
        comorb = {c: binary(f"comorbidity_{c}", base_prev[c]) for c in schema.comorbidities}
        comorb.update({c: bool(rng.random() < cfg.excluded_prevalence) for c in schema.excluded_comorbidities})
        symptoms = {s: binary(f"symptom_{s}", 0.05) for s in schema.symptoms}
        n_meds = rng.poisson(cfg.mean_medications)
        meds = set(rng.choice(med_names, size=min(n_meds, len(med_names)), replace=False, p=med_w).tolist())
        for key, eff in meff.items():
            if key.startswith("med_") and binary(key, 0.05):
                meds.add(key[4:])
        groups = {g for g in EXCLUDED_GROUPS if rng.random() < cfg.group_prevalence}
        if rng.random() < cfg.missing_rate:
            age = None
        if rng.random() < cfg.missing_rate:
            bmi = None
        records.append(PatientRecord(
            patient_id=pid, age=age, sex=sex, bmi=bmi, smoking_status=smoking,
            diagnosis=dx, comorbidity_flags=comorb, medications=tuple(sorted(meds)),
            previous_malignancy=binary("previous_malignancy", 0.08),
            symptoms=symptoms, groups=frozenset(groups),
        ))

        amp = mu * (1.0 + cv * rng.standard_normal(mu.size))
        for c, eff in beff.items():
            j = [b[0] for b in SERUM_BANDS].index(c)
            amp[j] += eff * cv[j] * mu[j]
        outlier = i in outlier_rows
        if outlier:
            shift = signal.outlier_sigma * cv * mu
            shift[phe_idx] = 0.0
            amp = amp + shift
        gain = cfg.counts * np.exp(0.2 * rng.standard_normal())
        for r in range(cfg.n_replicates):
            a_rep = amp * (1.0 + cfg.replicate_cv * rng.standard_normal(mu.size))
            peaks = a_rep @ profiles
            c0, c1, c2 = rng.normal([1.0, 0.3, -0.2], [0.1, 0.1, 0.1])
            broad = rng.uniform(0.5, 1.5) * np.exp(-0.5 * ((grid - 1150.0) / 500.0) ** 2)
            bg = cfg.background_level * (c0 + c1 * t + c2 * t**2 + broad)
            g = gain * (1.0 + 0.05 * rng.standard_normal())
            expected = g * (peaks + bg)
            y = expected + np.sqrt(np.maximum(expected, 1.0)) * rng.standard_normal(grid.size)
            if rng.random() < cfg.spike_probability:
                k = rng.integers(grid.size)
                y[k] += g * rng.uniform(*cfg.spike_height)
            spectra.append(Spectrum(pid, r, grid, y, Stage.RAW))
        manifest.append({
            "patient_id": pid,
            "true_class": CLASS_NAMES[dx],
            "planted_outlier": int(outlier),
            "planted_bands": ";".join(f"{c:g}" for c in sorted(beff) if beff[c] != 0.0),
        })
    return SyntheticCohort(grid, spectra, records, manifest)


MANIFEST_COLUMNS = ("patient_id", "true_class", "planted_outlier", "planted_bands")


def write_manifest_csv(path: str | Path, manifest: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, MANIFEST_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(manifest)


def read_manifest_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["planted_outlier"] = int(r["planted_outlier"])
    return rows


# --- cohorts -----------------------------------------------------------------


@dataclass
class Cohort:
    patient_ids: list[str]
    spectra_matrix: np.ndarray
    wavenumbers: np.ndarray
    records: list[PatientRecord]
    labels: np.ndarray
    task: Task
    balance: Balance
    meta: EncodedMeta | None = None

    def __len__(self):
        return len(self.patient_ids)

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx, dtype=int)
        return Cohort(
            [self.patient_ids[i] for i in idx], self.spectra_matrix[idx], self.wavenumbers,
            [self.records[i] for i in idx], self.labels[idx], self.task, self.balance,
            None if self.meta is None else EncodedMeta(self.meta.matrix[idx], self.meta.feature_names, self.meta.scaler_params),
        )

    def filter_sex(self, sex: str | None) -> "Cohort":
        if sex is None:
            return self
        return self.subset([i for i, r in enumerate(self.records) if r.sex == sex])


def patient_means(spectra: Sequence[Spectrum]) -> tuple[np.ndarray | None, dict[str, np.ndarray]]:
    """Mean normalized spectrum per patient over QC-passed replicates."""
    groups: dict[str, list[np.ndarray]] = {}
    grid = None
    for s in spectra:
        if s.stage is not Stage.NORMALIZED:
            raise DataError(f"{s.sample_id}: cohort assembly needs normalized spectra")
        if s.qc is QC.FLAGGED_DIVERGENT:
            continue
        if grid is None:
            grid = s.wavenumbers
        elif not np.array_equal(grid, s.wavenumbers):
            raise DataError(f"{s.sample_id}: grid mismatch")
        groups.setdefault(s.sample_id, []).append(s.intensities)
    return grid, {k: np.mean(v, axis=0) for k, v in groups.items()}


def balanced_cell_size(counts: Mapping) -> int:
    return int(min(counts.values()))


def assemble(
    spectra: Sequence[Spectrum],
    records: Sequence[PatientRecord],
    task: Task | str,
    balance: Balance | str = Balance.UNBALANCED,
    seed: int = 0,
    exclude_samples: Iterable[str] = (),
) -> Cohort:
    """Align per-patient spectra with metadata and binarize labels for ``task``.

    Balanced mode downsamples every (sex, diagnosis) cell to the smallest
    cell before the task filter, mirroring the all-subtype balancing.
    Patients in ``exclude_samples`` (e.g. QC-flagged samples) are dropped.
    """
    task, balance = Task(task), Balance(balance)
    grid, means = patient_means(spectra)
    by_id = {r.patient_id: r for r in records}
    ids = sorted((set(means) & set(by_id)) - set(exclude_samples))
    if not ids:
        raise DataError("no patient has both a QC-passed spectrum and a metadata record")
    if balance is Balance.BALANCED:
        rng = np.random.default_rng(seed)
        cells: dict[tuple[int, str], list[str]] = {}
        for pid in ids:
            r = by_id[pid]
            cells.setdefault((r.diagnosis, r.sex), []).append(pid)
        size = balanced_cell_size({k: len(v) for k, v in cells.items()})
        keep = set()
        for key in sorted(cells):
            members = cells[key]
            keep.update(members[j] for j in rng.choice(len(members), size=size, replace=False))
        ids = sorted(keep)
    pos = task.positive_diagnosis
    ids = [p for p in ids if by_id[p].diagnosis in (1, pos)]
    labels = np.array([int(by_id[p].diagnosis == pos) for p in ids])
    if labels.size == 0 or labels.min() == labels.max():
        raise DataError(f"task {task.value}: a class is empty after filtering/balancing")
    return Cohort(ids, np.vstack([means[p] for p in ids]), grid,
                  [by_id[p] for p in ids], labels, task, balance)


@dataclass(frozen=True)
class SplitPlan:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    folds: tuple[np.ndarray, ...]
    loocv: tuple[np.ndarray, ...]
    seed: int

    def kfold_pairs(self):
        n = sum(len(f) for f in self.folds)
        everything = np.arange(n)
        for f in self.folds:
            yield np.setdiff1d(everything, f), f


def _allocate(counts: Sequence[int], total: int) -> list[int]:
    """Split ``total`` across classes proportionally (largest remainder)."""
    counts = np.asarray(counts, dtype=float)
    raw = counts / counts.sum() * total
    out = np.floor(raw).astype(int)
    for j in np.argsort(-(raw - out), kind="stable")[: total - out.sum()]:
        out[j] += 1
    return out.tolist()


def stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
    n = labels.size
    if k > n:
        raise DataError(f"k={k} folds exceeds n={n}")
    if k < 2:
        raise DataError("k must be >= 2")
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    fold_of = np.empty(n, dtype=int)
    fold_of[order] = np.arange(n) % k
    return tuple(np.sort(np.flatnonzero(fold_of == f)) for f in range(k))


def make_splits(c: Cohort | np.ndarray, k: int = 5, seed: int = 0) -> SplitPlan:
    """Stratified 70/10/20 split, stratified k folds and the LOOCV schedule."""
    labels = c.labels if isinstance(c, Cohort) else np.asarray(c)
    n = labels.size
    if n < 10:
        raise DataError(f"need n >= 10 to split, got {n}")
    if k > n:
        raise DataError(f"k={k} folds exceeds n={n}")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    n_test, n_val = int(round(0.2 * n)), int(round(0.1 * n))
    members = [rng.permutation(np.flatnonzero(labels == cl)) for cl in classes]
    sizes = [m.size for m in members]
    t_alloc, v_alloc = _allocate(sizes, n_test), _allocate(sizes, n_val)
    train, val, test = [], [], []
    for m, nt, nv in zip(members, t_alloc, v_alloc):
        test.append(m[:nt])
        val.append(m[nt:nt + nv])
        train.append(m[nt + nv:])
    folds = stratified_folds(labels, k, rng)
    return SplitPlan(
        np.sort(np.concatenate(train)), np.sort(np.concatenate(val)), np.sort(np.concatenate(test)),
        folds, tuple(np.array([i]) for i in range(n)), seed,
    )


@dataclass
class Matrices:
    """Scaled model inputs for one cohort under train-split statistics."""

    spectra: np.ndarray
    meta: np.ndarray
    spectral_names: list[str]
    meta_names: list[str]
    spectral_mean: np.ndarray
    spectral_scale: np.ndarray
    encoder: MetaEncoder

    @property
    def feature_names(self) -> list[str]:
        return self.spectral_names + self.meta_names

    def combined(self) -> np.ndarray:
        return np.hstack([self.spectra, self.meta])


def spectral_feature_names(d: int) -> list[str]:
    return [f"V{j}" for j in range(d)]


def prepare_matrices(cohort: Cohort, train_idx: np.ndarray) -> Matrices:
    """Standardize spectra and encode metadata with statistics from ``train_idx`` only."""
    train_idx = np.asarray(train_idx, dtype=int)
    Xs = cohort.spectra_matrix
    mean = Xs[train_idx].mean(axis=0)
    scale = Xs[train_idx].std(axis=0)
    scale[scale == 0] = 1.0
    enc = MetaEncoder().fit([cohort.records[i] for i in train_idx])
    em = enc.transform(cohort.records)
    cohort.meta = em
    return Matrices((Xs - mean) / scale, em.matrix, spectral_feature_names(Xs.shape[1]),
                    em.feature_names, mean, scale, enc)
