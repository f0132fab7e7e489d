"""Patient metadata: records, leakage exclusions and the scaled encoding."""

from __future__ import annotations

import configparser
import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

DIAGNOSES = {0: "early_cancer", 1: "control", 2: "polyp"}
SMOKING_CODES = (0, 1, 2, 4)

RETAINED_COMORBIDITIES = (
    "asthma", "hypothyroidism", "hyperthyroidism", "atrial_fibrillation", "ihd",
    "anxiety_depression", "hypercholesterolaemia", "arthritis", "hypertension",
    "type2_diabetes", "copd", "chronic_kidney_disease",
)
EXCLUDED_COMORBIDITIES = (
    "lynch_syndrome", "diverticular_disease", "haemorrhoids",
    "inflammatory_bowel_disease", "microscopic_colitis", "proctitis",
    "angiodysplasia", "hyperplastic_polyps",
)
EXCLUDED_GROUPS = ("substance_abuse",)
SYMPTOMS = (
    "gastrointestinal_bleeding", "weight_loss", "loss_of_appetite",
    "change_in_bowel_habit", "abdominal_pain", "abdominal_mass", "anal_pain",
    "anal_lump", "rectal_mass", "new_anaemia", "looser_stool",
    "increased_frequency", "urgency", "incomplete_emptying", "constipation",
)
NAMED_MEDICATIONS = (
    "bendroflumethiazide", "hypromellose 0.3% eye drops", "paracetamol",
    "amlodipine", "ramipril", "atorvastatin", "simvastatin", "metformin",
    "omeprazole", "lansoprazole", "levothyroxine", "aspirin", "salbutamol",
    "sertraline", "citalopram", "bisoprolol", "apixaban", "warfarin",
    "furosemide", "lisinopril", "losartan", "codeine", "ibuprofen",
    "naproxen", "prednisolone", "gliclazide", "tamsulosin", "finasteride",
    "cetirizine", "colecalciferol",
)
METADATA_FEATURE_COUNT = 701


def normalize_name(name: str) -> str:
    """Lowercase and collapse internal whitespace."""
    return re.sub(r"\s+", " ", name.strip().lower())


@dataclass(frozen=True)
class MetaSchema:
    """Field vocabulary of the metadata; fixes the retained feature count."""

    comorbidities: tuple[str, ...] = RETAINED_COMORBIDITIES
    excluded_comorbidities: tuple[str, ...] = EXCLUDED_COMORBIDITIES
    symptoms: tuple[str, ...] = SYMPTOMS
    medications: tuple[str, ...] = ()
    smoking_codes: tuple[int, ...] = SMOKING_CODES

    @classmethod
    def default(cls, n_features: int = METADATA_FEATURE_COUNT) -> "MetaSchema":
        fixed = 2 + 1 + len(SMOKING_CODES) + 1 + len(RETAINED_COMORBIDITIES) + len(SYMPTOMS)
        n_generic = n_features - fixed - len(NAMED_MEDICATIONS)
        if n_generic < 0:
            raise ValueError(f"n_features must be >= {fixed + len(NAMED_MEDICATIONS)}")
        meds = NAMED_MEDICATIONS + tuple(f"drug_{i:03d}" for i in range(n_generic))
        return cls(medications=meds)

    @property
    def n_features(self) -> int:
        """Encoded width once excluded comorbidities are dropped."""
        return (2 + 1 + len(self.smoking_codes) + 1 + len(self.comorbidities)
                + len(self.symptoms) + len(self.medications))


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age: float | None
    sex: str
    bmi: float | None
    smoking_status: int
    diagnosis: int
    comorbidity_flags: dict[str, bool] = field(default_factory=dict)
    medications: tuple[str, ...] = ()
    previous_malignancy: bool = False
    symptoms: dict[str, bool] = field(default_factory=dict)
    groups: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.age is not None and not self.age > 0:
            raise DataError(f"{self.patient_id}: age must be > 0")
        if self.bmi is not None and not self.bmi > 0:
            raise DataError(f"{self.patient_id}: bmi must be > 0")
        if self.sex not in ("M", "F"):
            raise DataError(f"{self.patient_id}: sex must be M or F, got {self.sex!r}")
        if self.diagnosis not in DIAGNOSES:
            raise DataError(f"{self.patient_id}: diagnosis {self.diagnosis} not in {{0,1,2}}")
        if self.smoking_status not in SMOKING_CODES:
            raise DataError(f"{self.patient_id}: smoking code {self.smoking_status} not in {SMOKING_CODES}")
        object.__setattr__(
            self, "comorbidity_flags",
            {normalize_name(k): bool(v) for k, v in self.comorbidity_flags.items()},
        )
        object.__setattr__(
            self, "medications",
            tuple(sorted({normalize_name(m) for m in self.medications if m.strip()})),
        )
        object.__setattr__(self, "symptoms", {normalize_name(k): bool(v) for k, v in self.symptoms.items()})
        object.__setattr__(self, "groups", frozenset(normalize_name(g) for g in self.groups))

    @property
    def comorbidities(self) -> list[str]:
        return sorted(k for k, v in self.comorbidity_flags.items() if v)


@dataclass(frozen=True)
class ExclusionPolicy:
    excluded_comorbidities: frozenset[str] = frozenset(EXCLUDED_COMORBIDITIES)
    excluded_patient_groups: frozenset[str] = frozenset(EXCLUDED_GROUPS)

    @classmethod
    def empty(cls) -> "ExclusionPolicy":
        return cls(frozenset(), frozenset())

    @classmethod
    def from_file(cls, path: str | Path) -> "ExclusionPolicy":
        """Read ``[exclusions]`` with comma-separated ``comorbidities`` and ``groups``."""
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise ConfigError(f"cannot read exclusion policy {path}")
        if "exclusions" not in cp:
            raise ConfigError(f"{path}: missing [exclusions] section")
        sec = cp["exclusions"]
        unknown = set(sec) - {"comorbidities", "groups"}
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")

        def names(key):
            return frozenset(normalize_name(x) for x in sec.get(key, "").split(",") if x.strip())

        return cls(names("comorbidities"), names("groups"))


def _short_reason(name: str) -> str:
    # "lynch_syndrome" -> "lynch"
    return name.split("_")[0] if name.endswith("_syndrome") else name


def apply_exclusions(
    records: Sequence[PatientRecord], policy: ExclusionPolicy
) -> tuple[list[PatientRecord], list[tuple[PatientRecord, str]]]:
    """Drop records carrying excluded comorbidities or groups.

    Excluded comorbidity keys are also stripped from the kept records so the
    encoder never sees them.
    """
    if not records:
        raise DataError("no records to filter")
    kept, removed = [], []
    for r in records:
        hit = sorted(c for c in r.comorbidities if c in policy.excluded_comorbidities)
        grp = sorted(r.groups & policy.excluded_patient_groups)
        if hit:
            removed.append((r, f"excluded_comorbidity:{_short_reason(hit[0])}"))
        elif grp:
            removed.append((r, f"excluded_group:{grp[0]}"))
        else:
            flags = {k: v for k, v in r.comorbidity_flags.items()
                     if k not in policy.excluded_comorbidities}
            kept.append(replace(r, comorbidity_flags=flags))
    if not kept:
        summary = Counter(reason for _, reason in removed)
        raise DataError(f"every record excluded: {dict(summary)}")
    return kept, removed


@dataclass(frozen=True)
class EncodedMeta:
    matrix: np.ndarray
    feature_names: list[str]
    scaler_params: dict[str, tuple[float, float]]


class MetaEncoder:
    """Fit-on-train encoder: raw {0,1}/numeric columns, then standardization.

    Columns are named ``age``, ``bmi``, ``sex`` (1 = male), ``smoking_<code>``,
    ``previous_malignancy``, ``comorbidity_<name>``, ``symptom_<name>``,
    ``med_<drug>`` and ``<numeric>_missing`` when imputation was needed, and
    are kept in sorted order.
    """

    NUMERIC = ("age", "bmi")

    def __init__(self):
        self.feature_names: list[str] = []
        self.medians: dict[str, float] = {}
        self.mean_: np.ndarray | None = None
        self.scale_: np.ndarray | None = None
        self.unseen_medications: Counter = Counter()

    def _candidate_columns(self, records):
        cols = set(self.NUMERIC) | {"sex", "previous_malignancy"}
        for r in records:
            cols.add(f"smoking_{r.smoking_status}")
            cols.update(f"comorbidity_{k}" for k in r.comorbidity_flags)
            cols.update(f"symptom_{k}" for k in r.symptoms)
            cols.update(f"med_{m}" for m in r.medications)
            for name in self.NUMERIC:
                if getattr(r, name) is None:
                    cols.add(f"{name}_missing")
        return cols

    def _raw(self, records, names):
        index = {n: j for j, n in enumerate(names)}
        X = np.zeros((len(records), len(names)))
        for i, r in enumerate(records):
            for name in self.NUMERIC:
                v = getattr(r, name)
                if v is None:
                    v = self.medians.get(name, 0.0)
                    if f"{name}_missing" in index:
                        X[i, index[f"{name}_missing"]] = 1.0
                if name in index:
                    X[i, index[name]] = v
            if "sex" in index:
                X[i, index["sex"]] = 1.0 if r.sex == "M" else 0.0
            if "previous_malignancy" in index:
                X[i, index["previous_malignancy"]] = float(r.previous_malignancy)
            col = f"smoking_{r.smoking_status}"
            if col in index:
                X[i, index[col]] = 1.0
            for prefix, flags in (("comorbidity_", r.comorbidity_flags), ("symptom_", r.symptoms)):
                for k, v in flags.items():
                    if v and prefix + k in index:
                        X[i, index[prefix + k]] = 1.0
            for m in r.medications:
                j = index.get(f"med_{m}")
                if j is None:
                    self.unseen_medications[m] += 1
                else:
                    X[i, j] = 1.0
        return X

    def fit(self, records: Sequence[PatientRecord]) -> "MetaEncoder":
        if not records:
            raise DataError("cannot fit the encoder on zero records")
        for name in self.NUMERIC:
            vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
            self.medians[name] = float(np.median(vals)) if vals else 0.0
        names = sorted(self._candidate_columns(records))
        X = self._raw(records, names)
        keep = X.max(axis=0) > X.min(axis=0)
        self.feature_names = [n for n, k in zip(names, keep) if k]
        X = X[:, keep]
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.unseen_medications.clear()
        return self

    def raw_matrix(self, records: Sequence[PatientRecord]) -> np.ndarray:
        """Unscaled encoding: booleans as {0,1}, numerics in natural units."""
        if self.mean_ is None:
            raise DataError("encoder not fitted")
        return self._raw(records, self.feature_names)

    def transform(self, records: Sequence[PatientRecord]) -> EncodedMeta:
        before = sum(self.unseen_medications.values())
        X = (self.raw_matrix(records) - self.mean_) / self.scale_
        unseen = sum(self.unseen_medications.values()) - before
        if unseen:
            log.warning("%d medication entries not in the training vocabulary were ignored", unseen)
        params = {n: (float(m), float(s)) for n, m, s in zip(self.feature_names, self.mean_, self.scale_)}
        return EncodedMeta(X, list(self.feature_names), params)

    def fit_transform(self, records: Sequence[PatientRecord]) -> EncodedMeta:
        return self.fit(records).transform(records)

    def binary_mask(self) -> np.ndarray:
        return np.array([n not in self.NUMERIC for n in self.feature_names])

    def positives(self, record: PatientRecord) -> list[str]:
        """Binary features that are switched on for this record."""
        row = self.raw_matrix([record])[0]
        return [n for n, v, b in zip(self.feature_names, row, self.binary_mask()) if b and v == 1.0]

    def state(self) -> dict:
        return {
            "feature_names": self.feature_names,
            "medians": self.medians,
            "mean": self.mean_.tolist(),
            "scale": self.scale_.tolist(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "MetaEncoder":
        enc = cls()
        enc.feature_names = list(state["feature_names"])
        enc.medians = dict(state["medians"])
        enc.mean_ = np.asarray(state["mean"], dtype=np.float64)
        enc.scale_ = np.asarray(state["scale"], dtype=np.float64)
        return enc


# --- CSV ----------------------------------------------------------------------

BASE_COLUMNS = ("patient_id", "age", "sex", "bmi", "smoking_status", "diagnosis",
                "previous_malignancy", "groups", "medications")


def write_metadata_csv(path: str | Path, records: Sequence[PatientRecord]) -> None:
    comorb = sorted({k for r in records for k in r.comorbidity_flags})
    sympt = sorted({k for r in records for k in r.symptoms})
    header = list(BASE_COLUMNS) + [f"comorbidity_{c}" for c in comorb] + [f"symptom_{s}" for s in sympt]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            w.writerow(
                [r.patient_id, "" if r.age is None else f"{r.age:.10g}", r.sex,
                 "" if r.bmi is None else f"{r.bmi:.10g}", r.smoking_status, r.diagnosis,
                 int(r.previous_malignancy), ";".join(sorted(r.groups)), ";".join(r.medications)]
                + [int(r.comorbidity_flags.get(c, False)) for c in comorb]
                + [int(r.symptoms.get(s, False)) for s in sympt]
            )


def _opt_float(s: str) -> float | None:
    s = s.strip()
    return float(s) if s and s.lower() not in ("na", "nan") else None


def read_metadata_csv(path: str | Path) -> list[PatientRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(BASE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        out = []
        for row in reader:
            try:
                out.append(PatientRecord(
                    patient_id=row["patient_id"],
                    age=_opt_float(row["age"]),
                    sex=row["sex"].strip().upper(),
                    bmi=_opt_float(row["bmi"]),
                    smoking_status=int(row["smoking_status"]),
                    diagnosis=int(row["diagnosis"]),
                    previous_malignancy=bool(int(row["previous_malignancy"] or 0)),
                    groups=frozenset(g for g in row["groups"].split(";") if g.strip()),
                    medications=tuple(m for m in row["medications"].split(";") if m.strip()),
                    comorbidity_flags={k[len("comorbidity_"):]: v == "1" for k, v in row.items()
                                       if k.startswith("comorbidity_")},
                    symptoms={k[len("symptom_"):]: v == "1" for k, v in row.items()
                              if k.startswith("symptom_")},
                ))
            except ValueError as exc:
                raise DataError(f"{path}: bad row for {row.get('patient_id')}: {exc}") from exc
    return out


def records_by_id(records: Iterable[PatientRecord]) -> dict[str, PatientRecord]:
    return {r.patient_id: r for r in records}
