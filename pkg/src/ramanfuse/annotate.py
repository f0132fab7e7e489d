"""Annotation libraries and resolution of flagged features against them.

Three editable CSV libraries ship with the package (illustrative contents):
Raman shift ranges to functional groups, comorbidities to altered
metabolites, and polyp/CRC literature metabolites.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .meta import normalize_name

DIRECTIONS = ("higher", "lower", "either")
CONDITIONS = ("polyp", "crc")
_SPECTRAL = re.compile(r"^V(\d+)$")


@dataclass(frozen=True)
class ShiftAnnotation:
    range_start: float
    range_end: float
    functional_group: str
    candidate_compounds: tuple[str, ...]
    direction_hint: str = "either"

    def __post_init__(self):
        if not self.range_start <= self.range_end:
            raise DataError(f"shift range {self.range_start}-{self.range_end} is inverted")
        if self.direction_hint not in DIRECTIONS:
            raise DataError(f"direction must be one of {DIRECTIONS}")

    def contains(self, wavenumber: float) -> bool:
        return self.range_start <= wavenumber <= self.range_end


@dataclass(frozen=True)
class ComorbidityProfile:
    name: str
    altered_metabolites: tuple[str, ...]
    altered_pathways: tuple[str, ...]
    # pathway -> metabolites, in library order
    groups: tuple[tuple[str, tuple[str, ...]], ...] = ()


@dataclass(frozen=True)
class DiseaseEntry:
    condition: str
    metabolite: str
    pathway: str


@dataclass(frozen=True)
class DiseaseProfile:
    condition: str
    entries: tuple[DiseaseEntry, ...]

    @property
    def metabolites(self) -> list[str]:
        return [e.metabolite for e in self.entries]

    @property
    def pathways(self) -> list[str]:
        return list(dict.fromkeys(e.pathway for e in self.entries))


@dataclass(frozen=True)
class Libraries:
    shifts: tuple[ShiftAnnotation, ...]
    comorbidities: dict[str, ComorbidityProfile]
    diseases: dict[str, DiseaseProfile]


def _split(cell: str) -> tuple[str, ...]:
    return tuple(normalize_name(c) for c in cell.split(";") if c.strip())


def _rows(path: str | Path, required: Sequence[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        return list(reader)


def load_shift_library(path: str | Path, grid: np.ndarray | None = None) -> tuple[ShiftAnnotation, ...]:
    out = []
    for r in _rows(path, ("range_start", "range_end", "group", "compounds", "direction")):
        a = ShiftAnnotation(float(r["range_start"]), float(r["range_end"]), normalize_name(r["group"]),
                            _split(r["compounds"]), normalize_name(r["direction"] or "either"))
        if grid is not None and (a.range_start < grid[0] or a.range_end > grid[-1]):
            raise DataError(f"{path}: range {a.range_start}-{a.range_end} lies outside the grid")
        out.append(a)
    return tuple(out)


def load_comorbidity_library(path: str | Path) -> dict[str, ComorbidityProfile]:
    groups: dict[str, list[tuple[str, tuple[str, ...]]]] = {}
    for r in _rows(path, ("comorbidity", "pathway", "metabolites")):
        groups.setdefault(normalize_name(r["comorbidity"]), []).append((normalize_name(r["pathway"]), _split(r["metabolites"])))
    out = {}
    for name, g in groups.items():
        mets = tuple(dict.fromkeys(m for _, ms in g for m in ms))
        out[name] = ComorbidityProfile(name, mets, tuple(dict.fromkeys(p for p, _ in g)), tuple(g))
    return out


def load_disease_library(path: str | Path) -> dict[str, DiseaseProfile]:
    entries: dict[str, list[DiseaseEntry]] = {}
    for r in _rows(path, ("condition", "metabolite", "pathway")):
        cond = normalize_name(r["condition"])
        if cond not in CONDITIONS:
            raise DataError(f"{path}: condition {cond!r} not in {CONDITIONS}")
        entries.setdefault(cond, []).append(DiseaseEntry(cond, normalize_name(r["metabolite"]), normalize_name(r["pathway"])))
    return {c: DiseaseProfile(c, tuple(e)) for c, e in entries.items()}


def default_library_path(name: str) -> Path:
    return Path(str(resources.files("ramanfuse") / "data" / name))


def load_libraries(shifts: str | Path | None = None, comorbidities: str | Path | None = None,
                   diseases: str | Path | None = None, grid: np.ndarray | None = None) -> Libraries:
    """Load the three libraries; any path left as None uses the shipped default."""
    return Libraries(
        load_shift_library(shifts or default_library_path("shift_annotations.csv"), grid),
        load_comorbidity_library(comorbidities or default_library_path("comorbidity_metabolites.csv")),
        load_disease_library(diseases or default_library_path("disease_metabolites.csv")),
    )


# --- resolution ----------------------------------------------------------------


@dataclass(frozen=True)
class AnnotatedFeature:
    feature: str
    kind: str  # "spectral" or "metadata"
    wavenumber: float | None
    annotations: tuple[ShiftAnnotation, ...]

    @property
    def annotated(self) -> bool:
        return self.kind == "metadata" or bool(self.annotations)

    @property
    def label(self) -> str:
        if self.kind == "metadata":
            return self.feature
        if not self.annotations:
            return "unannotated"
        return "; ".join(dict.fromkeys(a.functional_group for a in self.annotations))

    @property
    def compounds(self) -> list[str]:
        return list(dict.fromkeys(c for a in self.annotations for c in a.candidate_compounds))


def spectral_index(feature: str) -> int | None:
    m = _SPECTRAL.match(feature)
    return int(m.group(1)) if m else None


def annotate_features(features: Iterable[str], grid: np.ndarray, shifts: Sequence[ShiftAnnotation]) -> list[AnnotatedFeature]:
    """Resolve each feature once: ``V{j}`` to every shift range containing
    ``grid[j]``, anything else passed through as a metadata feature."""
    grid = np.asarray(grid, dtype=np.float64)
    out, seen = [], set()
    for f in features:
        if f in seen:
            continue
        seen.add(f)
        j = spectral_index(f)
        if j is None:
            out.append(AnnotatedFeature(f, "metadata", None, ()))
            continue
        if j >= grid.size:
            raise DataError(f"feature {f} indexes past the {grid.size}-point grid")
        w = float(grid[j])
        out.append(AnnotatedFeature(f, "spectral", w, tuple(a for a in shifts if a.contains(w))))
    return out


def disease_matches(annotated: Sequence[AnnotatedFeature], diseases: dict[str, DiseaseProfile]) -> dict[str, list[DiseaseEntry]]:
    """Disease-library entries whose metabolite is a candidate compound of any feature."""
    compounds = {c for a in annotated for c in a.compounds}
    return {cond: [e for e in prof.entries if e.metabolite in compounds] for cond, prof in sorted(diseases.items())}


@dataclass(frozen=True)
class OverlapSummary:
    false_positives: tuple[str, ...]
    sources: dict[str, tuple[str, ...]]  # metabolite -> comorbidities implicating it

    @property
    def count(self) -> int:
        return len(self.false_positives)


def overlap_report(patient_comorbidities: Iterable[str], matched_metabolites: Iterable[str],
                   comorbidities: dict[str, ComorbidityProfile]) -> OverlapSummary:
    """Metabolites implicated both by the patient's comorbidities and the disease evidence."""
    evidence = {normalize_name(m) for m in matched_metabolites}
    sources: dict[str, set[str]] = {}
    for c in sorted({normalize_name(c) for c in patient_comorbidities}):
        prof = comorbidities.get(c)
        if prof is None:
            continue
        for m in prof.altered_metabolites:
            if m in evidence:
                sources.setdefault(m, set()).add(c)
    fps = tuple(sorted(sources))
    return OverlapSummary(fps, {m: tuple(sorted(sources[m])) for m in fps})
