"""Clinician-facing reports: a prose text and an itemized markdown variant.

Both renderings come from one :class:`ClinicalReport`, so they carry the
same decisions, lists and tallies.  Identifiers pass through verbatim;
pseudonymization is the caller's responsibility.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .annotate import AnnotatedFeature, ComorbidityProfile, DiseaseEntry, Libraries, OverlapSummary, disease_matches
from .meta import PatientRecord

BMI_UPPER = 25.0
SMOKING_LABELS = {0: "never", 1: "current", 2: "former", 4: "not recorded"}
DISPLAY = {
    "ihd": "IHD", "copd": "COPD", "anxiety_depression": "anxiety and/or depression",
    "type2_diabetes": "type 2 diabetes", "crc": "CRC",
}
TIERS = ("low", "medium", "high")


def human(name: str) -> str:
    return DISPLAY.get(name, name.replace("_", " "))


def _join(items: Sequence[str], empty: str = "none") -> str:
    return ", ".join(items) if items else empty


def tally(x: int, n: int) -> str:
    pct = 100.0 * x / n if n else 0.0
    return f"{x}/{n} ({pct:.1f}%)"


def bmi_excess_percent(bmi: float | None, upper: float = BMI_UPPER) -> float | None:
    """Percent above the upper recommended BMI, floored at zero."""
    if bmi is None:
        return None
    return max(0.0, (bmi - upper) / upper * 100.0)


def risk_tier(polyp: bool | None, crc: bool | None) -> str:
    """high when both models are positive, medium for one, low for none."""
    if polyp is None or crc is None:
        return "undetermined"
    return TIERS[int(polyp) + int(crc)]


@dataclass(frozen=True)
class ModelDecision:
    task: str  # "polyp" or "crc"
    positive: bool | None  # None when the model is unavailable
    probability: float | None = None

    def phrase(self) -> str:
        if self.positive is None:
            return "model unavailable"
        return "recommended colonoscopy" if self.positive else "did not recommend colonoscopy"


@dataclass(frozen=True)
class PathwayFinding:
    condition: str
    matched: tuple[DiseaseEntry, ...]
    library_size: int
    activated: tuple[str, ...]
    absent: tuple[str, ...]

    @property
    def metabolites(self) -> list[str]:
        return list(dict.fromkeys(e.metabolite for e in self.matched))


@dataclass(frozen=True)
class ClinicalReport:
    patient_id: str
    age: float | None
    sex: str
    bmi: float | None
    bmi_excess: float | None
    smoking_code: int
    conditions: tuple[str, ...]
    negatives: tuple[str, ...]
    previous_malignancy: bool
    symptoms: tuple[str, ...]
    absent_symptoms: tuple[str, ...]
    excluded_comorbidities: tuple[str, ...]
    medications: tuple[str, ...]
    polyp: ModelDecision
    crc: ModelDecision
    tier: str
    meta_flagged: tuple[str, ...]
    meta_positives: int
    n_meta_features: int
    spectral_flagged: tuple[str, ...]
    spectral_labels: tuple[tuple[str, str, str], ...]  # feature, wavenumber, label
    observations: tuple[tuple[str, tuple[tuple[str, tuple[str, ...]], ...]], ...]
    findings: tuple[PathwayFinding, ...]
    false_positives: tuple[str, ...]

    def finding(self, condition: str) -> PathwayFinding:
        return next(f for f in self.findings if f.condition == condition)


def _finding(condition: str, libraries: Libraries, matches: dict[str, list[DiseaseEntry]]) -> PathwayFinding:
    prof = libraries.diseases.get(condition)
    entries = prof.entries if prof else ()
    matched = tuple(matches.get(condition, []))
    hit = {e.pathway for e in matched}
    pathways = prof.pathways if prof else []
    return PathwayFinding(condition, matched, len(entries),
                          tuple(p for p in pathways if p in hit), tuple(p for p in pathways if p not in hit))


def compose(polyp: ModelDecision, crc: ModelDecision, flagged: Sequence[str],
            annotated: Sequence[AnnotatedFeature], overlap: OverlapSummary, record: PatientRecord,
            libraries: Libraries, *, positives: Sequence[str], n_meta_features: int,
            retained_comorbidities: Sequence[str], symptoms: Sequence[str],
            excluded_comorbidities: Sequence[str]) -> ClinicalReport:
    """Assemble the report content for one patient.

    ``flagged`` are the consensus features (spectral ``V{j}`` and metadata
    names); ``annotated`` their resolution against the shift library;
    ``positives`` the patient's switched-on binary metadata features.
    """
    flags = record.comorbidity_flags
    conditions = tuple(c for c in retained_comorbidities if flags.get(c, False))
    negatives = tuple(c for c in retained_comorbidities if not flags.get(c, False))
    present_sym = tuple(s for s in symptoms if record.symptoms.get(s, False))
    absent_sym = tuple(s for s in symptoms if not record.symptoms.get(s, False))
    spectral = [a for a in annotated if a.kind == "spectral"]
    flagged = list(dict.fromkeys(flagged))
    spectral_names = {a.feature for a in spectral}
    meta_flagged = tuple(f for f in flagged if f not in spectral_names)
    matches = disease_matches(spectral, libraries.diseases)
    observations = []
    for c in conditions:
        prof: ComorbidityProfile | None = libraries.comorbidities.get(c)
        if prof is not None:
            observations.append((c, prof.groups))
    return ClinicalReport(
        patient_id=record.patient_id, age=record.age, sex=record.sex, bmi=record.bmi,
        bmi_excess=bmi_excess_percent(record.bmi), smoking_code=record.smoking_status,
        conditions=conditions, negatives=negatives, previous_malignancy=record.previous_malignancy,
        symptoms=present_sym, absent_symptoms=absent_sym,
        excluded_comorbidities=tuple(sorted(excluded_comorbidities)), medications=tuple(record.medications),
        polyp=polyp, crc=crc, tier=risk_tier(polyp.positive, crc.positive),
        meta_flagged=meta_flagged, meta_positives=len(positives), n_meta_features=int(n_meta_features),
        spectral_flagged=tuple(f for f in flagged if f in spectral_names),
        spectral_labels=tuple((a.feature, f"{a.wavenumber:g}", a.label) for a in spectral),
        observations=tuple(observations),
        findings=(_finding("polyp", libraries, matches), _finding("crc", libraries, matches)),
        false_positives=overlap.false_positives,
    )


# --- rendering -------------------------------------------------------------------


def _age(r: ClinicalReport) -> str:
    return "not recorded" if r.age is None else f"{r.age:.0f} years"


def _bmi(r: ClinicalReport) -> str:
    if r.bmi is None:
        return "not recorded"
    if r.bmi_excess and r.bmi_excess > 0:
        return f"{r.bmi:.1f} ({r.bmi_excess:.1f}% higher than the recommended weight)"
    return f"{r.bmi:.1f} (within the recommended weight)"


def _sex(r: ClinicalReport) -> str:
    return "male" if r.sex == "M" else "female"


def _smoking(r: ClinicalReport) -> str:
    return f"{SMOKING_LABELS.get(r.smoking_code, 'unknown')} (code {r.smoking_code})"


def _features(n: int) -> str:
    return f"{n} significant feature{'s' if n != 1 else ''}"


def _meta_line(r: ClinicalReport) -> str:
    return (f"{_features(len(r.meta_flagged))} flagged out of {r.meta_positives} positives "
            f"({r.n_meta_features} features evaluated)")


def _model_line(d: ModelDecision) -> str:
    text = d.phrase()
    text = text[0].upper() + text[1:]
    if d.probability is not None and d.positive is not None:
        text += f" (p = {d.probability:.3f})"
    return text


def _tier_line(r: ClinicalReport) -> str:
    if r.tier == "undetermined":
        return "Undetermined: at least one model unavailable"
    return f"{r.tier.capitalize()} risk for CRC based on Raman spectra and metadata"


def render_text(r: ClinicalReport) -> str:
    """Prose variant of the report."""
    lines = [
        f"Patient {r.patient_id}: {_age(r)}, {_sex(r)}, BMI {_bmi(r)}. Smoking status: {_smoking(r)}.",
        "",
        f"Current conditions: {_join([human(c) for c in r.conditions])}. "
        f"Previous malignancy: {'reported' if r.previous_malignancy else 'none reported'}.",
        f"No diagnosis recorded for: {_join([human(c) for c in r.negatives])}.",
        f"Symptoms reported: {_join([human(s) for s in r.symptoms])}. "
        f"Symptoms recorded as absent: {_join([human(s) for s in r.absent_symptoms])}.",
        f"Excluded comorbidities (withheld from the models): {_join([human(c) for c in r.excluded_comorbidities])}.",
        f"Recent medications: {_join(list(r.medications))}.",
        "",
    ]
    for d, name in ((r.polyp, "Polyp"), (r.crc, "CRC")):
        if d.positive is None:
            lines.append(f"{name} model: model unavailable. No {name} decision was produced for this patient.")
        else:
            lines.append(f"{name} model: {d.phrase()}.")
    lines.append(f"Combined assessment: {_tier_line(r)}.")
    lines.append("")
    lines.append(f"Explainer consensus on metadata: {_meta_line(r)}: {_join(list(r.meta_flagged))}.")
    lines.append(f"Explainer consensus on spectra: {_features(len(r.spectral_flagged))} flagged "
                 f"({_join(list(r.spectral_flagged))}).")
    for feat, wn, label in r.spectral_labels:
        lines.append(f"  {feat} at {wn} cm-1: {label}")
    lines.append("")
    for c, groups in r.observations:
        parts = "; ".join(f"{p} ({', '.join(ms)})" for p, ms in groups)
        lines.append(f"Metabolic changes commonly reported with {human(c)}: {parts}.")
    for f in r.findings:
        cond = human(f.condition)
        cond = cond[:1].upper() + cond[1:]
        lines.append(f"{cond} evidence: pathways activated: {_join(list(f.activated))}; "
                     f"altered metabolites: {_join(f.metabolites)}; "
                     f"pathways without supporting peaks: {_join(list(f.absent))}.")
    lines += [
        "",
        "Summary:",
        f"peaks suggesting the presence of a polyp: {tally(len(r.finding('polyp').matched), r.finding('polyp').library_size)}",
        f"peaks suggesting the presence of CRC: {tally(len(r.finding('crc').matched), r.finding('crc').library_size)}",
        f"potential false positives due to medications/comorbidities: {len(r.false_positives)}",
        f"false-positive candidates: {_join(list(r.false_positives))}",
    ]
    return "\n".join(lines) + "\n"


def _items(values: Sequence[str], indent: str = "  ") -> list[str]:
    return [f"{indent}- {v}" for v in values] or [f"{indent}- none"]


def render_structured(r: ClinicalReport) -> str:
    """Itemized markdown variant with the same content as :func:`render_text`."""
    pf, cf = r.finding("polyp"), r.finding("crc")
    out = [
        f"# Clinical report: {r.patient_id}",
        "",
        "## Patient Information",
        f"- Patient ID: {r.patient_id}",
        f"- Age: {_age(r)}",
        f"- BMI: {_bmi(r)}",
        f"- Sex: {_sex(r).capitalize()}",
        f"- Smoker Status: {_smoking(r)}",
        "",
        "## Medical History",
        f"- Current conditions: {_join([human(c) for c in r.conditions])}",
        f"- Previous malignancy: {'reported' if r.previous_malignancy else 'none reported'}",
        "- No diagnoses of the following:",
        *_items([human(c) for c in r.negatives]),
        f"- Symptoms reported: {_join([human(s) for s in r.symptoms])}",
        "- No additional symptoms reported:",
        *_items([human(s) for s in r.absent_symptoms]),
        "- Excluded comorbidities:",
        *_items([human(c) for c in r.excluded_comorbidities]),
        "",
        "## Medications",
        *_items(list(r.medications), ""),
        "",
        "## Risk Assessment",
        f"- Polyp Risk Model: {_model_line(r.polyp)}",
        f"- CRC Risk Model: {_model_line(r.crc)}",
        f"- Classification: {_tier_line(r)}",
        "",
        "## SHAP Analysis",
        f"- Metadata: {_meta_line(r)}",
        f"- Metadata features flagged: {_join(list(r.meta_flagged))}",
        f"- Spectral Dataset: {_features(len(r.spectral_flagged))} flagged: {_join(list(r.spectral_flagged))}",
        "- Spectral annotations:",
        *_items([f"{f} ({wn} cm-1): {label}" for f, wn, label in r.spectral_labels]),
        "",
        "## Metabolic Observations",
    ]
    if not r.observations:
        out.append("- none")
    for c, groups in r.observations:
        out.append(f"- {human(c).capitalize()}:")
        out += _items([f"{p}: {', '.join(ms)}" for p, ms in groups])
    out += ["", "## Test Results"]
    for f, name in ((pf, "Polyp"), (cf, "CRC")):
        out += [
            f"- {name} pathways activated: {_join(list(f.activated))}",
            f"- {name} metabolites altered: {_join(f.metabolites)}",
            f"- {name} pathways without supporting peaks: {_join(list(f.absent))}",
        ]
    out += [
        "",
        "## Summary of Results",
        f"- Peaks suggesting the presence of a polyp: {tally(len(pf.matched), pf.library_size)}",
        f"- Peaks suggesting the presence of CRC: {tally(len(cf.matched), cf.library_size)}",
        f"- Potential false positives due to medications/comorbidities: {len(r.false_positives)}",
        f"- Features potentially leading to false positives: {_join(list(r.false_positives))}",
    ]
    return "\n".join(out) + "\n"


def _section(text: str, title: str) -> list[str]:
    m = re.search(rf"^## {re.escape(title)}\n(.*?)(?=^## |\Z)", text, re.S | re.M)
    return [ln for ln in (m.group(1).splitlines() if m else []) if ln.strip()]


def _value(lines: list[str], key: str) -> str:
    for ln in lines:
        if ln.startswith(f"- {key}: "):
            return ln[len(key) + 4:]
    raise ValueError(f"no {key!r} entry")


def _split_list(s: str) -> list[str]:
    return [] if s == "none" else s.split(", ")


def parse_structured(text: str) -> dict:
    """Recover decisions, tallies and lists from :func:`render_structured` output."""
    risk = _section(text, "Risk Assessment")
    shap = _section(text, "SHAP Analysis")
    summary = _section(text, "Summary of Results")

    def decision(line):
        if line.startswith("Model unavailable"):
            return None
        return line.startswith("Recommended")

    def parse_tally(s):
        m = re.match(r"(\d+)/(\d+) \(([\d.]+)%\)", s)
        return int(m.group(1)), int(m.group(2))

    meds = [ln[2:] for ln in _section(text, "Medications")]
    tier_line = _value(risk, "Classification")
    meta = re.match(r"(\d+) significant features? flagged out of (\d+) positives \((\d+) features evaluated\)",
                    _value(shap, "Metadata"))
    spec = _value(shap, "Spectral Dataset")
    return {
        "polyp": decision(_value(risk, "Polyp Risk Model")),
        "crc": decision(_value(risk, "CRC Risk Model")),
        "tier": "undetermined" if tier_line.startswith("Undetermined") else tier_line.split()[0].lower(),
        "medications": [] if meds == ["none"] else meds,
        "meta_flagged_count": int(meta.group(1)),
        "meta_positives": int(meta.group(2)),
        "n_meta_features": int(meta.group(3)),
        "meta_flagged": _split_list(_value(shap, "Metadata features flagged")),
        "spectral_flagged": _split_list(spec.split(" flagged: ", 1)[1]),
        "polyp_tally": parse_tally(_value(summary, "Peaks suggesting the presence of a polyp")),
        "crc_tally": parse_tally(_value(summary, "Peaks suggesting the presence of CRC")),
        "false_positive_count": int(_value(summary, "Potential false positives due to medications/comorbidities")),
        "false_positives": _split_list(_value(summary, "Features potentially leading to false positives")),
    }


def write_reports(r: ClinicalReport, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    txt, md = out_dir / f"{r.patient_id}.report.txt", out_dir / f"{r.patient_id}.report.md"
    txt.write_text(render_text(r))
    md.write_text(render_structured(r))
    return txt, md
