import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ramanfuse.annotate import annotate_features, disease_matches, load_libraries, overlap_report
from ramanfuse.dataset import GRID
from ramanfuse.meta import RETAINED_COMORBIDITIES, SYMPTOMS, PatientRecord
from ramanfuse.report import (
    ModelDecision, bmi_excess_percent, compose, parse_structured, render_structured, render_text,
    risk_tier, tally, write_reports,
)

LIBS = load_libraries(grid=GRID)
EXCLUDED = ["crohns_disease", "lynch_syndrome"]


def record(**kw):
    base = dict(patient_id="P0001", age=64.0, sex="F", bmi=25.5, smoking_status=2, diagnosis=1,
                comorbidity_flags={c: c == "hypertension" for c in RETAINED_COMORBIDITIES},
                medications=("amlodipine", "ramipril"),
                symptoms={s: s == "weight_loss" for s in SYMPTOMS})
    base.update(kw)
    return PatientRecord(**base)


def build(polyp=True, crc=False, flagged=("V500", "V302", "hypertension"), rec=None, positives=6):
    rec = rec or record()
    ann = annotate_features(flagged, GRID, LIBS.shifts)
    spectral = [a for a in ann if a.kind == "spectral"]
    mets = {e.metabolite for es in disease_matches(spectral, LIBS.diseases).values() for e in es}
    ov = overlap_report(rec.comorbidities, mets, LIBS.comorbidities)
    dec = lambda t, p: ModelDecision(t, p, None if p is None else (0.8 if p else 0.2))  # noqa: E731
    return compose(dec("polyp", polyp), dec("crc", crc), list(flagged), ann, ov, rec, LIBS,
                   positives=[f"f{i}" for i in range(positives)], n_meta_features=701,
                   retained_comorbidities=list(RETAINED_COMORBIDITIES), symptoms=list(SYMPTOMS),
                   excluded_comorbidities=EXCLUDED)


@pytest.mark.parametrize("p,c,tier", [(True, True, "high"), (True, False, "medium"), (False, True, "medium"),
                                      (False, False, "low"), (None, True, "undetermined")])
def test_risk_tier(p, c, tier):
    assert risk_tier(p, c) == tier


def test_tally_format():
    assert tally(6, 10) == "6/10 (60.0%)"
    assert tally(0, 12) == "0/12 (0.0%)"
    assert tally(1, 3) == "1/3 (33.3%)"


def test_bmi_excess():
    assert bmi_excess_percent(25.5) == pytest.approx(2.0)
    assert bmi_excess_percent(22.0) == 0.0
    assert bmi_excess_percent(None) is None


def test_medium_risk_text():
    r = build(True, False)
    txt = render_text(r)
    assert r.tier == "medium"
    assert "Medium risk" in txt
    assert "2.0% higher than the recommended weight" in txt


def test_low_risk_zero_tallies():
    r = build(False, False, flagged=())
    md = render_structured(r)
    assert "Low risk" in md
    assert "polyp: 0/10 (0.0%)" in md and "CRC: 0/12 (0.0%)" in md


def test_model_unavailable_stanza():
    r = build(None, True)
    txt, md = render_text(r), render_structured(r)
    assert "Polyp model: model unavailable" in txt
    assert "Polyp Risk Model: Model unavailable" in md
    assert parse_structured(md)["polyp"] is None
    assert parse_structured(md)["tier"] == "undetermined"


def test_tallies_match_lists():
    r = build(flagged=("V500", "V350", "V302", "hypertension"))
    p = parse_structured(render_structured(r))
    assert p["polyp_tally"] == (len(r.finding("polyp").matched), 10)
    assert p["crc_tally"] == (len(r.finding("crc").matched), 12)
    assert p["false_positive_count"] == len(p["false_positives"]) == len(r.false_positives)
    assert p["meta_flagged_count"] == len(p["meta_flagged"])


def test_false_positive_section():
    # V500 sits at 1400 cm-1: carboxylic acids incl. acetate, shared with hypertension
    r = build(flagged=("V500",))
    assert "acetate" in r.false_positives
    assert "false-positive candidates: " in render_text(r)


def test_meta_line_format():
    r = build(flagged=("V500", "hypertension"), positives=6)
    assert "1 significant feature flagged out of 6 positives (701 features evaluated)" in render_structured(r)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([True, False, None]), st.sampled_from([True, False, None]),
       st.lists(st.integers(0, GRID.size - 1), max_size=8), st.integers(0, 2**31 - 1))
def test_structured_round_trip(p, c, idx, seed):
    r = np.random.default_rng(seed)
    meds = tuple(r.choice(["aspirin", "metformin", "statin", "ppi"], size=r.integers(0, 4), replace=False))
    flagged = [f"V{j}" for j in idx] + (["age"] if seed % 2 else [])
    rep = build(p, c, flagged=tuple(flagged), rec=record(medications=meds), positives=int(seed % 9))
    parsed = parse_structured(render_structured(rep))
    assert parsed["polyp"] == p and parsed["crc"] == c
    assert parsed["tier"] == rep.tier == risk_tier(p, c)
    assert parsed["medications"] == list(rep.medications)
    assert parsed["spectral_flagged"] == list(rep.spectral_flagged)
    assert parsed["meta_flagged"] == list(rep.meta_flagged)
    assert parsed["meta_positives"] == rep.meta_positives
    assert parsed["false_positives"] == list(rep.false_positives)


def test_excluded_names_only_in_their_section():
    md = render_structured(build())
    body = md.split("- Excluded comorbidities:")
    assert len(body) == 2
    rest = body[0] + body[1].split("## Medications", 1)[1]
    for name in ("crohns disease", "lynch syndrome"):
        assert name not in rest


def test_negatives_enumerated():
    r = build()
    assert "hypertension" in r.conditions
    assert set(r.conditions) | set(r.negatives) == set(RETAINED_COMORBIDITIES)
    assert "weight_loss" in r.symptoms and len(r.absent_symptoms) == len(SYMPTOMS) - 1


def test_deterministic_files(tmp_path):
    a = write_reports(build(), tmp_path / "a")
    b = write_reports(build(), tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
    assert a[0].name == "P0001.report.txt" and a[1].name == "P0001.report.md"
