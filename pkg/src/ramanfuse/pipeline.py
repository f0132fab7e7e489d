"""Pipeline stages behind the command-line interface.

Each stage reads its predecessor's files under the output directory and
writes its own, so any stage can be rerun in isolation.  Layout::

    synth/       spectra_raw.csv, metadata.csv, manifest.csv
    preprocess/  spectra_normalized.csv, qc.csv, mean_spectra.png
    train/<task>/  split.json, scaling.json, <variant>.csx(+.json), rf_<group>.csx, trace_<variant>.csv
    evaluate/<task>/  performance.csv, forest.csv, cv.csv, roc.png
    explain/<task>/   <patient>.attributions.csv, <patient>.consensus.csv, <patient>.decision.json, <patient>.shap.png
    report/      <patient>.report.txt, <patient>.report.md
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plotting
from .annotate import annotate_features, disease_matches, load_libraries, overlap_report
from .config import RunConfig, preprocess_config
from .dataset import (
    CLASS_NAMES, Cohort, Matrices, SignalSpec, SplitPlan, Task, assemble, generate_synthetic,
    make_splits, patient_means, prepare_matrices, spectral_feature_names, stratified_folds,
    write_manifest_csv,
)
from .errors import ConfigError, DataError
from .explain import (
    background_rows, consensus, explain_seed, lime_explain, read_consensus_csv, shap_kernel,
    write_attributions_csv, write_consensus_csv,
)
from .meta import (
    RETAINED_COMORBIDITIES, SYMPTOMS, ExclusionPolicy, MetaEncoder,
    MetaSchema, PatientRecord, apply_exclusions, read_metadata_csv, records_by_id, write_metadata_csv,
)
from .models.forest import SUBMODELS, ForestConfig, train_forest
from .models.fusion import FusionModel, TrainConfig, default_model, single_modality_model, train, vanilla_model
from .models.metrics import (
    CVResult, EvalReport, cross_validate, evaluate_scores, write_forest_csv, write_performance_csv,
)
from .models.serialize import load_forest, load_fusion, save_forest, save_fusion
from .report import ModelDecision, compose, write_reports
from .spectra import (
    QC, Stage, preprocess_many, quality_control, read_qc_csv, read_spectra_csv, write_qc_csv,
    write_spectra_csv,
)

log = logging.getLogger(__name__)

STAGES = ("synth", "preprocess", "train", "evaluate", "explain", "report")
MODEL_NAMES = {
    "early": "Early fusion", "joint": "Joint fusion", "late": "Late fusion",
    "vanilla": "Vanilla ANN", "spectra_only": "Spectra-only ANN", "meta_only": "Metadata-only ANN",
}


def stage_dir(cfg: RunConfig, stage: str, *parts: str) -> Path:
    d = cfg.output_dir.joinpath(stage, *parts)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _input(cfg: RunConfig, key: str | None, default: Path) -> Path:
    p = Path(cfg["paths"][key]) if key and cfg["paths"][key] else default
    if not p.is_file():
        raise DataError(f"missing input {p}; run the preceding stage or set paths.{key}")
    return p


# --- synth -----------------------------------------------------------------------


def signal_spec(cfg: RunConfig) -> SignalSpec:
    s = cfg["synth"]
    name = s["signal"]
    if name == "null":
        spec = SignalSpec.null()
    elif name == "separable":
        spec = SignalSpec.separable()
    elif name == "split":
        spec = SignalSpec.split(s["spectral_effect"], s["meta_effect"])
    else:
        spec = SignalSpec.default()
    if s["outlier_fraction"] is not None:
        spec = dataclasses.replace(spec, outlier_fraction=s["outlier_fraction"])
    return spec


def run_synth(cfg: RunConfig) -> list[Path]:
    syn = generate_synthetic(cfg["synth"]["n_patients"], signal_spec(cfg), cfg.seed)
    d = stage_dir(cfg, "synth")
    write_spectra_csv(d / "spectra_raw.csv", syn.spectra)
    write_metadata_csv(d / "metadata.csv", syn.records)
    write_manifest_csv(d / "manifest.csv", syn.manifest)
    log.info("synth: %d patients, %d spectra", len(syn.records), len(syn.spectra))
    return [d / "spectra_raw.csv", d / "metadata.csv", d / "manifest.csv"]


# --- preprocess --------------------------------------------------------------------


def _metadata_path(cfg):
    return _input(cfg, "metadata", cfg.output_dir / "synth" / "metadata.csv")


def run_preprocess(cfg: RunConfig) -> list[Path]:
    raw = read_spectra_csv(_input(cfg, "spectra", cfg.output_dir / "synth" / "spectra_raw.csv"))
    records = read_metadata_csv(_metadata_path(cfg))
    pcfg = preprocess_config(cfg)
    conditions = {r.patient_id: CLASS_NAMES[r.diagnosis] for r in records}
    checked, qc = quality_control(preprocess_many(raw, pcfg), conditions, pcfg.baseline_divergence_k)
    d = stage_dir(cfg, "preprocess")
    write_spectra_csv(d / "spectra_normalized.csv", checked)
    write_qc_csv(d / "qc.csv", qc)
    n_flag = sum(r.qc is QC.FLAGGED_DIVERGENT for r in qc)
    log.info("preprocess: %d spectra, %d replicates flagged divergent", len(checked), n_flag)
    groups: dict[str, list[np.ndarray]] = {}
    for s in checked:
        if s.qc is QC.PASSED:
            groups.setdefault(conditions.get(s.sample_id, "unknown"), []).append(s.intensities)
    grid = checked[0].wavenumbers
    means = {k: np.mean(v, axis=0) for k, v in sorted(groups.items())}
    stds = {k: np.std(v, axis=0) for k, v in sorted(groups.items())}
    plotting.mean_spectra_figure(grid, means, d / "mean_spectra.png", stds, "Condition mean spectra")
    return [d / "spectra_normalized.csv", d / "qc.csv", d / "mean_spectra.png"]


def load_checked_spectra(cfg: RunConfig):
    """Normalized spectra with their QC flags, plus samples flagged by majority."""
    d = cfg.output_dir / "preprocess"
    spectra = read_spectra_csv(_input(cfg, None, d / "spectra_normalized.csv"), Stage.NORMALIZED)
    rows = read_qc_csv(_input(cfg, None, d / "qc.csv"))
    flags = {(r["sample_id"], r["replicate"]): QC(r["qc"]) for r in rows}
    if len(flags) != len(spectra):
        raise DataError("qc.csv does not match the normalized spectra")
    out = []
    for s in spectra:
        key = (s.sample_id, s.replicate_index)
        if key not in flags:
            raise DataError(f"no QC row for {key}")
        out.append(dataclasses.replace(s, qc=flags[key]))
    votes: dict[str, list[bool]] = {}
    for r in rows:
        votes.setdefault(r["sample_id"], []).append(r["qc"] == QC.FLAGGED_DIVERGENT.value)
    flagged = {sid for sid, v in votes.items() if 2 * sum(v) > len(v)}
    return out, flagged


def exclusion_policy(cfg: RunConfig) -> ExclusionPolicy:
    p = cfg["paths"]["exclusion_policy"]
    if p is None:
        return ExclusionPolicy()
    if not Path(p).is_file():
        raise ConfigError(f"exclusion policy {p} not found")
    return ExclusionPolicy.from_file(p)


def kept_records(cfg: RunConfig) -> tuple[list[PatientRecord], list[tuple[PatientRecord, str]]]:
    return apply_exclusions(read_metadata_csv(_metadata_path(cfg)), exclusion_policy(cfg))


# --- task data -------------------------------------------------------------------


@dataclass
class TaskData:
    task: Task
    cohort: Cohort
    plan: SplitPlan
    mats: Matrices


def _plan_to_json(c: Cohort, plan: SplitPlan) -> dict:
    ids = c.patient_ids
    return {
        "seed": plan.seed,
        "train": [ids[i] for i in plan.train], "val": [ids[i] for i in plan.val],
        "test": [ids[i] for i in plan.test], "folds": [[ids[i] for i in f] for f in plan.folds],
    }


def _plan_from_json(c: Cohort, data: dict) -> SplitPlan:
    pos = {p: i for i, p in enumerate(c.patient_ids)}
    try:
        idx = {k: np.array(sorted(pos[p] for p in data[k]), dtype=int) for k in ("train", "val", "test")}
        folds = tuple(np.array(sorted(pos[p] for p in f), dtype=int) for f in data["folds"])
    except KeyError as exc:
        raise DataError(f"split.json references patient {exc} absent from the cohort") from None
    return SplitPlan(idx["train"], idx["val"], idx["test"], folds,
                     tuple(np.array([i]) for i in range(len(c))), data["seed"])


def _matrices_from_state(c: Cohort, state: dict) -> Matrices:
    mean, scale = np.asarray(state["spectral_mean"]), np.asarray(state["spectral_scale"])
    enc = MetaEncoder.from_state(state["encoder"])
    em = enc.transform(c.records)
    c.meta = em
    return Matrices((c.spectra_matrix - mean) / scale, em.matrix, spectral_feature_names(mean.size),
                    em.feature_names, mean, scale, enc)


def task_data(cfg: RunConfig, task: str, fresh: bool = False) -> TaskData:
    """Cohort, split plan and scaled matrices for ``task``.

    With ``fresh`` the split and scaling are computed and stored; otherwise
    they are read back from the training stage.
    """
    spectra, flagged = load_checked_spectra(cfg)
    kept, _ = kept_records(cfg)
    t = Task(task)
    c = assemble(spectra, kept, t, cfg["dataset"]["balance"], cfg.seed, flagged)
    d = cfg.output_dir / "train" / t.value
    if fresh:
        plan = make_splits(c, cfg["dataset"]["folds"], cfg.seed)
        mats = prepare_matrices(c, plan.train)
        d.mkdir(parents=True, exist_ok=True)
        (d / "split.json").write_text(json.dumps(_plan_to_json(c, plan), indent=1) + "\n")
        state = {"spectral_mean": mats.spectral_mean.tolist(), "spectral_scale": mats.spectral_scale.tolist(),
                 "encoder": mats.encoder.state()}
        (d / "scaling.json").write_text(json.dumps(state) + "\n")
    else:
        plan = _plan_from_json(c, json.loads(_input(cfg, None, d / "split.json").read_text()))
        mats = _matrices_from_state(c, json.loads(_input(cfg, None, d / "scaling.json").read_text()))
    return TaskData(t, c, plan, mats)


# --- models ------------------------------------------------------------------------


def train_config(cfg: RunConfig, seed: int | None = None) -> TrainConfig:
    m = cfg["models"]
    try:
        return TrainConfig(m["lr"], m["beta1"], m["beta2"], m["eps"], m["batch_size"], m["max_epochs"],
                           m["patience"], m["threshold"], cfg.seed if seed is None else seed, m["late_stack_folds"])
    except DataError as exc:
        raise ConfigError(f"models: {exc}") from None


def build_model(cfg: RunConfig, variant: str, d_s: int, d_m: int, seed: int) -> FusionModel:
    m = cfg["models"]
    if variant == "vanilla":
        return vanilla_model(d_s, m["vanilla_hidden"], seed)
    if variant in ("spectra_only", "meta_only"):
        mod = variant.split("_")[0]
        return single_modality_model(mod, d_s if mod == "spectra" else d_m, seed, m["dropout"], m["early_hidden"])
    hidden = {"early": m["early_hidden"], "branch": m["branch_hidden"], "head": m["head_hidden"],
              "late_branch": m["late_branch_hidden"], "late_head": m["late_head_hidden"]}
    return default_model(variant, d_s, d_m, seed, m["dropout"], hidden)


def forest_config(cfg: RunConfig) -> ForestConfig:
    m = cfg["models"]
    return ForestConfig(m["rf_trees"], m["rf_max_depth"], "sqrt", m["rf_min_leaf"], cfg.seed)


def _sex_rows(c: Cohort, idx: np.ndarray, sex: str | None) -> np.ndarray:
    return idx if sex is None else np.array([i for i in idx if c.records[i].sex == sex], dtype=int)


def _write_trace(path: Path, trace: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "val_loss", "val_accuracy"])
        for t in trace:
            w.writerow([t["epoch"], f"{t['loss']:.8g}", f"{t['val_loss']:.8g}", f"{t['val_accuracy']:.6g}"])


def run_train(cfg: RunConfig) -> list[Path]:
    out = []
    kept, removed = kept_records(cfg)
    d0 = stage_dir(cfg, "train")
    with open(d0 / "exclusions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "reason"])
        w.writerows(sorted((r.patient_id, why) for r, why in removed))
    out.append(d0 / "exclusions.csv")
    for task in cfg["dataset"]["tasks"]:
        td = task_data(cfg, task, fresh=True)
        d = stage_dir(cfg, "train", td.task.value)
        out += [d / "split.json", d / "scaling.json"]
        y, M = td.cohort.labels, td.mats
        for v in cfg["models"]["variants"]:
            model = build_model(cfg, v, M.spectra.shape[1], M.meta.shape[1], cfg.seed)
            model = train(model, M.spectra, M.meta, y, td.plan.train, td.plan.val, train_config(cfg))
            save_fusion(model, d / f"{v}.csx", {"task": td.task.value, "model": v})
            _write_trace(d / f"trace_{v}.csv", model.training_trace)
            out += [d / f"{v}.csx", d / f"{v}.csx.json", d / f"trace_{v}.csv"]
            log.info("train %s/%s: %d epochs", td.task.short, v, len(model.training_trace))
        for name, sex in SUBMODELS.items():
            rows = _sex_rows(td.cohort, td.plan.train, sex)
            forest = train_forest(td.cohort.spectra_matrix, y, rows, forest_config(cfg))
            path = d / f"rf_{name.lower()}.csx"
            save_forest(forest, path, {"task": td.task.value, "submodel": name})
            out += [path, Path(str(path) + ".json")]
    return out


# --- evaluate --------------------------------------------------------------------------


def _fusion_cv(cfg: RunConfig, td: TaskData, variant: str) -> CVResult:
    y = td.cohort.labels
    jobs = cfg["run"]["jobs"]

    def fit_predict(tr, te):
        # fresh scaling per fold; a stratified eighth of the fold's training rows monitors stopping
        rng = np.random.default_rng(cfg.seed)
        inner = stratified_folds(y[tr], 8, rng)
        val = tr[inner[0]]
        fit = np.setdiff1d(tr, val)
        mats = prepare_matrices(td.cohort, fit)
        model = build_model(cfg, variant, mats.spectra.shape[1], mats.meta.shape[1], cfg.seed)
        model = train(model, mats.spectra, mats.meta, y, fit, val, train_config(cfg))
        return model.predict_proba(mats.spectra[te], mats.meta[te])

    return cross_validate(fit_predict, y, td.plan.folds, cfg["models"]["threshold"], jobs)


def _forest_cv(cfg: RunConfig, c: Cohort, loocv: bool) -> CVResult:
    y = c.labels
    fcfg = forest_config(cfg)

    def fit_predict(tr, te):
        return train_forest(c.spectra_matrix, y, tr, fcfg).predict_proba(c.spectra_matrix[te])

    if loocv:
        folds = tuple(np.array([i]) for i in range(len(c)))
        scheme = "loocv"
    else:
        folds = stratified_folds(y, cfg["dataset"]["folds"], np.random.default_rng(cfg.seed))
        scheme = "stratified_kfold"
    return cross_validate(fit_predict, y, folds, cfg["models"]["threshold"], cfg["run"]["jobs"], scheme)


def _write_cv(path: Path, rows: list[tuple[str, CVResult]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "scheme", "n_folds", "metric", "mean", "std"])
        for name, res in rows:
            for metric in ("accuracy", "precision", "recall", "auc", "f1"):
                w.writerow([name, res.scheme, len(res), metric, f"{res.mean[metric]:.6f}", f"{res.std[metric]:.6f}"])


def run_evaluate(cfg: RunConfig) -> list[Path]:
    out = []
    thr = cfg["models"]["threshold"]
    for task in cfg["dataset"]["tasks"]:
        td = task_data(cfg, task)
        src = cfg.output_dir / "train" / td.task.value
        d = stage_dir(cfg, "evaluate", td.task.value)
        M, y, test = td.mats, td.cohort.labels, td.plan.test
        rows: list[tuple[str, EvalReport]] = []
        cv_rows: list[tuple[str, CVResult]] = []
        curves = {}
        for v in cfg["models"]["variants"]:
            model, _ = load_fusion(_input(cfg, None, src / f"{v}.csx"))
            rep = evaluate_scores(y[test], model.predict_proba(M.spectra[test], M.meta[test]), thr)
            if cfg["models"]["fusion_cv"]:
                res = _fusion_cv(cfg, td, v)
                rep.cv_mean, rep.cv_std = res.mean, res.std
                cv_rows.append((MODEL_NAMES[v], res))
            rows.append((MODEL_NAMES[v], rep))
            curves[MODEL_NAMES[v]] = (rep.roc_points, rep.auc)
        write_performance_csv(d / "performance.csv", rows)
        out.append(d / "performance.csv")

        class_names = {0: "Control", 1: "Polyp" if td.task.short == "polyp" else "CRC"}
        forest_rows = []
        for name, sex in SUBMODELS.items():
            forest, _ = load_forest(_input(cfg, None, src / f"rf_{name.lower()}.csx"))
            rows_t = _sex_rows(td.cohort, test, sex)
            rep = evaluate_scores(y[rows_t], forest.predict_proba(td.cohort.spectra_matrix[rows_t]), thr)
            sub = td.cohort.filter_sex(sex)
            if cfg["models"]["rf_cv"]:
                res = _forest_cv(cfg, sub, loocv=False)
                rep.cv_mean, rep.cv_std = res.mean, res.std
                cv_rows.append((f"RF {name}", res))
            if cfg["models"]["rf_loocv"]:
                cv_rows.append((f"RF {name}", _forest_cv(cfg, sub, loocv=True)))
            forest_rows.append((f"RF {name}", rep, class_names))
            if sex is None:
                curves[f"RF {name}"] = (rep.roc_points, rep.auc)
        write_forest_csv(d / "forest.csv", forest_rows)
        _write_cv(d / "cv.csv", cv_rows)
        plotting.roc_figure(curves, d / "roc.png", f"{td.task.short} vs control (test split)")
        out += [d / "forest.csv", d / "cv.csv", d / "roc.png"]
    return out


# --- explain ---------------------------------------------------------------------------


def report_patients(cfg: RunConfig) -> list[str]:
    sel = cfg["report"]["patients"]
    if sel and sel != ("auto",):
        return list(sel)
    task = cfg["dataset"]["tasks"][0]
    split = json.loads(_input(cfg, None, cfg.output_dir / "train" / Task(task).value / "split.json").read_text())
    return sorted(split["test"])[: cfg["report"]["n_patients"]]


def _patient_rows(cfg: RunConfig, td: TaskData, pids: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Scaled inputs for arbitrary patients, including those outside this task's cohort."""
    spectra, _ = load_checked_spectra(cfg)
    _, means = patient_means(spectra)
    kept = records_by_id(kept_records(cfg)[0])
    missing = [p for p in pids if p not in means or p not in kept]
    if missing:
        raise DataError(f"no QC-passed spectra or retained metadata for {missing}")
    M = td.mats
    xs = (np.vstack([means[p] for p in pids]) - M.spectral_mean) / M.spectral_scale
    xm = M.encoder.transform([kept[p] for p in pids]).matrix
    return xs, xm


def run_explain(cfg: RunConfig) -> list[Path]:
    out = []
    e = cfg["explain"]
    pids = report_patients(cfg)
    for task in cfg["dataset"]["tasks"]:
        td = task_data(cfg, task)
        M = td.mats
        model, _ = load_fusion(_input(cfg, None, cfg.output_dir / "train" / td.task.value / f"{e['model']}.csx"))
        d_s = M.spectra.shape[1]

        def f(X, model=model, d_s=d_s):
            return model.predict_proba(X[:, :d_s], X[:, d_s:])

        names = M.feature_names
        bg = background_rows(M.combined()[td.plan.train], e["background"], cfg.seed)
        binary = np.r_[np.zeros(d_s, bool), M.encoder.binary_mask()]
        lo = np.r_[np.zeros(d_s), (0.0 - M.encoder.mean_) / M.encoder.scale_]
        hi = np.r_[np.ones(d_s), (1.0 - M.encoder.mean_) / M.encoder.scale_]
        xs, xm = _patient_rows(cfg, td, pids)
        X = np.hstack([xs, xm])
        d = stage_dir(cfg, "explain", td.task.value)
        for pid, x in zip(pids, X):
            shap = shap_kernel(f, x, bg, e["shap_samples"], explain_seed(cfg.seed, pid, "shap_kernel"), names, pid,
                               max_background=e["background"])
            lime = lime_explain(f, x, e["lime_perturbations"], e["lime_kernel_width"], e["top_k"],
                                explain_seed(cfg.seed, pid, "lime"), names, pid,
                                binary_mask=binary, binary_levels=(lo, hi))
            cs = consensus(shap, lime, e["top_k"], td.task.short)
            prob = float(f(x[None, :])[0])
            write_attributions_csv(d / f"{pid}.attributions.csv", [shap, lime])
            write_consensus_csv(d / f"{pid}.consensus.csv", cs)
            decision = {"patient_id": pid, "task": td.task.value, "model": e["model"],
                        "probability": round(prob, 10), "positive": bool(prob >= cfg["models"]["threshold"])}
            (d / f"{pid}.decision.json").write_text(json.dumps(decision, indent=1, sort_keys=True) + "\n")
            plotting.attribution_figure(shap.ranked()[: e["top_k"]], d / f"{pid}.shap.png",
                                        f"{pid}: top SHAP attributions ({td.task.short})")
            out += [d / f"{pid}.{s}" for s in ("attributions.csv", "consensus.csv", "decision.json", "shap.png")]
    return out


# --- report --------------------------------------------------------------------------


def run_report(cfg: RunConfig) -> list[Path]:
    p = cfg["paths"]
    spectra, _ = load_checked_spectra(cfg)
    grid = spectra[0].wavenumbers
    libs = load_libraries(p["shift_library"], p["comorbidity_library"], p["disease_library"], grid)
    policy = exclusion_policy(cfg)
    kept = records_by_id(kept_records(cfg)[0])
    encoder = None
    for task in cfg["dataset"]["tasks"]:
        state = cfg.output_dir / "train" / Task(task).value / "scaling.json"
        if state.is_file():
            encoder = MetaEncoder.from_state(json.loads(state.read_text())["encoder"])
            break
    if encoder is None:
        raise DataError("no trained task found; run the train stage first")
    d = stage_dir(cfg, "report")
    out = []
    for pid in report_patients(cfg):
        if pid not in kept:
            raise DataError(f"patient {pid} has no retained metadata record")
        rec = kept[pid]
        decisions, flagged = {}, []
        for t in Task:
            base = cfg.output_dir / "explain" / t.value
            dec_path, cs_path = base / f"{pid}.decision.json", base / f"{pid}.consensus.csv"
            if dec_path.is_file() and t.value in cfg["dataset"]["tasks"]:
                dec = json.loads(dec_path.read_text())
                decisions[t.short] = ModelDecision(t.short, dec["positive"], dec["probability"])
                if cs_path.is_file():
                    flagged += read_consensus_csv(cs_path).features()
            else:
                decisions[t.short] = ModelDecision(t.short, None)
        flagged = list(dict.fromkeys(flagged))
        annotated = annotate_features(flagged, grid, libs.shifts)
        matched = disease_matches([a for a in annotated if a.kind == "spectral"], libs.diseases)
        metabolites = {e.metabolite for entries in matched.values() for e in entries}
        overlap = overlap_report(rec.comorbidities, metabolites, libs.comorbidities)
        retained = [c for c in RETAINED_COMORBIDITIES if c in rec.comorbidity_flags] + sorted(
            set(rec.comorbidity_flags) - set(RETAINED_COMORBIDITIES))
        symptoms = [s for s in SYMPTOMS if s in rec.symptoms] + sorted(set(rec.symptoms) - set(SYMPTOMS))
        report = compose(
            decisions["polyp"], decisions["crc"], flagged, annotated, overlap, rec, libs,
            positives=encoder.positives(rec), n_meta_features=MetaSchema.default().n_features,
            retained_comorbidities=retained, symptoms=symptoms,
            excluded_comorbidities=sorted(policy.excluded_comorbidities),
        )
        out += list(write_reports(report, d))
    return out


RUNNERS = {
    "synth": run_synth, "preprocess": run_preprocess, "train": run_train,
    "evaluate": run_evaluate, "explain": run_explain, "report": run_report,
}
