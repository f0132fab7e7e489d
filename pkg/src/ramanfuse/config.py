"""Run configuration: one INI file, one section per module, typed keys.

Unknown sections or keys are rejected.  Command-line flags are applied on
top as ``section.key=value`` overrides, so every flag maps to one key.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(s: str):
        return None if s.strip().lower() in ("", "none") else conv(s)
    return parse


def _list(conv: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(s: str):
        return tuple(conv(p.strip()) for p in s.split(",") if p.strip())
    return parse


_str = str.strip
_path = _opt(str.strip)

# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], str]]] = {
    "run": {
        "seed": (int, "0"),
        "jobs": (int, "1"),
    },
    "paths": {
        "output_dir": (_str, "out"),
        "spectra": (_path, ""),
        "metadata": (_path, ""),
        "exclusion_policy": (_path, ""),
        "shift_library": (_path, ""),
        "comorbidity_library": (_path, ""),
        "disease_library": (_path, ""),
    },
    "synth": {
        "n_patients": (int, "600"),
        "signal": (_str, "default"),
        "spectral_effect": (float, "1.0"),
        "meta_effect": (float, "1.0"),
        "outlier_fraction": (_opt(float), ""),
    },
    "preprocess": {
        "sg_half_width": (int, "5"),
        "sg_order": (int, "3"),
        "bg_degree": (int, "5"),
        "bg_max_iter": (int, "100"),
        "bg_tol": (float, "1e-6"),
        "cosmic_threshold_k": (float, "8"),
        "phe_window": (_list(float), "995, 1010"),
        "phe_scale": (float, "1"),
        "baseline_divergence_k": (float, "3"),
    },
    "dataset": {
        "tasks": (_list(_str), "polyp_vs_control, crc_vs_control"),
        "balance": (_str, "unbalanced"),
        "folds": (int, "5"),
    },
    "models": {
        "variants": (_list(_str), "early, joint, late, vanilla"),
        "lr": (float, "1e-3"),
        "beta1": (float, "0.9"),
        "beta2": (float, "0.999"),
        "eps": (float, "1e-8"),
        "batch_size": (int, "32"),
        "max_epochs": (int, "500"),
        "patience": (int, "25"),
        "threshold": (float, "0.5"),
        "dropout": (float, "0.3"),
        "early_hidden": (_list(int), "256, 64"),
        "branch_hidden": (_list(int), "128"),
        "head_hidden": (_list(int), "64"),
        "late_branch_hidden": (_list(int), "128, 32"),
        "late_head_hidden": (_list(int), "8"),
        "late_stack_folds": (int, "3"),
        "vanilla_hidden": (int, "64"),
        "fusion_cv": (_bool, "false"),
        "rf_trees": (int, "500"),
        "rf_max_depth": (_opt(int), "none"),
        "rf_min_leaf": (int, "2"),
        "rf_cv": (_bool, "true"),
        "rf_loocv": (_bool, "false"),
    },
    "explain": {
        "model": (_str, "early"),
        "shap_samples": (int, "2048"),
        "lime_perturbations": (int, "5000"),
        "lime_kernel_width": (_opt(float), "none"),
        "top_k": (int, "10"),
        "background": (int, "100"),
    },
    "report": {
        "patients": (_list(_str), "auto"),
        "n_patients": (int, "1"),
    },
}

VARIANTS = ("early", "joint", "late", "vanilla", "spectra_only", "meta_only")
SIGNALS = ("default", "null", "separable", "split")


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, dict[str, Any]]
    source: str | None = None

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def get(self, dotted: str) -> Any:
        s, k = dotted.split(".", 1)
        return self.values[s][k]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["paths"]["output_dir"])

    def canonical(self, exclude_output: bool = True) -> dict:
        out = {s: {k: (list(v) if isinstance(v, tuple) else v) for k, v in kv.items()} for s, kv in self.values.items()}
        if exclude_output:
            out["paths"] = {k: v for k, v in out["paths"].items() if k != "output_dir"}
            out["run"] = {k: v for k, v in out["run"].items() if k != "jobs"}
        return out

    def hash(self) -> str:
        """Content hash of the settings that influence results."""
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse(section: str, key: str, text: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    conv, _ = SCHEMA[section][key]
    try:
        return conv(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r} ({exc})") from None


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Defaults, then the INI file at ``path``, then ``section.key=value`` overrides."""
    raw = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in cp.sections():
            for key, text in cp.items(section):
                _parse(section, key, text)
                raw[section][key] = text
    for item in overrides or []:
        dotted, sep, text = item.partition("=")
        if not sep or "." not in dotted:
            raise ConfigError(f"override {item!r} is not section.key=value")
        section, key = dotted.strip().split(".", 1)
        _parse(section, key, text)
        raw[section][key] = text
    values = {s: {k: _parse(s, k, t) for k, t in keys.items()} for s, keys in raw.items()}
    cfg = RunConfig(values, None if path is None else str(path))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    from .dataset import Balance, Task

    preprocess_config(cfg)
    for t in cfg["dataset"]["tasks"]:
        try:
            Task(t)
        except ValueError:
            raise ConfigError(f"dataset.tasks: unknown task {t!r}") from None
    if not cfg["dataset"]["tasks"]:
        raise ConfigError("dataset.tasks is empty")
    try:
        Balance(cfg["dataset"]["balance"])
    except ValueError:
        raise ConfigError(f"dataset.balance must be one of {[b.value for b in Balance]}") from None
    bad = [v for v in cfg["models"]["variants"] if v not in VARIANTS]
    if bad:
        raise ConfigError(f"models.variants: unknown {bad}; choose from {VARIANTS}")
    if cfg["explain"]["model"] not in VARIANTS:
        raise ConfigError(f"explain.model must be one of {VARIANTS}")
    if cfg["synth"]["signal"] not in SIGNALS:
        raise ConfigError(f"synth.signal must be one of {SIGNALS}")
    m = cfg["models"]
    for key in ("lr", "eps"):
        if not (math.isfinite(m[key]) and m[key] > 0):
            raise ConfigError(f"models.{key} must be a positive finite number")
    for key in ("beta1", "beta2"):
        if not 0.0 <= m[key] < 1.0:
            raise ConfigError(f"models.{key} must lie in [0, 1)")
    if not 0.0 <= m["dropout"] < 1.0:
        raise ConfigError("models.dropout must lie in [0, 1)")
    for key in ("rf_trees", "rf_min_leaf", "vanilla_hidden"):
        if m[key] < 1:
            raise ConfigError(f"models.{key} must be >= 1")
    if cfg["dataset"]["folds"] < 2:
        raise ConfigError("dataset.folds must be >= 2")
    if cfg["run"]["jobs"] < 1:
        raise ConfigError("run.jobs must be >= 1")
    e = cfg["explain"]
    if e["top_k"] < 1 or e["background"] < 1:
        raise ConfigError("explain.top_k and explain.background must be >= 1")
    if e["lime_perturbations"] < 50:
        raise ConfigError("explain.lime_perturbations must be >= 50")
    if cfg["report"]["n_patients"] < 1:
        raise ConfigError("report.n_patients must be >= 1")


def preprocess_config(cfg: RunConfig):
    from .spectra import PreprocessConfig

    p = cfg["preprocess"]
    if len(p["phe_window"]) != 2:
        raise ConfigError("preprocess.phe_window needs two numbers")
    return PreprocessConfig(
        sg_half_width=p["sg_half_width"], sg_order=p["sg_order"], bg_degree=p["bg_degree"],
        cosmic_threshold_k=p["cosmic_threshold_k"], phe_window=tuple(p["phe_window"]),
        phe_scale=p["phe_scale"], baseline_divergence_k=p["baseline_divergence_k"],
        bg_max_iter=p["bg_max_iter"], bg_tol=p["bg_tol"],
    )


def write_default_config(path: str | Path) -> None:
    """Write every key with its default value, for editing."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        lines += [f"{k} = {d}" for k, (_, d) in keys.items()]
        lines.append("")
    Path(path).write_text("\n".join(lines))
