"""Command-line entry point: ``ramanfuse <stage> [options]``.

Logs go to standard error; every result lands in files under the output
directory.  Exit status is 0 on success, 2 for configuration errors, 3 for
data errors and 4 for training failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config, write_default_config
from .errors import PipelineError
from .pipeline import RUNNERS, STAGES

log = logging.getLogger("ramanfuse")


def versions() -> dict[str, str]:
    import joblib
    import matplotlib
    import numpy
    import sklearn

    return {
        "ramanfuse": __version__, "python": platform.python_version(), "numpy": numpy.__version__,
        "scikit-learn": sklearn.__version__,
        "matplotlib": matplotlib.__version__, "joblib": joblib.__version__,
    }


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, stage: str, artifacts: list[Path]) -> Path:
    """Machine-readable record of a stage: config hash, seed, versions and artifact digests.

    No timestamps or absolute paths, so identical runs give identical files.
    """
    root = cfg.output_dir
    entries = sorted({p.resolve().relative_to(root.resolve()).as_posix(): _sha256(p) for p in artifacts}.items())
    manifest = {
        "stage": stage,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": versions(),
        "config": cfg.canonical(),
        "artifacts": [{"path": k, "sha256": v} for k, v in entries],
    }
    path = root / stage / "run_manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def run_stage(cfg: RunConfig, stage: str) -> Path:
    log.info("stage %s (config %s, seed %d)", stage, cfg.hash()[:12], cfg.seed)
    return write_manifest(cfg, stage, RUNNERS[stage](cfg))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="INI", help="configuration file; keys default when omitted")
    common.add_argument("--seed", type=int, help="run.seed: governs every random choice")
    common.add_argument("--jobs", type=int, help="run.jobs: worker processes for cross-validation folds")
    common.add_argument("--output-dir", metavar="DIR", help="paths.output_dir: root of all artifacts")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any configuration key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="ramanfuse", description="Raman + metadata fusion pipeline for colorectal screening")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic cohort (spectra, metadata, ground-truth manifest)",
        "preprocess": "smooth, baseline-correct, despike, normalize and quality-check spectra",
        "train": "fit fusion networks and random forests for each task",
        "evaluate": "score held-out patients, cross-validate, write metric tables and ROC plots",
        "explain": "SHAP and LIME attributions plus their consensus for report patients",
        "report": "write clinical reports for the selected patients",
        "run-all": "every stage in order",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    init = sub.add_parser("init-config", help="write a configuration file listing every key with its default")
    init.add_argument("path")
    return parser


def _overrides(args) -> list[str]:
    out = list(args.set)
    if args.seed is not None:
        out.append(f"run.seed={args.seed}")
    if args.jobs is not None:
        out.append(f"run.jobs={args.jobs}")
    if args.output_dir is not None:
        out.append(f"paths.output_dir={args.output_dir}")
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "init-config":
        write_default_config(args.path)
        return 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        stages = STAGES if args.command == "run-all" else (args.command,)
        for stage in stages:
            run_stage(cfg, stage)
    except PipelineError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        trace = getattr(exc, "trace", None)
        if trace:
            log.error("last epochs: %s", trace[-3:])
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
