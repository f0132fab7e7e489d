"""CSX1 tensor container plus a JSON sidecar of hyperparameters.

Layout (little-endian)::

    b"CSX1"  uint32 n_tensors
    per tensor: uint16 name_len, name (utf-8), uint8 dtype (0=float64, 1=int64),
                uint8 ndim, uint64 dims[ndim], raw data (C order)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .forest import ForestConfig, ForestModel
from .fusion import MODALITIES, FusionModel, Variant
from .nn import Mlp, MlpSpec

MAGIC = b"CSX1"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {"f": 0, "i": 1}


def write_tensors(path: str | Path, tensors: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            arr = np.asarray(arr)
            code = _CODES[arr.dtype.kind if arr.dtype.kind in _CODES else "f"]
            arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<BB", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a CSX1 container")
    (n,) = struct.unpack_from("<I", data, 4)
    pos, out = 8, {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + ln].decode()
        pos += ln
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        dt = _DTYPES[code]
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(data, dt, size, pos).reshape(shape).copy()
        pos += size * dt.itemsize
    if pos != len(data):
        raise DataError(f"{path}: trailing bytes in container")
    return out


def _spec_dict(spec: MlpSpec) -> dict:
    return {"layer_widths": list(spec.layer_widths), "output_activation": spec.output_activation,
            "dropout_rates": list(spec.dropout_rates), "hidden_activation": spec.hidden_activation}


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def save_fusion(model: FusionModel, path: str | Path, extra: dict | None = None) -> None:
    modules = {f"branch.{k}": model.branches[k] for k in MODALITIES if k in model.branches}
    modules["head"] = model.head
    tensors = []
    for prefix, m in modules.items():
        for l in range(m.n_layers):
            tensors.append((f"{prefix}.{l}.W", m.params[2 * l]))
            tensors.append((f"{prefix}.{l}.b", m.params[2 * l + 1]))
    write_tensors(path, tensors)
    meta = {
        "kind": "fusion", "variant": model.variant.value, "d_s": model.d_s, "d_m": model.d_m,
        "threshold": model.threshold,
        "modules": {k: {"n_inputs": m.n_inputs, "spec": _spec_dict(m.spec)} for k, m in modules.items()},
        "training_trace": model.training_trace, "branch_traces": model.branch_traces,
    }
    meta.update(extra or {})
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_fusion(path: str | Path) -> tuple[FusionModel, dict]:
    meta = json.loads(_sidecar(path).read_text())
    if meta.get("kind") != "fusion":
        raise DataError(f"{path}: sidecar does not describe a fusion model")
    tensors = read_tensors(path)
    built = {}
    for prefix, info in meta["modules"].items():
        m = Mlp(MlpSpec(**info["spec"]), info["n_inputs"], np.random.default_rng(0))
        for l in range(m.n_layers):
            m.params[2 * l] = tensors[f"{prefix}.{l}.W"]
            m.params[2 * l + 1] = tensors[f"{prefix}.{l}.b"]
        built[prefix] = m
    branches = {k.split(".", 1)[1]: v for k, v in built.items() if k.startswith("branch.")}
    model = FusionModel(Variant(meta["variant"]), built["head"], branches or None,
                        meta["d_s"], meta["d_m"], meta["threshold"])
    model.training_trace = meta.get("training_trace", [])
    model.branch_traces = meta.get("branch_traces", {})
    return model, meta


def save_forest(model: ForestModel, path: str | Path, extra: dict | None = None) -> None:
    tensors = [(f"tree.{i}.{f}", t[f]) for i, t in enumerate(model.trees) for f in ForestModel.TREE_FIELDS]
    write_tensors(path, tensors)
    c = model.config
    meta = {"kind": "forest", "n_trees": model.n_trees, "n_features": model.n_features,
            "config": {"n_trees": c.n_trees, "max_depth": c.max_depth, "max_features": c.max_features,
                       "min_samples_leaf": c.min_samples_leaf, "seed": c.seed}}
    meta.update(extra or {})
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_forest(path: str | Path) -> tuple[ForestModel, dict]:
    meta = json.loads(_sidecar(path).read_text())
    if meta.get("kind") != "forest":
        raise DataError(f"{path}: sidecar does not describe a forest")
    tensors = read_tensors(path)
    trees = [{f: tensors[f"tree.{i}.{f}"] for f in ForestModel.TREE_FIELDS} for i in range(meta["n_trees"])]
    return ForestModel(ForestConfig(**meta["config"]), trees, meta["n_features"]), meta
