"""Early, joint and late fusion networks and their training loop."""

from __future__ import annotations

import copy
import enum
import logging
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, TrainingError
from .nn import Adam, Mlp, MlpSpec, bce_grad, bce_loss

log = logging.getLogger(__name__)

MODALITIES = ("spectra", "meta")


class Variant(str, enum.Enum):
    EARLY = "early"
    JOINT = "joint"
    LATE = "late"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 25
    threshold: float = 0.5
    seed: int = 0
    late_stack_folds: int = 3

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise DataError("lr, batch_size, max_epochs and patience must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise DataError("threshold must lie in (0, 1)")
        if self.late_stack_folds == 1 or self.late_stack_folds < 0:
            raise DataError("late_stack_folds must be 0 (in-sample) or >= 2")

    def adam(self) -> Adam:
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


def build_early_fusion(x_s: np.ndarray, x_m: np.ndarray) -> np.ndarray:
    """Concatenate scaled spectra and metadata column-wise, spectra first."""
    x_s, x_m = np.atleast_2d(x_s), np.atleast_2d(x_m)
    if x_s.shape[0] != x_m.shape[0]:
        raise DataError(f"row mismatch: {x_s.shape[0]} spectra vs {x_m.shape[0]} metadata rows")
    return np.hstack([x_s, x_m])


class FusionModel:
    """A trained or untrained fusion network.

    ``branches`` is empty for the early variant.  Joint branches emit
    feature vectors; late branches emit probabilities.  A model with
    ``d_m == 0`` (or ``d_s == 0``) is a single-modality network.
    """

    def __init__(self, variant: Variant | str, head: Mlp, branches: dict[str, Mlp] | None,
                 d_s: int, d_m: int, threshold: float = 0.5):
        self.variant = Variant(variant)
        self.head = head
        self.branches = dict(branches or {})
        self.d_s, self.d_m = int(d_s), int(d_m)
        self.threshold = threshold
        self.training_trace: list[dict] = []
        self.branch_traces: dict[str, list[dict]] = {}
        if self.variant is Variant.EARLY:
            if self.branches:
                raise DataError("early fusion has no branches")
            if head.n_inputs != self.d_s + self.d_m:
                raise DataError("early head input width must equal d_s + d_m")
        else:
            if set(self.branches) != set(MODALITIES):
                raise DataError(f"{self.variant.value} fusion needs branches {MODALITIES}")
            widths = {"spectra": self.d_s, "meta": self.d_m}
            for name, br in self.branches.items():
                if br.n_inputs != widths[name]:
                    raise DataError(f"{name} branch expects {br.n_inputs} inputs, modality has {widths[name]}")
                if self.variant is Variant.LATE and (br.n_outputs != 1 or br.spec.output_activation != "sigmoid"):
                    raise DataError("late-fusion branches must end in a probability")
            if head.n_inputs != sum(br.n_outputs for br in self.branches.values()):
                raise DataError("head input width must equal the concatenated branch width")

    @property
    def modules(self) -> list[Mlp]:
        return [self.branches[k] for k in MODALITIES if k in self.branches] + [self.head]

    def parameters(self) -> list[np.ndarray]:
        return [p for m in self.modules for p in m.params]

    def _check(self, x_s, x_m):
        arrays = []
        for x, d, name in ((x_s, self.d_s, "spectra"), (x_m, self.d_m, "meta")):
            if d == 0:
                arrays.append(None)
                continue
            x = np.atleast_2d(np.asarray(x, dtype=np.float64))
            if x.shape[1] != d:
                raise DataError(f"{name} input has width {x.shape[1]}, model expects {d}")
            arrays.append(x)
        n = next(a.shape[0] for a in arrays if a is not None)
        x_s, x_m = (np.zeros((n, 0)) if a is None else a for a in arrays)
        if x_s.shape[0] != x_m.shape[0]:
            raise DataError("spectra and metadata batches differ in length")
        return x_s, x_m

    def forward(self, x_s, x_m, train: bool = False, rng: np.random.Generator | None = None):
        x_s, x_m = self._check(x_s, x_m)
        if self.variant is Variant.EARLY:
            p, hc = self.head.forward(build_early_fusion(x_s, x_m), train, rng)
            return p, (None, None, hc)
        fs, cs = self.branches["spectra"].forward(x_s, train, rng)
        fm, cm = self.branches["meta"].forward(x_m, train, rng)
        p, hc = self.head.forward(np.hstack([fs, fm]), train, rng)
        return p, ((cs, fs.shape[1]), cm, hc)

    def backward(self, cache, grad_p: np.ndarray) -> list[np.ndarray]:
        cs, cm, hc = cache
        head_grads, g = self.head.backward(hc, grad_p)
        if self.variant is Variant.EARLY:
            return head_grads
        cs, width = cs
        gs, _ = self.branches["spectra"].backward(cs, g[:, :width])
        gm, _ = self.branches["meta"].backward(cm, g[:, width:])
        return gs + gm + head_grads

    def predict_proba(self, x_s, x_m) -> np.ndarray:
        return self.forward(x_s, x_m)[0][:, 0]

    def predict_combined(self, X: np.ndarray) -> np.ndarray:
        """Probability for rows of the early-fusion layout (explainer entry point)."""
        X = np.atleast_2d(X)
        return self.predict_proba(X[:, : self.d_s], X[:, self.d_s:])

    def predict(self, x_s, x_m) -> np.ndarray:
        return (self.predict_proba(x_s, x_m) >= self.threshold).astype(int)


def default_model(variant: Variant | str, d_s: int, d_m: int, seed: int = 0,
                  dropout: float = 0.3, hidden: dict | None = None) -> FusionModel:
    """Untrained network with the default widths for ``variant``.

    ``hidden`` may override ``early``, ``branch``, ``late_branch`` and
    ``head``/``late_head`` hidden widths.
    """
    variant = Variant(variant)
    h = {"early": (256, 64), "branch": (128,), "head": (64,), "late_branch": (128, 32), "late_head": (8,)}
    h.update(hidden or {})
    rng = np.random.default_rng(seed)

    def head_spec(widths):
        return MlpSpec(tuple(widths) + (1,), "sigmoid", (dropout,) * len(widths))

    if variant is Variant.EARLY:
        return FusionModel(variant, Mlp(head_spec(h["early"]), d_s + d_m, rng), None, d_s, d_m)
    if variant is Variant.JOINT:
        bw = tuple(h["branch"])
        branches = {k: Mlp(MlpSpec(bw, "relu"), d, rng) for k, d in zip(MODALITIES, (d_s, d_m))}
        return FusionModel(variant, Mlp(head_spec(h["head"]), 2 * bw[-1], rng), branches, d_s, d_m)
    bw = tuple(h["late_branch"]) + (1,)
    branches = {k: Mlp(MlpSpec(bw, "sigmoid"), d, rng) for k, d in zip(MODALITIES, (d_s, d_m))}
    return FusionModel(variant, Mlp(head_spec(h["late_head"]), 2, rng), branches, d_s, d_m)


def vanilla_model(d_s: int, hidden: int = 64, seed: int = 0) -> FusionModel:
    """Plain one-hidden-layer network on spectra only."""
    rng = np.random.default_rng(seed)
    return FusionModel(Variant.EARLY, Mlp(MlpSpec((hidden, 1)), d_s, rng), None, d_s, 0)


def single_modality_model(modality: str, d: int, seed: int = 0, dropout: float = 0.3,
                          hidden=(256, 64)) -> FusionModel:
    """Early-layout network seeing one modality only."""
    rng = np.random.default_rng(seed)
    spec = MlpSpec(tuple(hidden) + (1,), "sigmoid", (dropout,) * len(hidden))
    d_s, d_m = (d, 0) if modality == "spectra" else (0, d)
    return FusionModel(Variant.EARLY, Mlp(spec, d, rng), None, d_s, d_m)


# --- training ----------------------------------------------------------------


@dataclass
class _Net:
    """Adapter giving Mlp and FusionModel a common training interface."""

    forward: callable
    backward: callable
    params: list[np.ndarray]


def _accuracy(y, p, threshold):
    return float(np.mean((p >= threshold).astype(int) == y))


def _fit(net: _Net, inputs: tuple, y: np.ndarray, train_idx, val_idx, cfg: TrainConfig,
         rng: np.random.Generator, label: str) -> list[dict]:
    """Mini-batch Adam on BCE with early stopping on validation accuracy.

    Patience counts epochs without a gain in validation accuracy.  The
    weights restored at the end are those with the best accuracy, ties
    going to the lower validation loss.
    """
    opt = cfg.adam()
    y = np.asarray(y, dtype=np.float64)
    train_idx, val_idx = np.asarray(train_idx, dtype=int), np.asarray(val_idx, dtype=int)
    if train_idx.size == 0:
        raise TrainingError(f"{label}: empty training split")
    monitor = val_idx if val_idx.size else train_idx
    trace: list[dict] = []
    best = (-np.inf, np.inf)
    best_params = [p.copy() for p in net.params]
    stale = 0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            p, cache = net.forward(tuple(x[b] for x in inputs), True, rng)
            yb = y[b, None]
            total += bce_loss(yb, p) * b.size
            grads = net.backward(cache, bce_grad(yb, p))
            opt.step(net.params, grads)
        loss = total / order.size
        pv = net.forward(tuple(x[monitor] for x in inputs), False, None)[0][:, 0]
        v_loss = bce_loss(y[monitor], pv)
        v_acc = _accuracy(y[monitor], pv, cfg.threshold)
        trace.append({"epoch": epoch, "loss": loss, "val_loss": v_loss, "val_accuracy": v_acc})
        if not (np.isfinite(loss) and np.isfinite(v_loss)):
            raise TrainingError(f"{label}: loss diverged at epoch {epoch}", trace)
        improved = v_acc > best[0]
        if improved or (v_acc == best[0] and v_loss < best[1]):
            best = (v_acc, v_loss)
            best_params = [p.copy() for p in net.params]
        stale = 0 if improved else stale + 1
        if stale >= cfg.patience:
            break
    for p, bp in zip(net.params, best_params):
        p[...] = bp
    log.debug("%s: %d epochs, best val acc %.3f", label, len(trace), best[0])
    return trace


def _mlp_net(m: Mlp) -> _Net:
    return _Net(lambda xs, train, rng: m.forward(xs[0], train, rng),
                lambda cache, g: m.backward(cache, g)[0], m.params)


def train(model: FusionModel, x_s, x_m, y, train_idx, val_idx, cfg: TrainConfig | None = None) -> FusionModel:
    """Fit ``model`` (a fresh copy is returned) on rows ``train_idx``.

    Late fusion trains each branch on its own modality first, freezes
    the branches, then fits the head on the two branch probabilities.
    """
    cfg = cfg or TrainConfig()
    model = copy.deepcopy(model)
    model.threshold = cfg.threshold
    x_s, x_m = model._check(x_s, x_m)
    y = np.asarray(y).astype(int)
    if np.unique(y[np.asarray(train_idx, dtype=int)]).size < 2:
        raise TrainingError("training split contains a single class")
    rng = np.random.default_rng(cfg.seed)
    if model.variant is Variant.LATE:
        _train_late(model, (x_s, x_m), y, np.asarray(train_idx, dtype=int), np.asarray(val_idx, dtype=int), cfg, rng)
        return model
    net = _Net(lambda xs, train, rng: model.forward(xs[0], xs[1], train, rng), model.backward, model.parameters())
    model.training_trace = _fit(net, (x_s, x_m), y, train_idx, val_idx, cfg, rng, model.variant.value)
    return model


def _train_late(model, inputs, y, train_idx, val_idx, cfg, rng):
    """Two-stage late fusion.

    Each branch is fit on its own modality and frozen.  The head is then
    fit on branch probabilities; for training rows these come from
    out-of-fold branch copies so the head does not learn to trust
    in-sample overconfidence.
    """
    z = np.zeros((y.size, 2))
    k = cfg.late_stack_folds
    if k:
        from ..dataset import stratified_folds

        folds = stratified_folds(y[train_idx], min(k, train_idx.size), rng)
    for j, (name, x) in enumerate(zip(MODALITIES, inputs)):
        init = copy.deepcopy(model.branches[name])
        if k:
            for f in folds:
                held = train_idx[f]
                br = copy.deepcopy(init)
                _fit(_mlp_net(br), (x,), y, np.setdiff1d(train_idx, held), val_idx, cfg, rng, f"late/{name}/oof")
                z[held, j] = br.predict(x[held])[:, 0]
        br = model.branches[name]
        model.branch_traces[name] = _fit(_mlp_net(br), (x,), y, train_idx, val_idx, cfg, rng, f"late/{name}")
        rest = np.setdiff1d(np.arange(y.size), train_idx) if k else np.arange(y.size)
        z[rest, j] = br.predict(x[rest])[:, 0]
    model.training_trace = _fit(_mlp_net(model.head), (z,), y, train_idx, val_idx, cfg, rng, "late/head")
