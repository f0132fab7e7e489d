"""Dense layers with manual backprop, Adam, and binary cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

BCE_EPS = 1e-7
ACTIVATIONS = ("relu", "sigmoid", "linear")


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(y, p, eps: float = BCE_EPS) -> float:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    y = np.asarray(y, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise DataError(f"label/prediction length mismatch: {y.size} vs {p.size}")
    pc = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def bce_grad(y, p, eps: float = BCE_EPS) -> np.ndarray:
    """d(bce)/dp, zero where the clamp is active."""
    y = np.asarray(y, dtype=np.float64).reshape(p.shape)
    inside = (p > eps) & (p < 1.0 - eps)
    denom = np.where(inside, p * (1.0 - p), 1.0)
    return np.where(inside, (p - y) / denom, 0.0) / y.shape[0]


@dataclass(frozen=True)
class MlpSpec:
    """Widths of each dense layer, output activation, hidden-layer dropout."""

    layer_widths: tuple[int, ...]
    output_activation: str = "sigmoid"
    dropout_rates: tuple[float, ...] = ()
    hidden_activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "dropout_rates", tuple(float(r) for r in self.dropout_rates))
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise DataError("layer widths must be positive")
        if self.output_activation not in ACTIVATIONS or self.hidden_activation not in ACTIVATIONS:
            raise DataError(f"activations must be one of {ACTIVATIONS}")
        if self.output_activation == "sigmoid" and self.layer_widths[-1] != 1:
            raise DataError("a sigmoid output layer must have width 1")
        n_hidden = len(self.layer_widths) - 1
        if self.dropout_rates and len(self.dropout_rates) != n_hidden:
            raise DataError(f"need {n_hidden} dropout rates (one per hidden layer)")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise DataError("dropout rates must lie in [0, 1)")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "sigmoid":
        return g * a * (1.0 - a)
    return g


class Mlp:
    """Stack of dense layers ``z_{l+1} = act(z_l W_l + b_l)``."""

    def __init__(self, spec: MlpSpec, n_inputs: int, rng: np.random.Generator | None = None):
        self.spec = spec
        self.n_inputs = int(n_inputs)
        rng = np.random.default_rng(spec.seed) if rng is None else rng
        self.params: list[np.ndarray] = []
        fan_in = self.n_inputs
        for l, width in enumerate(spec.layer_widths):
            act = self.activation(l)
            gain = 2.0 if act == "relu" else 1.0
            self.params.append(rng.standard_normal((fan_in, width)) * np.sqrt(gain / max(fan_in, 1)))
            self.params.append(np.zeros(width))
            fan_in = width

    @property
    def n_layers(self) -> int:
        return len(self.spec.layer_widths)

    @property
    def n_outputs(self) -> int:
        return self.spec.layer_widths[-1]

    def activation(self, l: int) -> str:
        return self.spec.output_activation if l == self.n_layers - 1 else self.spec.hidden_activation

    def dropout(self, l: int) -> float:
        if l >= self.n_layers - 1 or not self.spec.dropout_rates:
            return 0.0
        return self.spec.dropout_rates[l]

    def forward(self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise DataError(f"expected input of width {self.n_inputs}, got shape {x.shape}")
        cache = []
        a = x
        for l in range(self.n_layers):
            W, b = self.params[2 * l], self.params[2 * l + 1]
            z = a @ W + b
            out = _act(self.activation(l), z)
            mask = None
            rate = self.dropout(l)
            if train and rate > 0.0:
                if rng is None:
                    raise DataError("dropout in training mode needs an rng")
                mask = (rng.random(out.shape) >= rate) / (1.0 - rate)
                out = out * mask
            cache.append((a, z, out, mask))
            a = out
        return a, cache

    def backward(self, cache, grad_out: np.ndarray):
        grads: list[np.ndarray] = [None] * len(self.params)
        g = grad_out
        for l in reversed(range(self.n_layers)):
            a_in, z, out, mask = cache[l]
            if mask is not None:
                g = g * mask
                out = out / np.where(mask == 0, 1.0, mask)
            g = _act_grad(self.activation(l), z, out, g)
            grads[2 * l] = a_in.T @ g
            grads[2 * l + 1] = g.sum(axis=0)
            g = g @ self.params[2 * l].T
        return grads, g

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
