"""Minimal dense feedforward networks with explicit analytic gradients.

Exactly what the adversarial training loop needs: immutable MLP values,
forward/backward passes written out by hand, first-order optimizers, a
finite-difference gradient checker, and weight clipping for enforcing a
Lipschitz bound on the critic.  No autodiff, no GPU, no exotic layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatchError

ACTIVATIONS = ("identity", "tanh", "relu")

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Layer:
    """One dense layer: ``act(x @ w + b)``."""

    w: np.ndarray  # (in_dim, out_dim)
    b: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w.ndim != 2 or self.b.ndim != 1 or self.b.shape[0] != self.w.shape[1]:
            raise DimensionMismatchError(
                f"layer shapes inconsistent: w{self.w.shape}, b{self.b.shape}"
            )
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")


@dataclass(frozen=True)
class Mlp:
    """Immutable stack of dense layers with chained dimensions."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("Mlp needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].w.shape[0] != self.layers[i - 1].w.shape[1]:
                raise DimensionMismatchError(
                    f"layer {i} expects input dim {self.layers[i].w.shape[0]} "
                    f"but layer {i - 1} outputs {self.layers[i - 1].w.shape[1]}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def params(self) -> list[np.ndarray]:
        """Flat parameter list [w0, b0, w1, b1, ...]."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.w)
            out.append(layer.b)
        return out

    def with_params(self, params: list[np.ndarray]) -> "Mlp":
        if len(params) != 2 * len(self.layers):
            raise DimensionMismatchError("parameter list length mismatch")
        layers = []
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.w.shape or b.shape != layer.b.shape:
                raise DimensionMismatchError(f"parameter shapes changed at layer {i}")
            layers.append(Layer(w=w, b=b, activation=layer.activation))
        return Mlp(layers=tuple(layers))


def init_mlp(dims: list[int], activations: list[str], rng: np.random.Generator) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    if len(activations) != len(dims) - 1:
        raise DimensionMismatchError("need one activation per layer")
    layers = []
    for i, act in enumerate(activations):
        fan_in = dims[i]
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(dims[i], dims[i + 1]))
        b = rng.uniform(-bound, bound, size=dims[i + 1])
        layers.append(Layer(w=w, b=b, activation=act))
    return Mlp(layers=tuple(layers))


def _activate(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "identity":
        return z
    if tag == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, a: np.ndarray, tag: str) -> np.ndarray:
    if tag == "identity":
        return np.ones_like(z)
    if tag == "tanh":
        return 1.0 - a * a
    return (z > 0.0).astype(float)


def forward(net: Mlp, X: np.ndarray) -> np.ndarray:
    """Row-wise network evaluation; pure and deterministic."""
    out, _ = forward_cached(net, X)
    return out


def forward_cached(net: Mlp, X: np.ndarray):
    """Forward pass keeping per-layer (input, pre-activation, activation)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatchError("X must be 2-d")
    if X.shape[1] != net.in_dim:
        raise DimensionMismatchError(
            f"layer 0 expects {net.in_dim} input columns, got {X.shape[1]}"
        )
    a = X
    caches = []
    for layer in net.layers:
        z = a @ layer.w + layer.b
        a_next = _activate(z, layer.activation)
        caches.append((a, z, a_next))
        a = a_next
    return a, caches


def backward_cached(net: Mlp, caches, upstream_grad: np.ndarray):
    """Backpropagate an upstream gradient through cached activations.

    Returns (per-layer [(dw, db), ...], gradient w.r.t. the input matrix).
    """
    delta = np.asarray(upstream_grad, dtype=float)
    if delta.shape != caches[-1][2].shape:
        raise DimensionMismatchError(
            f"upstream gradient shape {delta.shape} does not match output "
            f"shape {caches[-1][2].shape}"
        )
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        a_in, z, a_out = caches[i]
        layer = net.layers[i]
        dz = delta * _activate_grad(z, a_out, layer.activation)
        grads[i] = (a_in.T @ dz, dz.sum(axis=0))
        delta = dz @ layer.w.T
    return grads, delta


def backward(net: Mlp, X: np.ndarray, upstream_grad: np.ndarray):
    """Forward then backward; returns (parameter grads, input grad)."""
    _, caches = forward_cached(net, X)
    return backward_cached(net, caches, upstream_grad)


def clip_weights(net: Mlp, c: float) -> Mlp:
    """Clamp every weight and bias entry to [-c, c]."""
    if c <= 0:
        raise ValueError("clip constant must be positive")
    layers = tuple(
        Layer(w=np.clip(l.w, -c, c), b=np.clip(l.b, -c, c), activation=l.activation)
        for l in net.layers
    )
    return Mlp(layers=layers)


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.0
    velocities: list[np.ndarray] | None = None
    step_count: int = 0


def sgd_step(state: SgdState, params: list[np.ndarray], grads: list[np.ndarray]):
    """Plain/momentum SGD update; returns new parameter list."""
    if state.velocities is None:
        state.velocities = [np.zeros_like(p) for p in params]
    _check_param_grads(params, grads, state.velocities)
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        v = state.momentum * state.velocities[i] + g
        state.velocities[i] = v
        new_params.append(p - state.lr * v)
    state.step_count += 1
    return new_params


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list[np.ndarray] | None = None
    v: list[np.ndarray] | None = None
    step_count: int = 0


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """Adam update; returns new parameter list."""
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    _check_param_grads(params, grads, state.m)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return new_params


def _check_param_grads(params, grads, accum):
    if len(params) != len(grads) or len(params) != len(accum):
        raise DimensionMismatchError("params/grads/accumulator lengths differ")
    for p, g, a in zip(params, grads, accum):
        if p.shape != g.shape or p.shape != a.shape:
            raise DimensionMismatchError("parameter/gradient shape mismatch")


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_params: int
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_rel_error <= self.tol


def grad_check(net: Mlp, loss_fn, X: np.ndarray, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` maps the network output matrix to ``(loss, dloss/doutput)``.
    Relative deviation per entry is ``|a - n| / max(1e-8, |a|, |n|)`` so the
    measure is relative for large gradients and absolute near zero.
    """
    out, caches = forward_cached(net, X)
    _, d_out = loss_fn(out)
    analytic, _ = backward_cached(net, caches, d_out)

    flat_analytic = []
    for dw, db in analytic:
        flat_analytic.extend([dw, db])

    params = net.params()
    max_rel = 0.0
    n_checked = 0
    for idx, p in enumerate(params):
        for pos in np.ndindex(p.shape):
            h = 1e-6 * max(1.0, abs(p[pos]))
            p_plus = [q.copy() for q in params]
            p_minus = [q.copy() for q in params]
            p_plus[idx][pos] += h
            p_minus[idx][pos] -= h
            loss_plus = loss_fn(forward(net.with_params(p_plus), X))[0]
            loss_minus = loss_fn(forward(net.with_params(p_minus), X))[0]
            numeric = (loss_plus - loss_minus) / (2 * h)
            a = flat_analytic[idx][pos]
            rel = abs(a - numeric) / max(1e-8, abs(a), abs(numeric))
            max_rel = max(max_rel, rel)
            n_checked += 1
    return GradCheckReport(max_rel_error=max_rel, tol=tol, n_params=n_checked)


# ---------------------------------------------------------------------------
# serialization


def mlp_to_dict(net: Mlp) -> dict:
    """Versioned JSON-ready document (row-major weight arrays)."""
    return {
        "format_version": FORMAT_VERSION,
        "layers": [
            {
                "w": layer.w.tolist(),
                "b": layer.b.tolist(),
                "activation": layer.activation,
            }
            for layer in net.layers
        ],
    }


def mlp_from_dict(doc: dict) -> Mlp:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {version!r}")
    layers = tuple(
        Layer(
            w=np.asarray(l["w"], dtype=float),
            b=np.asarray(l["b"], dtype=float),
            activation=l["activation"],
        )
        for l in doc["layers"]
    )
    return Mlp(layers=layers)


__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "GradCheckReport",
    "Layer",
    "Mlp",
    "SgdState",
    "adam_step",
    "backward",
    "backward_cached",
    "clip_weights",
    "forward",
    "forward_cached",
    "grad_check",
    "init_mlp",
    "mlp_from_dict",
    "mlp_to_dict",
    "sgd_step",
]
