"""Adversarial alignment of conditional feature distributions.

A feature map and regression head are trained against a clipped critic:
the objective is the importance-weighted regression loss plus a trade-off
times the weighted critic gap between the transformed source and target
samples.  The critic takes several ascent steps (each followed by weight
clipping, which bounds its Lipschitz constant) per descent step of the
feature map and head.  Importance weights are held fixed for the duration
of one call; re-estimation lives in the outer loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import DomainData
from .exceptions import DimensionMismatchError, TrainingDivergedError
from .nn import (
    AdamState,
    Mlp,
    adam_step,
    backward_cached,
    clip_weights,
    forward,
    forward_cached,
    init_mlp,
    mlp_from_dict,
    mlp_to_dict,
)

LOSS_BLOWUP = 1e6


@dataclass(frozen=True)
class AdvConfig:
    """Knobs for one adversarial training session."""

    align_weight: float = 1.0        # trade-off on the critic-gap term
    epochs: int = 300
    batch_size: int | None = None    # None = full batch
    critic_steps: int = 5
    clip: float = 0.1
    lr_model: float = 1e-3
    lr_critic: float = 5e-4
    seed: int = 0
    warmup_frac: float = 0.1         # linear ramp of align_weight
    hidden_width: int = 16           # 0 = single linear feature layer
    repr_dim: int = 8

    def __post_init__(self):
        if self.align_weight < 0:
            raise ValueError("align_weight must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        if self.clip <= 0:
            raise ValueError("clip must be positive")


@dataclass(frozen=True)
class AdaptedLearner:
    """Trained feature map, regression head, critic, and fit diagnostics.

    ``weighted_loss`` is the importance-weighted regression loss recomputed
    on the full source domain at the stored parameters; ``history`` records
    per-epoch (regression loss, critic gap), with NaN gaps when alignment
    was disabled.
    """

    feature_map: Mlp
    head: Mlp
    critic: Mlp
    weighted_loss: float
    history: tuple[tuple[float, float], ...] = field(default=())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_map.in_dim:
            raise DimensionMismatchError(
                f"expected (n, {self.feature_map.in_dim}) features, got {X.shape}"
            )
        return forward(self.head, forward(self.feature_map, X)).ravel()

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "feature_map": mlp_to_dict(self.feature_map),
            "head": mlp_to_dict(self.head),
            "critic": mlp_to_dict(self.critic),
            "weighted_loss": self.weighted_loss,
            "history": [
                [reg, None if math.isnan(gap) else gap] for reg, gap in self.history
            ],
        }

    @staticmethod
    def from_dict(doc: dict) -> "AdaptedLearner":
        return AdaptedLearner(
            feature_map=mlp_from_dict(doc["feature_map"]),
            head=mlp_from_dict(doc["head"]),
            critic=mlp_from_dict(doc["critic"]),
            weighted_loss=float(doc["weighted_loss"]),
            history=tuple(
                (float(a), float("nan") if b is None else float(b))
                for a, b in doc["history"]
            ),
        )


def loss_regression(feature_map: Mlp, head: Mlp, source: DomainData,
                    weights: np.ndarray) -> float:
    """Weighted mean of squared residuals on the source domain."""
    weights = _check_weights(weights, source.n)
    residual = source.y - forward(head, forward(feature_map, source.X)).ravel()
    return float(np.mean(weights * residual**2))


def loss_da(critic: Mlp, feature_map: Mlp, source: DomainData,
            target: DomainData, weights: np.ndarray) -> float:
    """Weighted source mean minus target mean of critic scores."""
    weights = _check_weights(weights, source.n)
    score_s = forward(critic, forward(feature_map, source.X)).ravel()
    score_t = forward(critic, forward(feature_map, target.X)).ravel()
    return float(np.mean(weights * score_s) - np.mean(score_t))


def _check_weights(weights, n: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.shape[0] != n:
        raise DimensionMismatchError(f"weights length {weights.shape[0]} != n {n}")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    return weights


def build_networks(n_features: int, cfg: AdvConfig, rng: np.random.Generator):
    """Default architecture: shallow tanh feature map, linear head, tanh critic."""
    if cfg.hidden_width > 0:
        fmap = init_mlp(
            [n_features, cfg.hidden_width, cfg.repr_dim], ["tanh", "identity"], rng
        )
    else:
        fmap = init_mlp([n_features, cfg.repr_dim], ["identity"], rng)
    head = init_mlp([cfg.repr_dim, 1], ["identity"], rng)
    critic = init_mlp([cfg.repr_dim, max(cfg.hidden_width, 1), 1], ["tanh", "identity"], rng)
    return fmap, head, clip_weights(critic, cfg.clip)


def train_adversarial(source: DomainData, target: DomainData | None,
                      weights: np.ndarray, cfg: AdvConfig) -> AdaptedLearner:
    """Alternating critic-ascent / model-descent training.

    Per model step the critic takes ``cfg.critic_steps`` ascent steps on
    the weighted gap (clipped after each), then the feature map and head
    take one descent step on the weighted regression loss plus the ramped
    trade-off times the gap.  With ``align_weight == 0`` the target domain
    is never touched and ``target`` may be ``None``.
    """
    weights = _check_weights(weights, source.n)
    use_da = cfg.align_weight > 0
    if use_da:
        if target is None:
            raise ValueError("target features required when align_weight > 0")
        if target.p != source.p:
            raise DimensionMismatchError(
                f"source has {source.p} features but target has {target.p}"
            )

    rng = np.random.default_rng(cfg.seed)
    fmap, head, critic = build_networks(source.p, cfg, rng)
    opt_model = AdamState(lr=cfg.lr_model)
    opt_critic = AdamState(lr=cfg.lr_critic)

    X_s = source.X
    y_s = source.y
    X_t = target.X if use_da else None
    n_s = X_s.shape[0]
    n_t = X_t.shape[0] if use_da else 0
    warmup_epochs = max(1, math.ceil(cfg.warmup_frac * cfg.epochs))
    history: list[tuple[float, float]] = []

    for epoch in range(cfg.epochs):
        ramp = min(1.0, (epoch + 1) / warmup_epochs) if use_da else 0.0
        align = cfg.align_weight * ramp
        for idx_s, idx_t in _batches(n_s, n_t, cfg.batch_size, rng):
            xb = X_s[idx_s]
            yb = y_s[idx_s]
            wb = weights[idx_s]
            xtb = X_t[idx_t] if use_da else None

            if use_da:
                for _ in range(cfg.critic_steps):
                    critic = _critic_ascent(critic, fmap, xb, wb, xtb, opt_critic)
                    critic = clip_weights(critic, cfg.clip)

            fmap, head = _model_descent(
                fmap, head, critic, xb, yb, wb, xtb, align, opt_model
            )

        reg = _regression_loss_raw(fmap, head, X_s, y_s, weights)
        gap = _critic_gap_raw(critic, fmap, X_s, X_t, weights) if use_da else float("nan")
        history.append((reg, gap))
        checked = reg if not use_da else max(abs(reg), abs(gap))
        if not np.isfinite(checked) or checked > LOSS_BLOWUP:
            raise TrainingDivergedError(
                f"training diverged at epoch {epoch}", epoch=epoch,
                history=history[:-1],
            )

    final_loss = _regression_loss_raw(fmap, head, X_s, y_s, weights)
    return AdaptedLearner(
        feature_map=fmap, head=head, critic=critic,
        weighted_loss=final_loss, history=tuple(history),
    )


def fit_plain_regressor(source: DomainData, cfg: AdvConfig) -> AdaptedLearner:
    """No-adaptation member of the same model family (uniform weights)."""
    plain_cfg = replace(cfg, align_weight=0.0)
    return train_adversarial(source, None, np.ones(source.n), plain_cfg)


def _batches(n_s, n_t, batch_size, rng):
    if batch_size is None or batch_size >= n_s:
        yield slice(None), slice(None)
        return
    order = rng.permutation(n_s)
    for start in range(0, n_s, batch_size):
        idx_s = order[start : start + batch_size]
        idx_t = rng.choice(n_t, size=min(batch_size, n_t), replace=False) if n_t else slice(None)
        yield idx_s, idx_t


def _regression_loss_raw(fmap, head, X, y, w) -> float:
    residual = y - forward(head, forward(fmap, X)).ravel()
    return float(np.mean(w * residual**2))


def _critic_gap_raw(critic, fmap, X_s, X_t, w) -> float:
    score_s = forward(critic, forward(fmap, X_s)).ravel()
    score_t = forward(critic, forward(fmap, X_t)).ravel()
    return float(np.mean(w * score_s) - np.mean(score_t))


def _critic_ascent(critic, fmap, xb, wb, xtb, opt):
    rep_s = forward(fmap, xb)
    rep_t = forward(fmap, xtb)
    _, cache_s = forward_cached(critic, rep_s)
    _, cache_t = forward_cached(critic, rep_t)
    # ascend the gap: minimize its negation
    up_s = -(wb / xb.shape[0]).reshape(-1, 1)
    up_t = np.full((xtb.shape[0], 1), 1.0 / xtb.shape[0])
    grads_s, _ = backward_cached(critic, cache_s, up_s)
    grads_t, _ = backward_cached(critic, cache_t, up_t)
    flat = _flatten_grads([grads_s, grads_t])
    return critic.with_params(adam_step(opt, critic.params(), flat))


def _model_descent(fmap, head, critic, xb, yb, wb, xtb, align, opt):
    n = xb.shape[0]
    rep_s, cache_fs = forward_cached(fmap, xb)
    out, cache_h = forward_cached(head, rep_s)
    up_reg = (2.0 * wb * (out.ravel() - yb) / n).reshape(-1, 1)
    head_grads, d_rep = backward_cached(head, cache_h, up_reg)

    fmap_grad_lists = []
    if align > 0:
        _, cache_cs = forward_cached(critic, rep_s)
        _, d_rep_critic = backward_cached(
            critic, cache_cs, (align * wb / n).reshape(-1, 1)
        )
        d_rep = d_rep + d_rep_critic

        rep_t, cache_ft = forward_cached(fmap, xtb)
        _, cache_ct = forward_cached(critic, rep_t)
        _, d_rep_t = backward_cached(
            critic, cache_ct, np.full((xtb.shape[0], 1), -align / xtb.shape[0])
        )
        grads_ft, _ = backward_cached(fmap, cache_ft, d_rep_t)
        fmap_grad_lists.append(grads_ft)

    grads_fs, _ = backward_cached(fmap, cache_fs, d_rep)
    fmap_grad_lists.append(grads_fs)
    fmap_flat = _flatten_grads(fmap_grad_lists)
    head_flat = _flatten_grads([head_grads])

    params = fmap.params() + head.params()
    grads = fmap_flat + head_flat
    updated = adam_step(opt, params, grads)
    n_f = len(fmap.params())
    return fmap.with_params(updated[:n_f]), head.with_params(updated[n_f:])


def _flatten_grads(grad_lists):
    """Sum per-layer (dw, db) lists and flatten to [dw0, db0, dw1, ...]."""
    total = grad_lists[0]
    for other in grad_lists[1:]:
        total = [(dw + ow, db + ob) for (dw, db), (ow, ob) in zip(total, other)]
    flat = []
    for dw, db in total:
        flat.extend([dw, db])
    return flat
