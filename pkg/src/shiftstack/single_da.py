"""Single-source domain adaptation: alternate weight estimation and training.

Importance weights are estimated on the current transformed features
(iteration 1 sees the raw features, since no feature map exists yet), then
the feature map and head are retrained under those weights.  The loop
stops when the per-category weights move less than a tolerance in sup norm
or the iteration cap is reached.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .adversarial import AdaptedLearner, AdvConfig, train_adversarial
from .data import DomainData
from .exceptions import DimensionMismatchError, ShiftstackError
from .label_shift import (
    BbseConfig,
    ImportanceModel,
    estimate_weight_model,
    evaluate_weights,
    make_discretization,
)
from .nn import forward
from .splines import knots_from_quantiles
from .util import derive_seed


@dataclass(frozen=True)
class SingleDaConfig:
    """Outer-loop settings wrapping the training and weight-estimation knobs."""

    max_outer: int = 5
    tol: float = 1e-2
    adv: AdvConfig = field(default_factory=AdvConfig)
    bbse: BbseConfig = field(default_factory=BbseConfig)
    seed: int = 0
    uniform_weights: bool = False  # skip estimation, fix all weights at 1

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class SingleDaResult:
    """Final learner, final weight model, and the per-iteration weight trail."""

    learner: AdaptedLearner
    importance_model: ImportanceModel | None
    weight_history: tuple[np.ndarray, ...]
    converged: bool
    n_iterations: int
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "learner": self.learner.to_dict(),
            "importance_model": (
                None if self.importance_model is None else self.importance_model.to_dict()
            ),
            "weight_history": [w.tolist() for w in self.weight_history],
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "degraded": self.degraded,
        }

    @staticmethod
    def from_dict(doc: dict) -> "SingleDaResult":
        return SingleDaResult(
            learner=AdaptedLearner.from_dict(doc["learner"]),
            importance_model=(
                None if doc["importance_model"] is None
                else ImportanceModel.from_dict(doc["importance_model"])
            ),
            weight_history=tuple(
                np.asarray(w, dtype=float) for w in doc["weight_history"]
            ),
            converged=bool(doc["converged"]),
            n_iterations=int(doc["n_iterations"]),
            degraded=bool(doc["degraded"]),
        )


def run_single_da(source: DomainData, target: DomainData,
                  cfg: SingleDaConfig) -> SingleDaResult:
    """Adapt one labeled source domain to an unlabeled target domain.

    ``n_iterations`` counts weight estimations performed; the weight
    history holds each iteration's per-category means.  If an inner step
    fails after the first completed iteration, the last completed iterate
    is returned with ``degraded=True``.
    """
    if not source.has_outcomes:
        raise ValueError("source domain must be labeled")
    if target.has_outcomes:
        raise ValueError("target domain must be features-only")
    if target.p != source.p:
        raise DimensionMismatchError(
            f"source has {source.p} features but target has {target.p}"
        )

    if cfg.uniform_weights:
        learner = train_adversarial(
            source, target, np.ones(source.n),
            replace(cfg.adv, seed=derive_seed(cfg.seed, "adv1")),
        )
        return SingleDaResult(
            learner=learner, importance_model=None,
            weight_history=(np.array([1.0]),),
            converged=True, n_iterations=1,
        )

    y = source.y
    disc = make_discretization(y, cfg.bbse.n_categories)
    spline = knots_from_quantiles(y, cfg.bbse.n_knots)

    learner: AdaptedLearner | None = None
    model: ImportanceModel | None = None
    history: list[np.ndarray] = []
    converged = False
    degraded = False

    for it in range(1, cfg.max_outer + 1):
        try:
            if learner is None:
                feats_s, feats_t = source.X, target.X
            else:
                feats_s = forward(learner.feature_map, source.X)
                feats_t = forward(learner.feature_map, target.X)
            candidate = estimate_weight_model(
                feats_s, y, feats_t, cfg.bbse,
                seed=derive_seed(cfg.seed, f"bbse{it}"),
                disc=disc, spline=spline,
            )
            history.append(candidate.category_means)
            if model is not None:
                shift = float(np.max(np.abs(
                    candidate.category_means - model.category_means
                )))
                model = candidate
                if shift < cfg.tol:
                    converged = True
                    break
            else:
                model = candidate
            weights = evaluate_weights(model, y)
            learner = train_adversarial(
                source, target, weights,
                replace(cfg.adv, seed=derive_seed(cfg.seed, f"adv{it}")),
            )
        except ShiftstackError as exc:
            if learner is None or model is None:
                raise
            warnings.warn(
                f"iteration {it} failed ({exc}); returning last completed iterate",
                stacklevel=2,
            )
            degraded = True
            break

    # the recorded loss must reflect the final weights
    final_weights = evaluate_weights(model, y)
    residual = y - learner.predict(source.X)
    final_loss = float(np.mean(final_weights * residual**2))
    learner = replace(learner, weighted_loss=final_loss)

    return SingleDaResult(
        learner=learner, importance_model=model,
        weight_history=tuple(history),
        converged=converged, n_iterations=len(history),
        degraded=degraded,
    )


def predict(result: SingleDaResult, X: np.ndarray) -> np.ndarray:
    """Target predictions: head applied to transformed features, row-wise."""
    return result.learner.predict(X)
