"""Cross-domain stacking and ensemble weighting of target-adapted learners.

Every ordered pair of source domains yields an adapted learner whose
predictions fill one block of the stacking design matrix (labels of the
domain being predicted stay hidden from the adaptation); the diagonal
holds a plain within-domain learner of the same model family.  Ensemble
weights come from simplex-constrained least squares on that matrix, from
inverse fit-loss similarity, or from a blend of the two.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .adversarial import AdaptedLearner, fit_plain_regressor
from .data import DomainData
from .exceptions import DimensionMismatchError, ShiftstackError
from .qp import solve_simplex_ls
from .single_da import SingleDaConfig, SingleDaResult, run_single_da
from .util import derive_seed

SCHEMES = ("stack", "similarity", "blend")

MERGED_MEAN_COLUMN = "merged_mean"


@dataclass(frozen=True)
class EnsembleConfig:
    single_da: SingleDaConfig = field(default_factory=SingleDaConfig)
    merged_mean: bool = False        # extra constant learner at the grand mean
    cross_fit_diagonal: bool = False
    seed: int = 0


@dataclass(frozen=True)
class StackingMatrix:
    """Block design matrix of cross-domain predictions plus true outcomes.

    Row block j holds domain j's points; column i holds predictions of the
    learner built from source i (adapted to domain j off the diagonal,
    plain within-domain on it).  ``degraded_blocks`` records (i, j, reason)
    for pairs that fell back to a no-adaptation cross-prediction.
    """

    predictions: np.ndarray
    outcomes: np.ndarray
    row_blocks: tuple[tuple[int, int], ...]
    column_names: tuple[str, ...]
    has_mean_column: bool = False
    degraded_blocks: tuple[tuple[int, int, str], ...] = ()

    @property
    def n_columns(self) -> int:
        return self.predictions.shape[1]


@dataclass(frozen=True)
class EnsembleModel:
    """Simplex-weighted combination of target-adapted learners."""

    learners: tuple[AdaptedLearner, ...]
    weights: np.ndarray
    scheme: str
    gamma: float | None = None
    mean_value: float | None = None  # constant prediction of the extra learner
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "weights", w)
        expected = len(self.learners) + (1 if self.mean_value is not None else 0)
        if w.size != expected:
            raise DimensionMismatchError(
                f"{w.size} weights for {expected} ensemble members"
            )

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "weights": self.weights.tolist(),
            "scheme": self.scheme,
            "gamma": self.gamma,
            "mean_value": self.mean_value,
            "column_names": list(self.column_names),
            "learners": [l.to_dict() for l in self.learners],
        }

    @staticmethod
    def from_dict(doc: dict) -> "EnsembleModel":
        return EnsembleModel(
            learners=tuple(AdaptedLearner.from_dict(l) for l in doc["learners"]),
            weights=np.asarray(doc["weights"], dtype=float),
            scheme=doc["scheme"],
            gamma=doc["gamma"],
            mean_value=doc["mean_value"],
            column_names=tuple(doc["column_names"]),
        )


def _diagonal_predictions(domain: DomainData, cfg: EnsembleConfig, seed: int) -> np.ndarray:
    """Within-domain member: in-sample by default, 2-fold cross-fit behind a flag."""
    adv = replace(cfg.single_da.adv, align_weight=0.0, seed=seed)
    if not cfg.cross_fit_diagonal:
        return fit_plain_regressor(domain, adv).predict(domain.X)
    X, y = domain.X, domain.y
    rng = np.random.default_rng(derive_seed(seed, "crossfit"))
    perm = rng.permutation(domain.n)
    half = domain.n // 2
    preds = np.empty(domain.n)
    for train_idx, pred_idx in ((perm[:half], perm[half:]), (perm[half:], perm[:half])):
        learner = fit_plain_regressor(DomainData(X[train_idx], y[train_idx]), adv)
        preds[pred_idx] = learner.predict(X[pred_idx])
    return preds


def build_stacking_matrix(sources: list[DomainData], cfg: EnsembleConfig) -> StackingMatrix:
    """Fill the K x K block grid of cross-domain adapted predictions.

    Off-diagonal block (i, j) adapts source i to domain j with domain j's
    outcomes hidden; a failed adaptation falls back to the plain source-i
    learner's cross-prediction and is recorded as degraded.
    """
    K = len(sources)
    if K < 2:
        raise ValueError("stacking needs at least 2 source domains")
    p = sources[0].p
    for k, s in enumerate(sources):
        if not s.has_outcomes:
            raise ValueError(f"source {k} must be labeled")
        if s.p != p:
            raise DimensionMismatchError("sources must share a feature dimension")

    sizes = [s.n for s in sources]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n_total = offsets[-1]
    row_blocks = tuple((int(offsets[j]), int(offsets[j + 1])) for j in range(K))
    outcomes = np.concatenate([s.y for s in sources])

    n_cols = K + (1 if cfg.merged_mean else 0)
    preds = np.empty((n_total, n_cols))
    degraded: list[tuple[int, int, str]] = []

    for i in range(K):
        for j in range(K):
            lo, hi = row_blocks[j]
            if i == j:
                preds[lo:hi, i] = _diagonal_predictions(
                    sources[i], cfg, derive_seed(cfg.seed, f"diag{i}")
                )
                continue
            hidden_target = sources[j].features_only()
            pair_cfg = replace(cfg.single_da, seed=derive_seed(cfg.seed, f"pair{i}-{j}"))
            try:
                result = run_single_da(sources[i], hidden_target, pair_cfg)
                preds[lo:hi, i] = result.learner.predict(sources[j].X)
            except ShiftstackError as exc:
                warnings.warn(
                    f"adaptation {i}->{j} failed ({exc}); "
                    "falling back to the plain cross-prediction",
                    stacklevel=2,
                )
                plain = fit_plain_regressor(
                    sources[i],
                    replace(cfg.single_da.adv, seed=derive_seed(cfg.seed, f"fallback{i}-{j}")),
                )
                preds[lo:hi, i] = plain.predict(sources[j].X)
                degraded.append((i, j, str(exc)))

    names = [f"source{i}" for i in range(K)]
    if cfg.merged_mean:
        preds[:, K] = outcomes.mean()
        names.append(MERGED_MEAN_COLUMN)

    return StackingMatrix(
        predictions=preds,
        outcomes=outcomes,
        row_blocks=row_blocks,
        column_names=tuple(names),
        has_mean_column=cfg.merged_mean,
        degraded_blocks=tuple(degraded),
    )


def stacking_weights(sm: StackingMatrix) -> np.ndarray:
    """Simplex least-squares regression of outcomes on cross-predictions."""
    return solve_simplex_ls(sm.predictions, sm.outcomes)


def similarity_weights(fit_losses) -> np.ndarray:
    """Weights proportional to inverse fit loss: (1/J_k) / sum_l (1/J_l)."""
    losses = np.asarray(fit_losses, dtype=float).ravel()
    if losses.size < 1:
        raise ValueError("need at least one loss")
    if np.any(losses <= 0):
        raise ValueError(
            "similarity weights need strictly positive losses; a zero loss "
            "means a perfect fit (add jitter or use stacking)"
        )
    inv = 1.0 / losses
    return inv / inv.sum()


def blended_weights(sm: StackingMatrix, w_sim: np.ndarray) -> tuple[np.ndarray, float]:
    """Simplex weights trading stacking fit against similarity proximity.

    gamma is the spread of the similarity weights (max - min): a wide
    spread means some sources adapted much better than others and the
    similarity term should dominate.  Solved as one stacked least-squares
    system: sqrt(1-gamma) times the stacking rows over sqrt(gamma) times an
    identity block pulling toward ``w_sim``.
    """
    w_sim = np.asarray(w_sim, dtype=float).ravel()
    k = sm.n_columns
    if w_sim.size != k:
        raise DimensionMismatchError(
            f"w_sim has {w_sim.size} entries but the stacking matrix has {k} columns"
        )
    gamma = float(w_sim.max() - w_sim.min())
    top = np.sqrt(1.0 - gamma) * sm.predictions
    bottom = np.sqrt(gamma) * np.eye(k)
    rhs = np.concatenate([np.sqrt(1.0 - gamma) * sm.outcomes, np.sqrt(gamma) * w_sim])
    w = solve_simplex_ls(np.vstack([top, bottom]), rhs)
    return w, gamma


def fit_target_ensembles(sources: list[DomainData], target: DomainData,
                         schemes: list[str], cfg: EnsembleConfig) -> dict[str, EnsembleModel]:
    """Fit one target ensemble per requested scheme, sharing the heavy runs.

    The K source-to-target adaptations are fit once; the stacking matrix is
    built once if any scheme needs it.  Results are identical whether
    schemes are fit together or one at a time because all seeds derive from
    stable (seed, role) pairs.
    """
    for scheme in schemes:
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    K = len(sources)
    if K < 1:
        raise ValueError("need at least one source domain")

    runs: list[SingleDaResult] = []
    for k in range(K):
        run_cfg = replace(cfg.single_da, seed=derive_seed(cfg.seed, f"target{k}"))
        runs.append(run_single_da(sources[k], target, run_cfg))
    learners = tuple(r.learner for r in runs)

    if K == 1:
        return {
            scheme: EnsembleModel(
                learners=learners, weights=np.array([1.0]), scheme=scheme,
                column_names=("source0",),
            )
            for scheme in schemes
        }

    sm = None
    if any(s in ("stack", "blend") for s in schemes):
        sm = build_stacking_matrix(sources, cfg)

    out: dict[str, EnsembleModel] = {}
    for scheme in schemes:
        gamma = None
        mean_value = None
        if scheme == "similarity":
            # the mean column has no adaptation loss, so it never enters here
            weights = similarity_weights([l.weighted_loss for l in learners])
            names = tuple(f"source{k}" for k in range(K))
        else:
            if scheme == "stack":
                weights = stacking_weights(sm)
            else:
                w_sim = similarity_weights([l.weighted_loss for l in learners])
                if sm.has_mean_column:
                    # the constant learner has no similarity weight; give it
                    # zero pull so the blend stays on the simplex
                    w_sim = np.concatenate([w_sim, [0.0]])
                weights, gamma = blended_weights(sm, w_sim)
            names = sm.column_names
            if sm.has_mean_column:
                mean_value = float(sm.outcomes.mean())
        out[scheme] = EnsembleModel(
            learners=learners, weights=weights, scheme=scheme, gamma=gamma,
            mean_value=mean_value, column_names=names,
        )
    return out


def fit_target_ensemble(sources: list[DomainData], target: DomainData,
                        scheme: str, cfg: EnsembleConfig) -> EnsembleModel:
    """Single-scheme entry point; see :func:`fit_target_ensembles`."""
    return fit_target_ensembles(sources, target, [scheme], cfg)[scheme]


def predict_ensemble(model: EnsembleModel, X: np.ndarray) -> np.ndarray:
    """Weighted sum of member predictions; linear in the weights."""
    X = np.asarray(X, dtype=float)
    preds = np.zeros(X.shape[0])
    for w, learner in zip(model.weights, model.learners):
        preds += w * learner.predict(X)
    if model.mean_value is not None:
        preds += model.weights[-1] * model.mean_value
    return preds
