"""Importance-weight estimation for continuous outcomes under target shift.

The target/source density ratio of the outcome is recovered without target
labels: outcomes are coarsened into categories, a black-box classifier is
trained on one half of the source domain, its confusion matrix on the held
out half is matched against its prediction mass on the target domain, and
the ratio curve - parameterized by a restricted cubic spline - is fit by a
constrained least-squares problem that keeps category-mean weights
non-negative and their source-weighted average near one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import DomainData, as_outcome_vector
from .exceptions import DegenerateDataError, InfeasibleProblemError
from .qp import QpProblem, solve
from .splines import SplineSpec, knots_from_quantiles, rcs_basis
from .util import rng_for


def default_n_categories(n: int, cap: int = 10) -> int:
    """Largest L with n / L^2 >= 5, capped; at least 2."""
    return max(2, min(cap, int(np.sqrt(n / 5.0))))


@dataclass(frozen=True)
class Discretization:
    """Outcome coarsening: L categories split by L-1 strictly increasing cuts.

    Category of ``y`` is the number of cut points <= y, so every real value
    maps to exactly one of the L categories.
    """

    cuts: np.ndarray
    provenance: str = "source-quantile"

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=float).ravel()
        if cuts.size < 1:
            raise ValueError("need at least one cut point")
        if not np.all(np.diff(cuts) > 0):
            raise ValueError("cut points must be strictly increasing")
        object.__setattr__(self, "cuts", cuts)

    @property
    def n_categories(self) -> int:
        return self.cuts.size + 1

    def categorize(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        return np.searchsorted(self.cuts, y, side="right")

    def category_proportions(self, y) -> np.ndarray:
        labels = self.categorize(y)
        return np.bincount(labels, minlength=self.n_categories) / labels.size

    def to_dict(self) -> dict:
        return {"cuts": self.cuts.tolist(), "provenance": self.provenance}

    @staticmethod
    def from_dict(doc: dict) -> "Discretization":
        return Discretization(
            cuts=np.asarray(doc["cuts"], dtype=float), provenance=doc["provenance"]
        )


def make_discretization(
    y_source,
    n_categories: int | None = None,
    cut_points=None,
) -> Discretization:
    """Build a discretization from source quantiles or explicit cut points."""
    if cut_points is not None:
        return Discretization(cuts=np.asarray(cut_points, dtype=float),
                              provenance="user-supplied")
    y = as_outcome_vector(y_source, name="y_source")
    L = default_n_categories(y.size) if n_categories is None else int(n_categories)
    if L < 2:
        raise ValueError("need at least 2 categories")
    if np.unique(y).size < L:
        raise DegenerateDataError(
            f"y has fewer than {L} distinct values; reduce n_categories"
        )
    levels = np.arange(1, L) / L
    cuts = np.quantile(y, levels)
    if np.unique(cuts).size < cuts.size:
        raise DegenerateDataError(
            "tied quantile cut points; reduce n_categories or supply cut_points"
        )
    return Discretization(cuts=cuts, provenance="source-quantile")


class MultinomialLogit:
    """Softmax-regression black box trained by full-batch Adam.

    Deterministic: zero initialization, fixed iteration schedule.  Exposes
    ``predict`` / ``predict_proba`` which is all downstream shift
    statistics require of a black-box predictor.
    """

    def __init__(self, n_categories: int, ridge: float = 1e-4,
                 lr: float = 0.05, max_iter: int = 1500, tol: float = 1e-7):
        self.n_categories = n_categories
        self.ridge = ridge
        self.lr = lr
        self.max_iter = max_iter
        self.tol = tol
        self.coef_: np.ndarray | None = None  # (p+1, L), row 0 = intercept

    @staticmethod
    def _with_intercept(X: np.ndarray) -> np.ndarray:
        return np.hstack([np.ones((X.shape[0], 1)), X])

    def fit(self, X: np.ndarray, labels: np.ndarray) -> "MultinomialLogit":
        Xb = self._with_intercept(np.asarray(X, dtype=float))
        n, d = Xb.shape
        L = self.n_categories
        onehot = np.zeros((n, L))
        onehot[np.arange(n), labels] = 1.0

        coef = np.zeros((d, L))
        m = np.zeros_like(coef)
        v = np.zeros_like(coef)
        b1, b2, eps = 0.9, 0.999, 1e-8
        for t in range(1, self.max_iter + 1):
            probs = self._softmax(Xb @ coef)
            grad = Xb.T @ (probs - onehot) / n + self.ridge * coef
            if np.max(np.abs(grad)) < self.tol:
                break
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            coef = coef - self.lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        self.coef_ = coef
        return self

    @staticmethod
    def _softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        return expd / expd.sum(axis=1, keepdims=True)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self.coef_ is None:
            raise ValueError("classifier not fitted")
        return self._softmax(self._with_intercept(np.asarray(X, dtype=float)) @ self.coef_)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def log_loss(self, X: np.ndarray, labels: np.ndarray) -> float:
        probs = self.predict_proba(X)
        picked = np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)
        return float(-np.mean(np.log(picked)))


def fit_blackbox(train_fold: DomainData, disc: Discretization,
                 ridge: float = 1e-4, lr: float = 0.05,
                 max_iter: int = 1500) -> MultinomialLogit:
    """Train the black-box category predictor on one source fold."""
    labels = disc.categorize(train_fold.y)
    present = np.unique(labels)
    if present.size < disc.n_categories:
        missing = sorted(set(range(disc.n_categories)) - set(present.tolist()))
        raise DegenerateDataError(
            f"categories {missing} absent from the training fold; "
            "reduce the number of categories"
        )
    clf = MultinomialLogit(disc.n_categories, ridge=ridge, lr=lr, max_iter=max_iter)
    return clf.fit(train_fold.X, labels)


@dataclass(frozen=True)
class ShiftStatistics:
    """Prediction mass on the target and joint confusion proportions on source.

    ``confusion[i, j]`` is the fraction of holdout points predicted i with
    true category j; ``target_class_mass[l]`` is the fraction of target
    points predicted l.  Both are proper proportion arrays.
    """

    target_class_mass: np.ndarray
    confusion: np.ndarray
    n_holdout: int
    n_target: int

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.confusion))


def shift_statistics(clf, holdout_fold: DomainData, target: DomainData,
                     disc: Discretization) -> ShiftStatistics:
    """Estimate the confusion matrix on held-out source and target mass."""
    if holdout_fold.n == 0 or target.n == 0:
        raise ValueError("holdout and target folds must be non-empty")
    L = disc.n_categories
    pred_holdout = np.asarray(clf.predict(holdout_fold.X))
    true_holdout = disc.categorize(holdout_fold.y)
    confusion = np.zeros((L, L))
    np.add.at(confusion, (pred_holdout, true_holdout), 1.0)
    confusion /= holdout_fold.n

    pred_target = np.asarray(clf.predict(target.X))
    mass = np.bincount(pred_target, minlength=L) / target.n
    return ShiftStatistics(
        target_class_mass=mass,
        confusion=confusion,
        n_holdout=holdout_fold.n,
        n_target=target.n,
    )


@dataclass(frozen=True)
class ImportanceModel:
    """Fitted importance-weight curve plus its category-level summary."""

    spline: SplineSpec
    coeffs: np.ndarray
    disc: Discretization
    category_means: np.ndarray
    category_props: np.ndarray
    normalization_tol: float
    confusion_cond: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "spline": self.spline.to_dict(),
            "coeffs": self.coeffs.tolist(),
            "discretization": self.disc.to_dict(),
            "category_means": self.category_means.tolist(),
            "category_props": self.category_props.tolist(),
            "normalization_tol": self.normalization_tol,
            "confusion_cond": self.confusion_cond,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ImportanceModel":
        return ImportanceModel(
            spline=SplineSpec.from_dict(doc["spline"]),
            coeffs=np.asarray(doc["coeffs"], dtype=float),
            disc=Discretization.from_dict(doc["discretization"]),
            category_means=np.asarray(doc["category_means"], dtype=float),
            category_props=np.asarray(doc["category_props"], dtype=float),
            normalization_tol=float(doc["normalization_tol"]),
            confusion_cond=float(doc["confusion_cond"]),
        )


def fit_importance_model(stats: ShiftStatistics, disc: Discretization,
                         spline: SplineSpec, y_source,
                         normalization_tol: float = 0.05,
                         ridge: float = 1e-8) -> ImportanceModel:
    """Fit spline coefficients for the weight curve from shift statistics.

    Builds the category aggregation matrix (mean spline-basis row per
    category), then solves a constrained least-squares problem: match the
    target prediction mass through the confusion matrix, subject to
    non-negative category means whose source-weighted average stays within
    ``normalization_tol`` of one.
    """
    y = as_outcome_vector(y_source, name="y_source")
    L = disc.n_categories
    labels = disc.categorize(y)
    basis = rcs_basis(spline, y)
    agg = np.zeros((L, basis.shape[1]))
    for l in range(L):
        members = labels == l
        if not np.any(members):
            raise DegenerateDataError(f"category {l} has no source points")
        agg[l] = basis[members].mean(axis=0)
    props = np.bincount(labels, minlength=L) / y.size

    cond = stats.condition_number
    if cond > 1e6:
        warnings.warn(
            f"confusion matrix badly conditioned (cond={cond:.3e}); "
            "weight estimates may be unstable",
            stacklevel=2,
        )

    mean_row = props @ agg
    problem = QpProblem(
        a=stats.confusion @ agg,
        b=stats.target_class_mass,
        g=np.vstack([agg, mean_row, -mean_row]),
        h=np.concatenate([
            np.zeros(L),
            [1.0 - normalization_tol],
            [-(1.0 + normalization_tol)],
        ]),
        ridge=ridge,
    )
    # intercept-only coefficients give unit weights in every category, a
    # strictly feasible start
    start = np.zeros(spline.basis_size)
    start[0] = 1.0
    try:
        solution = solve(problem, z0=start)
    except InfeasibleProblemError as exc:
        raise InfeasibleProblemError(
            f"{exc}; try a larger normalization tolerance or fewer categories"
        ) from exc
    coeffs = solution.z
    means = np.maximum(agg @ coeffs, 0.0)
    return ImportanceModel(
        spline=spline,
        coeffs=coeffs,
        disc=disc,
        category_means=means,
        category_props=props,
        normalization_tol=normalization_tol,
        confusion_cond=cond,
    )


def evaluate_weights(model: ImportanceModel, y) -> np.ndarray:
    """Pointwise weight curve evaluation, clamped below at zero."""
    y = np.asarray(y, dtype=float).ravel()
    return np.maximum(rcs_basis(model.spline, y) @ model.coeffs, 0.0)


@dataclass(frozen=True)
class BbseConfig:
    """Settings for one full weight-estimation pass."""

    n_categories: int | None = None
    normalization_tol: float = 0.05
    n_knots: int = 12
    ridge: float = 1e-8
    blackbox_ridge: float = 1e-4
    blackbox_lr: float = 0.05
    blackbox_max_iter: int = 1500

    def __post_init__(self):
        if self.normalization_tol <= 0:
            raise ValueError("normalization_tol must be positive")
        if self.n_knots < 3:
            raise ValueError("n_knots must be >= 3")


def estimate_weight_model(source_X: np.ndarray, source_y: np.ndarray,
                          target_X: np.ndarray, cfg: BbseConfig, seed: int,
                          disc: Discretization | None = None,
                          spline: SplineSpec | None = None) -> ImportanceModel:
    """End-to-end weight estimation on (possibly transformed) features.

    Splits the source 50/50 (seeded), trains the black box on the first
    fold, computes shift statistics on the second fold and the target, and
    fits the constrained weight curve.  ``disc`` and ``spline`` may be
    supplied to reuse a fixed coarsening/knot layout across repeated calls.
    """
    y = as_outcome_vector(source_y, n=source_X.shape[0], name="source_y")
    if disc is None:
        disc = make_discretization(y, cfg.n_categories)
    if spline is None:
        spline = knots_from_quantiles(y, cfg.n_knots)
    rng = rng_for(seed, "fold-split")
    perm = rng.permutation(y.size)
    half = y.size // 2
    train_idx, holdout_idx = perm[:half], perm[half:]

    clf = fit_blackbox(
        DomainData(source_X[train_idx], y[train_idx]), disc,
        ridge=cfg.blackbox_ridge, lr=cfg.blackbox_lr,
        max_iter=cfg.blackbox_max_iter,
    )
    stats = shift_statistics(
        clf,
        DomainData(source_X[holdout_idx], y[holdout_idx]),
        DomainData(target_X),
        disc,
    )
    return fit_importance_model(
        stats, disc, spline, y,
        normalization_tol=cfg.normalization_tol, ridge=cfg.ridge,
    )
