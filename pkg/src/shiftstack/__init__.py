"""Multi-source domain adaptation for regression.

Importance weights for continuous outcomes are estimated from a black-box
classifier's shift statistics with a spline-parameterized weight curve,
conditional feature distributions are aligned adversarially per source
domain, and the target-adapted learners are combined with stacking,
similarity, or blended simplex weights.  A simulation harness and CLI
reproduce the synthetic benchmark scenarios.
"""

from .adversarial import AdaptedLearner, AdvConfig, loss_da, loss_regression, train_adversarial
from .data import DomainData
from .ensemble import (
    EnsembleConfig,
    EnsembleModel,
    StackingMatrix,
    blended_weights,
    build_stacking_matrix,
    fit_target_ensemble,
    fit_target_ensembles,
    predict_ensemble,
    similarity_weights,
    stacking_weights,
)
from .estimators import (
    ImportanceWeightEstimator,
    MultiSourceDARegressor,
    SingleSourceDARegressor,
)
from .label_shift import (
    BbseConfig,
    Discretization,
    ImportanceModel,
    ShiftStatistics,
    estimate_weight_model,
    evaluate_weights,
    fit_blackbox,
    fit_importance_model,
    make_discretization,
    shift_statistics,
)
from .qp import QpProblem, solve, solve_simplex_ls
from .single_da import SingleDaConfig, SingleDaResult, run_single_da
from .splines import SplineSpec, knots_from_quantiles, rcs_basis
from .util import derive_seed

__version__ = "0.1.0"

__all__ = [
    "AdaptedLearner",
    "AdvConfig",
    "BbseConfig",
    "Discretization",
    "DomainData",
    "EnsembleConfig",
    "EnsembleModel",
    "ImportanceModel",
    "ImportanceWeightEstimator",
    "MultiSourceDARegressor",
    "QpProblem",
    "ShiftStatistics",
    "SingleDaConfig",
    "SingleDaResult",
    "SingleSourceDARegressor",
    "SplineSpec",
    "StackingMatrix",
    "blended_weights",
    "build_stacking_matrix",
    "derive_seed",
    "estimate_weight_model",
    "evaluate_weights",
    "fit_blackbox",
    "fit_importance_model",
    "fit_target_ensemble",
    "fit_target_ensembles",
    "knots_from_quantiles",
    "loss_da",
    "loss_regression",
    "make_discretization",
    "predict_ensemble",
    "rcs_basis",
    "run_single_da",
    "shift_statistics",
    "similarity_weights",
    "solve",
    "solve_simplex_ls",
    "stacking_weights",
    "train_adversarial",
]
