"""Scikit-learn style estimator facade over the adaptation core.

Estimators follow the usual contract: hyperparameters in ``__init__``
(``get_params``/``set_params``/``clone`` all work), data only in ``fit``,
fitted state in trailing-underscore attributes, ``NotFittedError`` before
``fit``.  Target-domain features ride along as a keyword argument to
``fit``, the common idiom for unsupervised domain adaptation estimators.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .adversarial import AdvConfig
from .data import DomainData, as_feature_matrix, as_outcome_vector
from .ensemble import EnsembleConfig, fit_target_ensemble, predict_ensemble
from .label_shift import BbseConfig, evaluate_weights
from .single_da import SingleDaConfig, run_single_da
from .util import derive_seed


def _check_fitted(estimator, attr: str):
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit first"
        )


class ImportanceWeightEstimator(BaseEstimator):
    """Estimate outcome importance weights from unlabeled target features.

    Parameters
    ----------
    n_categories : int or None
        Outcome coarsening level; None picks the largest L with
        n / L^2 >= 5 (capped at 10).
    normalization_tol : float
        Half-width of the window around 1 for the source-weighted mean of
        the category weights.
    n_knots : int
        Knot count of the restricted cubic spline weight curve.
    ridge : float
        Ridge on the spline coefficients in the constrained fit.
    random_state : int
        Seed for the source fold split.
    """

    def __init__(self, n_categories=None, normalization_tol=0.05, n_knots=12,
                 ridge=1e-8, random_state=0):
        self.n_categories = n_categories
        self.normalization_tol = normalization_tol
        self.n_knots = n_knots
        self.ridge = ridge
        self.random_state = random_state

    def _bbse_config(self) -> BbseConfig:
        return BbseConfig(
            n_categories=self.n_categories,
            normalization_tol=self.normalization_tol,
            n_knots=self.n_knots,
            ridge=self.ridge,
        )

    def fit(self, X, y, X_target):
        from .label_shift import estimate_weight_model

        X = as_feature_matrix(X)
        y = as_outcome_vector(y, X.shape[0])
        X_target = as_feature_matrix(X_target, name="X_target")
        self.model_ = estimate_weight_model(
            X, y, X_target, self._bbse_config(), seed=self.random_state
        )
        self.category_weights_ = self.model_.category_means
        return self

    def predict_weights(self, y) -> np.ndarray:
        """Pointwise importance weights at the given outcome values."""
        _check_fitted(self, "model_")
        return evaluate_weights(self.model_, y)

    def fit_predict_weights(self, X, y, X_target) -> np.ndarray:
        return self.fit(X, y, X_target).predict_weights(y)


class SingleSourceDARegressor(BaseEstimator, RegressorMixin):
    """Regressor adapted from one labeled source to an unlabeled target.

    ``fit(X, y, X_target=...)`` runs the full alternation of importance
    weight estimation and adversarially aligned training; ``predict`` then
    applies the learned feature map and head.
    """

    def __init__(self, align_weight=1.0, epochs=300, critic_steps=5, clip=0.1,
                 lr_model=1e-3, lr_critic=5e-4, hidden_width=16, repr_dim=8,
                 max_outer=5, tol=1e-2, n_categories=None, normalization_tol=0.05,
                 n_knots=12, ridge=1e-8, random_state=0):
        self.align_weight = align_weight
        self.epochs = epochs
        self.critic_steps = critic_steps
        self.clip = clip
        self.lr_model = lr_model
        self.lr_critic = lr_critic
        self.hidden_width = hidden_width
        self.repr_dim = repr_dim
        self.max_outer = max_outer
        self.tol = tol
        self.n_categories = n_categories
        self.normalization_tol = normalization_tol
        self.n_knots = n_knots
        self.ridge = ridge
        self.random_state = random_state

    def _config(self) -> SingleDaConfig:
        return SingleDaConfig(
            max_outer=self.max_outer,
            tol=self.tol,
            adv=AdvConfig(
                align_weight=self.align_weight, epochs=self.epochs,
                critic_steps=self.critic_steps, clip=self.clip,
                lr_model=self.lr_model, lr_critic=self.lr_critic,
                hidden_width=self.hidden_width, repr_dim=self.repr_dim,
            ),
            bbse=BbseConfig(
                n_categories=self.n_categories,
                normalization_tol=self.normalization_tol,
                n_knots=self.n_knots, ridge=self.ridge,
            ),
            seed=self.random_state,
        )

    def fit(self, X, y, X_target):
        X = as_feature_matrix(X)
        y = as_outcome_vector(y, X.shape[0])
        X_target = as_feature_matrix(X_target, name="X_target")
        result = run_single_da(
            DomainData(X, y), DomainData(X_target), self._config()
        )
        self.result_ = result
        self.importance_model_ = result.importance_model
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        _check_fitted(self, "result_")
        return self.result_.learner.predict(as_feature_matrix(X))


class MultiSourceDARegressor(BaseEstimator, RegressorMixin):
    """Ensemble of per-source target-adapted learners with simplex weights.

    ``fit`` takes stacked source data with a ``sample_domain`` label per
    row plus the unlabeled target features.  ``scheme`` picks the weight
    rule: cross-domain stacking, inverse-loss similarity, or their blend.
    """

    def __init__(self, scheme="stack", merged_mean=False, align_weight=1.0,
                 epochs=300, critic_steps=5, clip=0.1, lr_model=1e-3,
                 lr_critic=5e-4, hidden_width=16, repr_dim=8, max_outer=5,
                 tol=1e-2, n_categories=None, normalization_tol=0.05,
                 n_knots=12, ridge=1e-8, random_state=0):
        self.scheme = scheme
        self.merged_mean = merged_mean
        self.align_weight = align_weight
        self.epochs = epochs
        self.critic_steps = critic_steps
        self.clip = clip
        self.lr_model = lr_model
        self.lr_critic = lr_critic
        self.hidden_width = hidden_width
        self.repr_dim = repr_dim
        self.max_outer = max_outer
        self.tol = tol
        self.n_categories = n_categories
        self.normalization_tol = normalization_tol
        self.n_knots = n_knots
        self.ridge = ridge
        self.random_state = random_state

    def _config(self) -> EnsembleConfig:
        single = SingleDaConfig(
            max_outer=self.max_outer,
            tol=self.tol,
            adv=AdvConfig(
                align_weight=self.align_weight, epochs=self.epochs,
                critic_steps=self.critic_steps, clip=self.clip,
                lr_model=self.lr_model, lr_critic=self.lr_critic,
                hidden_width=self.hidden_width, repr_dim=self.repr_dim,
            ),
            bbse=BbseConfig(
                n_categories=self.n_categories,
                normalization_tol=self.normalization_tol,
                n_knots=self.n_knots, ridge=self.ridge,
            ),
            seed=derive_seed(self.random_state, "single"),
        )
        return EnsembleConfig(
            single_da=single, merged_mean=self.merged_mean,
            seed=self.random_state,
        )

    def fit(self, X, y, sample_domain, X_target):
        X = as_feature_matrix(X)
        y = as_outcome_vector(y, X.shape[0])
        domains = np.asarray(sample_domain).ravel()
        if domains.shape[0] != X.shape[0]:
            raise ValueError("sample_domain length must match X rows")
        X_target = as_feature_matrix(X_target, name="X_target")
        labels = np.unique(domains)
        sources = [DomainData(X[domains == d], y[domains == d]) for d in labels]
        self.model_ = fit_target_ensemble(
            sources, DomainData(X_target), self.scheme, self._config()
        )
        self.domain_labels_ = labels
        self.weights_ = self.model_.weights
        self.gamma_ = self.model_.gamma
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        _check_fitted(self, "model_")
        return predict_ensemble(self.model_, as_feature_matrix(X))
