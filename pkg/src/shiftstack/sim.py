"""Synthetic experiment harness: data generators, baselines, and metrics.

Four scenarios are built in.  Three are single-source target-shift
settings (linear, sine, and mixture-outcome covariate links); the fourth
draws K source domains from a hierarchical model whose spread dial sigma
controls study heterogeneity.  Target outcomes are generated but sealed:
methods only ever see target features, and the sealed container counts
every reveal so an audit can prove labels were read by the evaluator
alone.

Gaussian notation: scale parameters written as second arguments to a
normal law are interpreted per the spec's convention tag - "sd" (default)
treats them as standard deviations, "variance" takes square roots.  The
hierarchical spread sigma is always a standard deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .data import DomainData
from .ensemble import EnsembleConfig, fit_target_ensembles, predict_ensemble
from .exceptions import DegenerateDataError, ShiftstackError
from .label_shift import BbseConfig, estimate_weight_model, evaluate_weights
from .qp import solve_simplex_ls
from .single_da import SingleDaConfig, run_single_da
from .util import derive_seed, rng_for

SCENARIOS = ("ts-linear", "ts-sine", "ts-mixture", "msda-hier")
SINGLE_SOURCE_SCENARIOS = ("ts-linear", "ts-sine", "ts-mixture")
NONLINEAR_SCENARIOS = ("ts-sine", "ts-mixture")

BASELINE_METHOD = "merged_ols"
ENSEMBLE_METHODS = {"stack_da": "stack", "sim_da": "similarity", "stack_sim_da": "blend"}
ALL_METHODS = (
    "merged_ols", "wls_estimated", "wls_oracle", "stack_ols",
    "merge_da", "stack_da", "sim_da", "stack_sim_da",
)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    sigma: float = 0.5
    n_sources: int = 3
    n_per_domain: int = 600
    seed: int = 0
    scale_convention: str = "sd"  # how literal N(a, b) scale parameters read

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.scale_convention not in ("sd", "variance"):
            raise ValueError("scale_convention must be 'sd' or 'variance'")
        if self.n_per_domain < 10:
            raise ValueError("n_per_domain too small")
        if self.scenario == "msda-hier" and self.n_sources < 1:
            raise ValueError("msda-hier needs at least one source")

    @property
    def nonlinear(self) -> bool:
        return self.scenario in NONLINEAR_SCENARIOS

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "sigma": self.sigma,
            "n_sources": self.n_sources,
            "n_per_domain": self.n_per_domain,
            "seed": self.seed,
            "scale_convention": self.scale_convention,
        }


class SealedOutcomes:
    """Evaluation-only container for target labels; every reveal is counted."""

    def __init__(self, values: np.ndarray):
        self._values = np.asarray(values, dtype=float).ravel()
        self.reveal_count = 0

    def reveal(self) -> np.ndarray:
        self.reveal_count += 1
        return self._values

    def __len__(self) -> int:
        return self._values.size


def _scale(param: float, convention: str) -> float:
    return param if convention == "sd" else math.sqrt(param)


def generate(spec: ScenarioSpec) -> tuple[list[DomainData], DomainData, SealedOutcomes]:
    """Draw sources, a features-only target, and the sealed target labels."""
    n = spec.n_per_domain
    conv = spec.scale_convention
    if spec.scenario == "msda-hier":
        sources = []
        for k in range(spec.n_sources):
            rng = rng_for(spec.seed, "domain", k)
            mu_k = spec.sigma * rng.standard_normal()
            slope = 1.0 + spec.sigma * rng.standard_normal()
            warp = 2.0 + spec.sigma * rng.standard_normal()
            y = rng.normal(mu_k, 1.0, n)
            x = slope * y + warp * np.tanh(y) + rng.normal(0.0, 1.0, n)
            sources.append(DomainData(x.reshape(-1, 1), y))
        rng = rng_for(spec.seed, "target")
        slope = 1.0 + spec.sigma * rng.standard_normal()
        warp = 2.0 + spec.sigma * rng.standard_normal()
        y_t = rng.normal(0.5, _scale(0.5, conv), n)
        x_t = slope * y_t + warp * np.tanh(y_t) + rng.normal(0.0, 1.0, n)
        return sources, DomainData(x_t.reshape(-1, 1)), SealedOutcomes(y_t)

    rng_s = rng_for(spec.seed, "source0")
    rng_t = rng_for(spec.seed, "target")
    if spec.scenario == "ts-linear":
        y_s = rng_s.normal(0.0, 1.0, n)
        y_t = rng_t.normal(0.5, _scale(0.5, conv), n)
        x_s = y_s + rng_s.normal(0.0, _scale(0.5, conv), n)
        x_t = y_t + rng_t.normal(0.0, _scale(0.5, conv), n)
    elif spec.scenario == "ts-sine":
        y_s = rng_s.normal(0.0, 1.0, n)
        y_t = rng_t.normal(0.5, _scale(0.5, conv), n)
        x_s = np.sin(y_s) + rng_s.normal(0.0, _scale(0.5, conv), n)
        x_t = np.sin(y_t) + rng_t.normal(0.0, _scale(0.5, conv), n)
    else:  # ts-mixture
        y_s = rng_s.normal(0.0, _scale(2.0, conv), n)
        pick = rng_t.random(n) < 0.2
        y_t = np.where(
            pick,
            rng_t.normal(0.2, _scale(0.5, conv), n),
            rng_t.normal(1.0, _scale(1.0, conv), n),
        )
        x_s = y_s + 3.0 * np.tanh(y_s) + rng_s.normal(0.0, _scale(1.5, conv), n)
        x_t = y_t + 3.0 * np.tanh(y_t) + rng_t.normal(0.0, _scale(1.5, conv), n)
    source = DomainData(x_s.reshape(-1, 1), y_s)
    return [source], DomainData(x_t.reshape(-1, 1)), SealedOutcomes(y_t)


def true_weight_fn(spec: ScenarioSpec):
    """Analytic target/source outcome density ratio for the ts scenarios."""
    conv = spec.scale_convention

    def norm_pdf(y, mean, sd):
        return np.exp(-0.5 * ((y - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

    if spec.scenario in ("ts-linear", "ts-sine"):
        sd_t = _scale(0.5, conv)

        def ratio(y):
            return norm_pdf(y, 0.5, sd_t) / norm_pdf(y, 0.0, 1.0)

        return ratio
    if spec.scenario == "ts-mixture":
        sd_s = _scale(2.0, conv)
        sd_a = _scale(0.5, conv)
        sd_b = _scale(1.0, conv)

        def ratio(y):
            target = 0.2 * norm_pdf(y, 0.2, sd_a) + 0.8 * norm_pdf(y, 1.0, sd_b)
            return target / norm_pdf(y, 0.0, sd_s)

        return ratio
    raise ValueError("true weights are only defined for single-source scenarios")


# ---------------------------------------------------------------------------
# baselines


def design_matrix(X: np.ndarray, quadratic: bool) -> np.ndarray:
    """Regression design: intercept, features, and optional squared features."""
    X = np.asarray(X, dtype=float)
    cols = [np.ones((X.shape[0], 1)), X]
    if quadratic:
        cols.append(X**2)
    return np.hstack(cols)


def _ols_coefficients(design: np.ndarray, y: np.ndarray,
                      weights: np.ndarray | None = None) -> np.ndarray:
    if weights is not None:
        sw = np.sqrt(weights)
        design = design * sw[:, None]
        y = y * sw
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        raise DegenerateDataError(
            f"singular regression design (rank {rank} < {design.shape[1]})"
        )
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def evaluate_rmse(predictions: np.ndarray, sealed: SealedOutcomes) -> float:
    """The evaluator: the only code path that reveals sealed target labels."""
    truth = sealed.reveal()
    predictions = np.asarray(predictions, dtype=float).ravel()
    if predictions.shape[0] != len(sealed):
        raise ValueError("prediction length does not match target size")
    return float(np.sqrt(np.mean((predictions - truth) ** 2)))


def predict_merged_ols(sources: list[DomainData], target: DomainData,
                       quadratic: bool = False) -> np.ndarray:
    """Pooled least squares over all source domains, no adaptation."""
    design = np.vstack([design_matrix(s.X, quadratic) for s in sources])
    y = np.concatenate([s.y for s in sources])
    coef = _ols_coefficients(design, y)
    return design_matrix(target.X, quadratic) @ coef


def baseline_merged_ols(sources, target, sealed, quadratic: bool = False) -> float:
    return evaluate_rmse(predict_merged_ols(sources, target, quadratic), sealed)


def predict_wls(source: DomainData, target: DomainData, weights: np.ndarray,
                quadratic: bool = False) -> np.ndarray:
    """Weighted least squares on one source under the given sample weights."""
    design = design_matrix(source.X, quadratic)
    coef = _ols_coefficients(design, source.y, weights=weights)
    return design_matrix(target.X, quadratic) @ coef


def baseline_wls(source, target, sealed, weights, quadratic: bool = False) -> float:
    return evaluate_rmse(predict_wls(source, target, weights, quadratic), sealed)


def predict_stack_ols(sources: list[DomainData], target: DomainData,
                      quadratic: bool = False) -> np.ndarray:
    """Per-source least squares ensembled with simplex stacking weights."""
    coefs = [
        _ols_coefficients(design_matrix(s.X, quadratic), s.y) for s in sources
    ]
    blocks = []
    for s in sources:
        block_design = design_matrix(s.X, quadratic)
        blocks.append(np.column_stack([block_design @ c for c in coefs]))
    preds = np.vstack(blocks)
    outcomes = np.concatenate([s.y for s in sources])
    w = solve_simplex_ls(preds, outcomes)
    target_design = design_matrix(target.X, quadratic)
    return np.column_stack([target_design @ c for c in coefs]) @ w


def baseline_stack_ols(sources, target, sealed, quadratic: bool = False) -> float:
    return evaluate_rmse(predict_stack_ols(sources, target, quadratic), sealed)


def predict_merge_da(sources: list[DomainData], target: DomainData,
                     cfg: SingleDaConfig) -> np.ndarray:
    """Single-source adaptation run on the concatenation of all sources."""
    merged = DomainData(
        np.vstack([s.X for s in sources]), np.concatenate([s.y for s in sources])
    )
    result = run_single_da(merged, target, cfg)
    return result.learner.predict(target.X)


def baseline_merge_da(sources, target, sealed, cfg: SingleDaConfig) -> float:
    return evaluate_rmse(predict_merge_da(sources, target, cfg), sealed)


# ---------------------------------------------------------------------------
# experiment runner


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    sigma: float | None
    replicate: int
    method: str
    rmse: float
    log_rmse_ratio: float
    warning: str = ""


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    audit: dict
    config: dict

    def summary(self) -> dict[str, dict[str, float]]:
        """Per-method median and quartiles of the log RMSE ratios."""
        by_method: dict[str, list[float]] = {}
        for row in self.rows:
            if row.warning == "" and np.isfinite(row.log_rmse_ratio):
                by_method.setdefault(row.method, []).append(row.log_rmse_ratio)
        out = {}
        for method, vals in by_method.items():
            arr = np.asarray(vals)
            out[method] = {
                "median": float(np.median(arr)),
                "q1": float(np.quantile(arr, 0.25)),
                "q3": float(np.quantile(arr, 0.75)),
                "n": len(vals),
            }
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs besides the scenario itself."""

    da: SingleDaConfig = field(default_factory=SingleDaConfig)
    merged_mean: bool = True
    n_jobs: int = 1


def _replicate_seed(base: int, index: int) -> int:
    return derive_seed(base, f"rep{index}")


def _run_replicate(spec: ScenarioSpec, methods: list[str], replicate: int,
                   cfg: ExperimentConfig) -> tuple[list[ResultRow], dict]:
    rep_seed = _replicate_seed(spec.seed, replicate)
    rep_spec = replace(spec, seed=rep_seed)
    sources, target, sealed = generate(rep_spec)
    quadratic = rep_spec.nonlinear
    sigma = rep_spec.sigma if rep_spec.scenario == "msda-hier" else None

    rmses: dict[str, float] = {}
    warnings_by_method: dict[str, str] = {}

    # the ratio baseline always runs
    rmses[BASELINE_METHOD] = baseline_merged_ols(sources, target, sealed, quadratic)

    ensemble_schemes = [
        ENSEMBLE_METHODS[m] for m in methods if m in ENSEMBLE_METHODS
    ]
    if ensemble_schemes:
        try:
            ens_cfg = EnsembleConfig(
                single_da=cfg.da, merged_mean=cfg.merged_mean,
                seed=derive_seed(rep_seed, "ensemble"),
            )
            models = fit_target_ensembles(sources, target, ensemble_schemes, ens_cfg)
            for method, scheme in ENSEMBLE_METHODS.items():
                if scheme in models:
                    rmses[method] = evaluate_rmse(
                        predict_ensemble(models[scheme], target.X), sealed
                    )
        except ShiftstackError as exc:
            for method in methods:
                if method in ENSEMBLE_METHODS:
                    warnings_by_method[method] = str(exc)

    for method in methods:
        if method in rmses or method in warnings_by_method:
            continue
        try:
            if method == "wls_estimated":
                _require_single_source(spec, method, sources)
                model = estimate_weight_model(
                    design_matrix(sources[0].X, quadratic), sources[0].y,
                    design_matrix(target.X, quadratic),
                    cfg.da.bbse, seed=derive_seed(rep_seed, "wls-bbse"),
                )
                w = evaluate_weights(model, sources[0].y)
                rmses[method] = baseline_wls(sources[0], target, sealed, w, quadratic)
            elif method == "wls_oracle":
                _require_single_source(spec, method, sources)
                w = true_weight_fn(rep_spec)(sources[0].y)
                rmses[method] = baseline_wls(sources[0], target, sealed, w, quadratic)
            elif method == "stack_ols":
                rmses[method] = baseline_stack_ols(sources, target, sealed, quadratic)
            elif method == "merge_da":
                da_cfg = replace(cfg.da, seed=derive_seed(rep_seed, "merge_da"))
                rmses[method] = baseline_merge_da(sources, target, sealed, da_cfg)
            elif method != BASELINE_METHOD:
                raise ValueError(f"unknown method {method!r}")
        except (ShiftstackError, ValueError) as exc:
            warnings_by_method[method] = str(exc)

    base_rmse = rmses[BASELINE_METHOD]
    rows = []
    for method in methods:
        if method in rmses:
            ratio = 0.0 if method == BASELINE_METHOD else float(
                np.log(rmses[method] / base_rmse)
            )
            rows.append(ResultRow(
                scenario=rep_spec.scenario, sigma=sigma, replicate=replicate,
                method=method, rmse=rmses[method], log_rmse_ratio=ratio,
            ))
        else:
            rows.append(ResultRow(
                scenario=rep_spec.scenario, sigma=sigma, replicate=replicate,
                method=method, rmse=float("nan"), log_rmse_ratio=float("nan"),
                warning=warnings_by_method.get(method, "failed"),
            ))
    audit = {
        "reveals": sealed.reveal_count,
        "evaluations": len(rmses),
        "target_label_leaks": 0 if sealed.reveal_count == len(rmses) else 1,
    }
    return rows, audit


def _require_single_source(spec, method, sources):
    if spec.scenario not in SINGLE_SOURCE_SCENARIOS or len(sources) != 1:
        raise ValueError(f"{method} is defined for single-source scenarios only")


def run_experiment(spec: ScenarioSpec, methods: list[str], replicates: int,
                   cfg: ExperimentConfig | None = None) -> ExperimentResult:
    """Replicate loop: fresh data per replicate, all methods on the same draw.

    Replicate seeds derive from (spec.seed, replicate index), so parallel
    and serial execution produce identical tables.  Per-replicate method
    failures are recorded in the warning column, never fatal.
    """
    if not methods:
        raise ValueError("methods must be non-empty")
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {ALL_METHODS}")
    if BASELINE_METHOD not in methods:
        methods = [BASELINE_METHOD, *methods]
    cfg = cfg or ExperimentConfig()

    if cfg.n_jobs == 1:
        outcomes = [
            _run_replicate(spec, methods, r, cfg) for r in range(replicates)
        ]
    else:
        outcomes = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_run_replicate)(spec, methods, r, cfg)
            for r in range(replicates)
        )

    rows: list[ResultRow] = []
    reveals = evaluations = leaks = 0
    for rep_rows, audit in outcomes:
        rows.extend(rep_rows)
        reveals += audit["reveals"]
        evaluations += audit["evaluations"]
        leaks += audit["target_label_leaks"]
    return ExperimentResult(
        rows=rows,
        audit={"reveals": reveals, "evaluations": evaluations,
               "target_label_leaks": leaks},
        config={"spec": spec.to_dict(), "methods": list(methods),
                "replicates": replicates, "merged_mean": cfg.merged_mean},
    )
