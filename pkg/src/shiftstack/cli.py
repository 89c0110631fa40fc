"""Command-line surface: simulate, fit, predict, plot.

One JSON config document plus flag overrides feeds every command; the
fully resolved configuration is echoed into each output artifact (a
leading ``#`` comment line in CSVs, a ``config`` field in model JSON, an
XML comment in SVGs).  Exit codes: 0 success, 1 usage or configuration
error, 2 runtime failure.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import sys
import warnings
from dataclasses import dataclass

import click
import numpy as np

from .adversarial import AdvConfig
from .data import DomainData
from .ensemble import EnsembleConfig, EnsembleModel, fit_target_ensemble, predict_ensemble
from .exceptions import ConfigError, ShiftstackError
from .label_shift import BbseConfig
from .sim import (
    ALL_METHODS,
    ExperimentConfig,
    ExperimentResult,
    ScenarioSpec,
    run_experiment,
)
from .single_da import SingleDaConfig
from .util import derive_seed

CSV_COLUMNS = ("scenario", "sigma", "replicate", "method", "rmse",
               "log_rmse_ratio", "warning")


@dataclass(frozen=True)
class RunConfig:
    """All hyperparameters with documented defaults; unknown keys rejected."""

    seed: int = 0
    replicates: int = 100
    scheme: str = "stack"
    merged_mean: bool = True
    scale_convention: str = "sd"
    n_jobs: int = 1
    # weight estimation
    n_categories: int | None = 4
    normalization_tol: float = 0.05
    n_knots: int = 12
    ridge: float = 1e-8
    # adversarial training
    align_weight: float = 1.0
    epochs: int = 300
    critic_steps: int = 5
    clip: float = 0.1
    lr_model: float = 1e-3
    lr_critic: float = 5e-4
    warmup_frac: float = 0.1
    hidden_width: int = 16
    repr_dim: int = 8
    # outer alternation
    max_outer: int = 3
    tol: float = 1e-2

    @staticmethod
    def load(path: str | None, overrides: dict) -> "RunConfig":
        values: dict = {}
        known = {f.name for f in dataclasses.fields(RunConfig)}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config file {path}: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config file must hold a JSON object")
            unknown = sorted(set(doc) - known)
            if unknown:
                raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
            values.update(doc)
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            cfg = RunConfig(**values)
            # construct the nested configs now so invalid values fail fast
            cfg.experiment_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        return cfg

    def resolved(self) -> dict:
        return dataclasses.asdict(self)

    def single_da_config(self, seed: int | None = None) -> SingleDaConfig:
        return SingleDaConfig(
            max_outer=self.max_outer,
            tol=self.tol,
            adv=AdvConfig(
                align_weight=self.align_weight, epochs=self.epochs,
                critic_steps=self.critic_steps, clip=self.clip,
                lr_model=self.lr_model, lr_critic=self.lr_critic,
                warmup_frac=self.warmup_frac, hidden_width=self.hidden_width,
                repr_dim=self.repr_dim,
            ),
            bbse=BbseConfig(
                n_categories=self.n_categories,
                normalization_tol=self.normalization_tol,
                n_knots=self.n_knots, ridge=self.ridge,
            ),
            seed=self.seed if seed is None else seed,
        )

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig(
            da=self.single_da_config(),
            merged_mean=self.merged_mean,
            n_jobs=self.n_jobs,
        )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if np.isnan(value):
            return ""
        return f"{value:.12g}"
    return str(value)


def write_results_csv(path: str, result: ExperimentResult) -> None:
    buf = io.StringIO()
    buf.write("# config: " + json.dumps(result.config, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in result.rows:
        writer.writerow([
            row.scenario, _fmt(row.sigma), row.replicate, row.method,
            _fmt(row.rmse), _fmt(row.log_rmse_ratio), row.warning,
        ])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_results_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("".join(lines)))
    return list(reader)


def read_domain_csv(path: str, require_outcome: bool) -> DomainData:
    """Dataset CSV: header row, outcome column named ``y``, features after."""
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    has_y = "y" in header
    if require_outcome and not has_y:
        raise ConfigError(f"{path}: missing required outcome column 'y'")
    if not require_outcome and has_y:
        warnings.warn(f"{path}: ignoring outcome column 'y' in target file",
                      stacklevel=2)
    feature_cols = [i for i, name in enumerate(header) if name != "y"]
    if not feature_cols:
        raise ConfigError(f"{path}: no feature columns")
    try:
        X = np.array([[float(r[i]) for i in feature_cols] for r in rows])
        y = (
            np.array([float(r[header.index("y")]) for r in rows])
            if (has_y and require_outcome) else None
        )
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: malformed numeric row ({exc})") from exc
    return DomainData(X, y)


def write_domain_csv(path: str, X: np.ndarray, y: np.ndarray | None) -> None:
    X = np.asarray(X, dtype=float)
    header = (["y"] if y is not None else []) + [f"x{i+1}" for i in range(X.shape[1])]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(X.shape[0]):
            row = ([_fmt(float(y[i]))] if y is not None else [])
            row += [_fmt(float(v)) for v in X[i]]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# SVG boxplot (hand-rolled so output is deterministic byte-for-byte)


def _boxplot_svg(groups: list[tuple[str, np.ndarray]], config_echo: str) -> str:
    width, height = 640, 420
    margin_l, margin_r, margin_t, margin_b = 70, 20, 20, 60
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b

    stats = []
    for name, vals in groups:
        stats.append((
            name,
            float(np.min(vals)),
            float(np.quantile(vals, 0.25)),
            float(np.median(vals)),
            float(np.quantile(vals, 0.75)),
            float(np.max(vals)),
        ))
    lo = min(s[1] for s in stats)
    hi = max(s[5] for s in stats)
    lo = min(lo, 0.0)
    hi = max(hi, 0.0)
    span = hi - lo if hi > lo else 1.0
    lo -= 0.05 * span
    hi += 0.05 * span
    span = hi - lo

    def sy(v: float) -> float:
        return margin_t + plot_h * (hi - v) / span

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f"<!-- config: {config_echo} -->",
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin_l}" y1="{sy(0.0):.4f}" x2="{width - margin_r}" '
        f'y2="{sy(0.0):.4f}" stroke="#bbbbbb" stroke-dasharray="4 3"/>',
    ]
    n = len(stats)
    slot = plot_w / n
    box_w = min(60.0, slot * 0.5)
    for idx, (name, vmin, q1, med, q3, vmax) in enumerate(stats):
        cx = margin_l + slot * (idx + 0.5)
        x0, x1 = cx - box_w / 2, cx + box_w / 2
        parts += [
            f'<line x1="{cx:.4f}" y1="{sy(vmin):.4f}" x2="{cx:.4f}" y2="{sy(q1):.4f}" stroke="black"/>',
            f'<line x1="{cx:.4f}" y1="{sy(q3):.4f}" x2="{cx:.4f}" y2="{sy(vmax):.4f}" stroke="black"/>',
            f'<line x1="{x0:.4f}" y1="{sy(vmin):.4f}" x2="{x1:.4f}" y2="{sy(vmin):.4f}" stroke="black"/>',
            f'<line x1="{x0:.4f}" y1="{sy(vmax):.4f}" x2="{x1:.4f}" y2="{sy(vmax):.4f}" stroke="black"/>',
            f'<rect x="{x0:.4f}" y="{sy(q3):.4f}" width="{box_w:.4f}" '
            f'height="{max(sy(q1) - sy(q3), 0.0):.4f}" fill="#9ecae1" stroke="black"/>',
            f'<line x1="{x0:.4f}" y1="{sy(med):.4f}" x2="{x1:.4f}" y2="{sy(med):.4f}" '
            'stroke="black" stroke-width="2"/>',
            f'<text x="{cx:.4f}" y="{height - margin_b + 20}" text-anchor="middle" '
            f'font-family="monospace" font-size="12">{name}</text>',
        ]
    for k in range(5):
        v = lo + span * k / 4
        parts.append(
            f'<text x="{margin_l - 8}" y="{sy(v) + 4:.4f}" text-anchor="end" '
            f'font-family="monospace" font-size="11">{v:.3f}</text>'
        )
    parts.append(
        f'<text x="{margin_l - 50}" y="{margin_t + plot_h / 2:.4f}" '
        'font-family="monospace" font-size="12" '
        f'transform="rotate(-90 {margin_l - 50} {margin_t + plot_h / 2:.4f})" '
        'text-anchor="middle">log RMSE ratio</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# commands


@click.group()
def cli():
    """Multi-source domain adaptation for regression."""


_config_option = click.option("--config", "config_path", type=str, default=None,
                              help="JSON config file (unknown keys rejected).")
_seed_option = click.option("--seed", type=int, default=None, help="Base seed.")


@cli.command()
@click.option("--scenario", required=True,
              type=click.Choice(["ts-linear", "ts-sine", "ts-mixture", "msda-hier"]))
@click.option("--sigma", type=float, default=0.5, show_default=True,
              help="Heterogeneity dial (msda-hier only).")
@click.option("--n-sources", type=int, default=3, show_default=True)
@click.option("--n", "n_per_domain", type=int, default=600, show_default=True)
@click.option("--replicates", type=int, default=None)
@click.option("--methods", type=str, default="merged_ols,wls_estimated",
              show_default=True, help="Comma-separated method list.")
@click.option("--out", "out_path", type=str, required=True)
@click.option("--jobs", type=int, default=None, help="Parallel replicate workers.")
@click.option("--dump-data", "dump_dir", type=str, default=None,
              help="Also write replicate-0 domains as CSV files here.")
@_config_option
@_seed_option
def simulate(scenario, sigma, n_sources, n_per_domain, replicates, methods,
             out_path, jobs, dump_dir, config_path, seed):
    """Run a scenario's replicate loop and write the results CSV."""
    cfg = RunConfig.load(config_path, {"seed": seed, "replicates": replicates,
                                       "n_jobs": jobs})
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    for m in method_list:
        if m not in ALL_METHODS:
            raise click.UsageError(
                f"unknown method {m!r}; choose from {', '.join(ALL_METHODS)}"
            )
    spec = ScenarioSpec(
        scenario=scenario, sigma=sigma, n_sources=n_sources,
        n_per_domain=n_per_domain, seed=cfg.seed,
        scale_convention=cfg.scale_convention,
    )
    result = run_experiment(spec, method_list, cfg.replicates,
                            cfg.experiment_config())
    result.config["run_config"] = cfg.resolved()
    write_results_csv(out_path, result)

    if dump_dir is not None:
        from pathlib import Path

        from .sim import generate, _replicate_seed

        out_dir = Path(dump_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rep_spec = dataclasses.replace(spec, seed=_replicate_seed(spec.seed, 0))
        sources, target, _sealed = generate(rep_spec)
        for k, s in enumerate(sources):
            write_domain_csv(str(out_dir / f"source{k}.csv"), s.X, s.y)
        write_domain_csv(str(out_dir / "target.csv"), target.X, None)

    click.echo(f"wrote {out_path}")
    click.echo(f"{'method':<14} {'median':>10} {'q1':>10} {'q3':>10} {'n':>5}")
    for method, s in result.summary().items():
        click.echo(
            f"{method:<14} {s['median']:>10.4f} {s['q1']:>10.4f} "
            f"{s['q3']:>10.4f} {s['n']:>5d}"
        )
    failures = [r for r in result.rows if r.warning]
    if failures:
        click.echo(f"warning: {len(failures)} method runs failed "
                   "(see the warning column)", err=True)


@cli.command()
@click.option("--source", "source_paths", type=str, multiple=True, required=True,
              help="Source-domain CSV (repeatable).")
@click.option("--target", "target_path", type=str, required=True,
              help="Target-domain CSV (features only).")
@click.option("--scheme", type=click.Choice(["stack", "similarity", "blend"]),
              default=None)
@click.option("--out", "out_path", type=str, required=True)
@_config_option
@_seed_option
def fit(source_paths, target_path, scheme, out_path, config_path, seed):
    """Fit a target ensemble from source CSVs and write the model JSON."""
    cfg = RunConfig.load(config_path, {"seed": seed, "scheme": scheme})
    sources = [read_domain_csv(p, require_outcome=True) for p in source_paths]
    target = read_domain_csv(target_path, require_outcome=False)
    ens_cfg = EnsembleConfig(
        single_da=cfg.single_da_config(seed=derive_seed(cfg.seed, "single")),
        merged_mean=cfg.merged_mean, seed=cfg.seed,
    )
    model = fit_target_ensemble(sources, target, cfg.scheme, ens_cfg)
    doc = model.to_dict()
    doc["config"] = cfg.resolved()
    doc["sources"] = list(source_paths)
    doc["fit_losses"] = [l.weighted_loss for l in model.learners]
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"wrote {out_path} (weights: "
               + ", ".join(f"{w:.4f}" for w in model.weights) + ")")


@cli.command()
@click.option("--model", "model_path", type=str, required=True)
@click.option("--target", "target_path", type=str, required=True)
@click.option("--out", "out_path", type=str, required=True)
def predict(model_path, target_path, out_path):
    """Predict target outcomes with a fitted ensemble model."""
    try:
        with open(model_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        model = EnsembleModel.from_dict(doc)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot load model {model_path}: {exc}") from exc
    target = read_domain_csv(target_path, require_outcome=False)
    preds = predict_ensemble(model, target.X)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["prediction"])
        for v in preds:
            writer.writerow([_fmt(float(v))])
    click.echo(f"wrote {out_path} ({preds.size} predictions)")


@cli.command()
@click.option("--results", "results_path", type=str, required=True)
@click.option("--out", "out_path", type=str, required=True)
def plot(results_path, out_path):
    """Render a boxplot SVG of log RMSE ratios per method."""
    rows = read_results_csv(results_path)
    groups: dict[str, list[float]] = {}
    order: list[str] = []
    for row in rows:
        if row.get("warning"):
            continue
        val = row.get("log_rmse_ratio", "")
        if val == "":
            continue
        method = row["method"]
        if method not in groups:
            groups[method] = []
            order.append(method)
        groups[method].append(float(val))
    if not groups:
        raise ConfigError(f"{results_path}: no plottable rows")
    svg = _boxplot_svg(
        [(m, np.asarray(groups[m])) for m in order],
        config_echo=json.dumps({"source": results_path}, sort_keys=True),
    )
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(svg)
    click.echo(f"wrote {out_path}")


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit-code mapping."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except click.Abort:
        return 1
    except ShiftstackError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        return 2
    except Exception as exc:  # anything unexpected is still a runtime failure
        click.echo(f"runtime error: {exc}", err=True)
        return 2


def entrypoint() -> None:
    sys.exit(main())
