"""Command-line entry point.

    latentepi simulate|fit|bootstrap|replicate-table1|report
        --config <path> [--seed <u64>] [--out <dir>] [--scenario 1|2|3] [--naive]

Exit codes: 0 success, 2 invalid input or configuration, 3 fit did not
converge (results are still written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, RunConfig, load_config, load_covariates, truth_params
from .estimate import (
    FitConfig,
    FitResult,
    OptimizerSettings,
    fit,
    parametric_bootstrap,
)
from .model import (
    HazardParams,
    InfectionParams,
    ModelError,
    ModelParams,
    SheddingParams,
)
from .pseudolik import Scenario
from .replication import CellDesign, run_cell, write_summary_csv
from .report import (
    predictive_bands,
    prevalence_rows,
    render_band_figure,
    render_prevalence_figure,
    write_band_csv,
    write_prevalence_csv,
)
from .seriesio import (
    SchemaError,
    model_params_from_dict,
    model_params_to_dict,
    read_series_csv,
    write_series_csv,
)
from .simulate import ReportingConfig, apply_reporting, simulate_population


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentepi",
        description="Latent-infection joint modeling of wastewater signals, "
                    "hospital admissions, and under-reported case counts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "simulate aggregated surveillance series"),
        ("fit", "fit the model to a series by pseudo-likelihood"),
        ("bootstrap", "fit, then parametric-bootstrap the standard errors"),
        ("replicate-table1", "replicate the simulation study over (r1, r2) cells"),
        ("report", "emit prevalence curves, predictive bands, and figures"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="INI configuration file")
        cmd.add_argument("--seed", type=int, default=None, help="override simulate.seed")
        cmd.add_argument("--out", default=None, help="override io.output_dir")
        cmd.add_argument("--scenario", type=int, choices=(1, 2, 3), default=None,
                         help="override fit.scenario")
        cmd.add_argument("--naive", action="store_true",
                         help="treat reported counts as the true actives")
    return parser


def _outdir(config: RunConfig, args) -> str:
    out = args.out or config.io.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _seed(config: RunConfig, args) -> int:
    return config.simulate.seed if args.seed is None else args.seed


def _placeholder_template(config: RunConfig) -> ModelParams:
    """Structure-only parameter set when no truth values are configured."""
    model = config.model
    counts = model.component_counts()
    span = model.horizon
    amplitudes, centers, widths = [], [], []
    for k in range(model.variants):
        m_k = counts[k]
        amplitudes.append([1e-4] * m_k)
        centers.append(list(np.linspace(0.25 * span, 0.75 * span, m_k + 2)[1:-1])
                       if m_k > 1 else [span * (k + 1) / (model.variants + 1)])
        widths.append([20.0] * m_k)
    zeros = tuple(tuple(0.0 for _ in range(model.covariates))
                  for _ in range(model.variants))
    return ModelParams(
        infection=InfectionParams(amplitudes, centers, widths,
                                  model.recovery_rates()),
        shedding=SheddingParams((0.01,) * model.variants,
                                (0.0,) * model.variants, zeros),
        hazard=HazardParams((-5.0,) * model.variants, zeros),
        population=model.population,
        horizon=model.horizon,
        time_step=model.time_step,
    )


def _template(config: RunConfig) -> tuple[ModelParams, ModelParams | None]:
    """(template, truth-or-None); truth needs the simulate block filled in."""
    try:
        truth = truth_params(config)
        return truth, truth
    except ConfigError:
        return _placeholder_template(config), None


def _fit_config(config: RunConfig, args, template: ModelParams,
                truth: ModelParams | None) -> FitConfig:
    scenario = Scenario(args.scenario or config.fit.scenario)
    naive = args.naive or config.fit.naive
    if config.fit.initial == "truth":
        if truth is None:
            raise ConfigError("fit.initial: 'truth' needs the simulate block")
        initial = truth
    else:
        initial = "auto"
    optimizer = OptimizerSettings(
        max_evals=config.fit.max_evals,
        objective_tol=config.fit.objective_tol,
        param_tol=config.fit.param_tol,
        restarts=config.fit.restarts,
    )
    return FitConfig(
        template=template,
        scenario=scenario,
        naive_mode=naive,
        optimizer=optimizer,
        initial_values=initial,
        fix_centers=config.fit.fix_centers,
        seed=_seed(config, args),
    )


def _single_rates(config: RunConfig) -> tuple[float, float]:
    if len(config.simulate.r1) != 1 or len(config.simulate.r2) != 1:
        raise ConfigError(
            "simulate.r1/r2: this command needs a single value for each"
        )
    return config.simulate.r1[0], config.simulate.r2[0]


def cmd_simulate(config: RunConfig, args) -> int:
    truth = truth_params(config)
    covariates = load_covariates(config)
    r1, r2 = _single_rates(config)
    out = _outdir(config, args)
    master = _seed(config, args)
    files = []
    for i in range(config.simulate.replicates):
        sim_s, rep_s = np.random.SeedSequence([master, i]).spawn(2)
        population = simulate_population(truth, covariates, sim_s)
        reporting = ReportingConfig(r1, r2,
                                    rng_seed=int(rep_s.generate_state(1)[0]))
        observed = apply_reporting(population, reporting)
        name = f"series_{i:04d}.csv"
        write_series_csv(observed, os.path.join(out, name))
        files.append(name)
    manifest = {
        "seed": master,
        "replicates": config.simulate.replicates,
        "r1": r1,
        "r2": r2,
        "truth": model_params_to_dict(truth),
        "files": files,
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {len(files)} series and manifest.json to {out}")
    return 0


def _load_input_series(config: RunConfig):
    if not config.io.input:
        raise ConfigError("io.input: required for this command")
    return read_series_csv(config.io.input, population=config.model.population)


def _fit_payload(result: FitResult, fit_cfg: FitConfig) -> dict:
    params = []
    boot = result.se_bootstrap
    for i, name in enumerate(result.param_names):
        entry = {
            "name": name,
            "estimate": result.natural[i],
            "se_fisher": _none_if_nan(result.se_fisher[i]),
            "se_bootstrap": _none_if_nan(boot[i]) if boot is not None else None,
        }
        params.append(entry)
    return {
        "scenario": fit_cfg.effective_scenario().value,
        "naive_mode": fit_cfg.naive_mode,
        "converged": bool(result.converged),
        "loglik": result.loglik,
        "n_evals": result.n_evals,
        "parameters": params,
        "estimates": model_params_to_dict(result.estimates),
        "diagnostics": _json_safe(result.diagnostics),
    }


def _none_if_nan(value):
    value = float(value)
    return None if math.isnan(value) else value


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return _none_if_nan(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_fit_outputs(result: FitResult, fit_cfg: FitConfig, out: str) -> None:
    payload = _fit_payload(result, fit_cfg)
    with open(os.path.join(out, "fit_result.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    lines = [
        "pseudo-likelihood fit",
        f"  scenario     : {fit_cfg.effective_scenario().name.lower()}",
        f"  naive_mode   : {fit_cfg.naive_mode}",
        f"  converged    : {result.converged}",
        f"  loglik       : {result.loglik:.6f}",
        f"  evaluations  : {result.n_evals}",
        "",
        f"  {'parameter':14s} {'estimate':>14s} {'se_fisher':>12s} {'se_boot':>12s}",
    ]
    boot = result.se_bootstrap
    for i, name in enumerate(result.param_names):
        se_b = "" if boot is None or math.isnan(boot[i]) else f"{boot[i]:12.5g}"
        se_f = "" if math.isnan(result.se_fisher[i]) else f"{result.se_fisher[i]:12.5g}"
        lines.append(f"  {name:14s} {result.natural[i]:14.6g} {se_f:>12s} {se_b:>12s}")
    for key, value in sorted(result.diagnostics.items()):
        lines.append(f"  # {key}: {value}")
    with open(os.path.join(out, "fit_report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_fit(config: RunConfig, args) -> int:
    series = _load_input_series(config)
    template, truth = _template(config)
    fit_cfg = _fit_config(config, args, template, truth)
    result = fit(series, fit_cfg)
    out = _outdir(config, args)
    _write_fit_outputs(result, fit_cfg, out)
    print(f"fit written to {out} (converged={result.converged})")
    return 0 if result.converged else 3


def cmd_bootstrap(config: RunConfig, args) -> int:
    if config.fit.bootstrap < 2:
        raise ConfigError("fit.bootstrap: need at least 2 replicates")
    series = _load_input_series(config)
    template, truth = _template(config)
    fit_cfg = _fit_config(config, args, template, truth)
    result = fit(series, fit_cfg)
    reporting = None
    if series.complete is not None and not bool(np.all(series.complete)):
        r1, r2 = _single_rates(config)
        reporting = ReportingConfig(r1, r2)
    boot = parametric_bootstrap(
        result.estimates, series, fit_cfg, config.fit.bootstrap,
        seed=np.random.SeedSequence([_seed(config, args), 0xB007]),
        reporting=reporting,
    )
    result.se_bootstrap = boot.se
    result.bootstrap_estimates = boot.estimates
    for warning in boot.warnings:
        result.diagnostics.setdefault("bootstrap_warnings", []).append(warning)
    out = _outdir(config, args)
    _write_fit_outputs(result, fit_cfg, out)
    with open(os.path.join(out, "bootstrap_estimates.csv"), "w", newline="") as fh:
        fh.write(",".join(["replicate", "converged"] + result.param_names) + "\n")
        for i in range(boot.estimates.shape[0]):
            cells = [str(i), str(int(boot.converged[i]))]
            cells += [format(v, ".12g") for v in boot.estimates[i]]
            fh.write(",".join(cells) + "\n")
    print(f"bootstrap ({config.fit.bootstrap} replicates) written to {out}")
    return 0 if result.converged else 3


def cmd_replicate_table1(config: RunConfig, args) -> int:
    truth = truth_params(config)
    covariates = load_covariates(config)
    optimizer = OptimizerSettings(
        max_evals=config.fit.max_evals,
        objective_tol=config.fit.objective_tol,
        param_tol=config.fit.param_tol,
        restarts=config.fit.restarts,
    )
    out = _outdir(config, args)
    master = _seed(config, args)
    scenario = Scenario(args.scenario or config.fit.scenario)
    for r1 in config.simulate.r1:
        for r2 in config.simulate.r2:
            design = CellDesign(
                truth=truth, r1=r1, r2=r2,
                n_replicates=config.simulate.replicates,
                seed=master, scenario=scenario, optimizer=optimizer,
                covariates=covariates,
            )
            tag = f"r1{r1:g}_r2{r2:g}".replace(".", "p")
            raw_path = os.path.join(out, f"table1_raw_{tag}.csv")
            result = run_cell(
                design, raw_path=raw_path,
                bootstrap_b=config.fit.bootstrap,
                bootstrap_count=config.fit.bootstrap_replicates,
            )
            summary_path = os.path.join(out, f"table1_{tag}.csv")
            write_summary_csv(result, summary_path)
            print(f"cell ({r1:g}, {r2:g}): {summary_path}")
    return 0


def cmd_report(config: RunConfig, args) -> int:
    series = _load_input_series(config)
    if not config.io.fit_result:
        raise ConfigError("io.fit_result: required for report")
    labeled = []
    for path in config.io.fit_result.split(","):
        path = path.strip()
        with open(path) as fh:
            payload = json.load(fh)
        params = model_params_from_dict(payload["estimates"])
        label = f"scenario{payload.get('scenario', '?')}"
        if payload.get("naive_mode"):
            label += "-naive"
        labeled.append((label, params))
    out = _outdir(config, args)

    rows = prevalence_rows(labeled)
    write_prevalence_csv(rows, os.path.join(out, "prevalence.csv"))
    render_prevalence_figure(rows, os.path.join(out, "prevalence.png"))

    bands = predictive_bands(labeled[0][1], series, n_sims=100,
                             seed=_seed(config, args))
    for name, band in bands.items():
        write_band_csv(band, os.path.join(out, f"band_{name}.csv"))
    render_band_figure(bands, os.path.join(out, "fit_check.png"))
    coverage = {name: round(band.coverage, 4) for name, band in bands.items()}
    print(f"report written to {out}; band coverage {coverage}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "replicate-table1": cmd_replicate_table1,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        return _COMMANDS[args.command](config, args)
    except (ConfigError, SchemaError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
