"""INI run configuration: strict schema, documented defaults, typed blocks.

Sections and keys (defaults in parentheses):

[model]
  variants (2)          number of infection variants K
  population (100000)   cohort size N
  horizon (200)         last observation day E; the series has E+1 days
  time_step (1.0)       propagation/simulation step in days
  recovery (0.07)       recovery rate per variant, single value or comma list
  components (1 per variant)  Gaussian components per variant, comma list
  covariates (0)        number of population-level covariate columns p

[simulate]
  seed (1)              master RNG seed
  replicates (1)        number of simulated datasets
  r1 (1.0)              fraction of reporting-complete days; comma list allowed
  r2 (1.0)              per-case reporting rate on incomplete days; comma list
  amplitudes_<k>        truth mixture amplitudes for variant k, comma list
  centers_<k>           truth mixture centers (days)
  widths_<k>            truth mixture widths (days)
  shape_<k>             truth gamma shape alpha_k
  log_rate_<k>          truth gamma log-rate intercept beta0_k
  rate_coefs_<k> ()     truth signal covariate coefficients, comma list
  log_hazard_<k>        truth log-hazard intercept lambda0_k
  hazard_coefs_<k> ()   truth hazard covariate coefficients, comma list
  covariates_file ()    optional CSV (day,x1..xp) with the covariate design

[fit]
  scenario (2)          1 full, 2 policy-informed, 3 persistent under-reporting
  naive (false)         treat reported counts as the true actives
  restarts (3)          optimizer restarts
  max_evals (20000)     objective evaluation budget across restarts
  objective_tol (1e-8)  convergence tolerance on the objective
  param_tol (1e-6)      convergence tolerance on parameters
  fix_centers (false)   hold mixture centers at their initial values
  initial (auto)        auto | truth
  bootstrap (0)         parametric bootstrap replicates B (0 = skip)
  bootstrap_replicates (1)  table replicates that also get a bootstrap SE

[io]
  input ()              series CSV consumed by fit/bootstrap/report
  output_dir (out)      directory for all written files
  fit_result ()         fit JSON consumed by report
"""

from __future__ import annotations

import configparser
import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .model import HazardParams, InfectionParams, ModelParams, SheddingParams


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


_MODEL_KEYS = {
    "variants", "population", "horizon", "time_step", "recovery",
    "components", "covariates",
}
_SIMULATE_FIXED = {"seed", "replicates", "r1", "r2", "covariates_file"}
_SIMULATE_PER_VARIANT = (
    "amplitudes_", "centers_", "widths_", "shape_", "log_rate_",
    "rate_coefs_", "log_hazard_", "hazard_coefs_",
)
_FIT_KEYS = {
    "scenario", "naive", "restarts", "max_evals", "objective_tol",
    "param_tol", "fix_centers", "initial", "bootstrap", "bootstrap_replicates",
}
_IO_KEYS = {"input", "output_dir", "fit_result"}


@dataclass
class ModelBlock:
    variants: int = 2
    population: int = 100_000
    horizon: int = 200
    time_step: float = 1.0
    recovery: tuple[float, ...] = (0.07,)
    components: tuple[int, ...] = ()
    covariates: int = 0

    def recovery_rates(self) -> tuple[float, ...]:
        if len(self.recovery) == 1:
            return self.recovery * self.variants
        return self.recovery

    def component_counts(self) -> tuple[int, ...]:
        if not self.components:
            return (1,) * self.variants
        return self.components


@dataclass
class SimulateBlock:
    seed: int = 1
    replicates: int = 1
    r1: tuple[float, ...] = (1.0,)
    r2: tuple[float, ...] = (1.0,)
    covariates_file: str = ""
    truth: dict[str, tuple[float, ...]] = field(default_factory=dict)


@dataclass
class FitBlock:
    scenario: int = 2
    naive: bool = False
    restarts: int = 3
    max_evals: int = 20_000
    objective_tol: float = 1e-8
    param_tol: float = 1e-6
    fix_centers: bool = False
    initial: str = "auto"
    bootstrap: int = 0
    bootstrap_replicates: int = 1


@dataclass
class IoBlock:
    input: str = ""
    output_dir: str = "out"
    fit_result: str = ""


@dataclass
class RunConfig:
    model: ModelBlock
    simulate: SimulateBlock
    fit: FitBlock
    io: IoBlock
    path: str = ""


def _floats(text: str, key: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise ConfigError(f"{key}: {text!r} is not a comma-separated number list")
    if not all(math.isfinite(v) for v in values):
        raise ConfigError(f"{key}: values must be finite")
    return values


def _ints(text: str, key: str) -> tuple[int, ...]:
    values = _floats(text, key)
    if not all(float(v).is_integer() for v in values):
        raise ConfigError(f"{key}: values must be integers")
    return tuple(int(v) for v in values)


def _int(text: str, key: str) -> int:
    values = _ints(text, key)
    if len(values) != 1:
        raise ConfigError(f"{key}: expected a single integer")
    return values[0]


def _float(text: str, key: str) -> float:
    values = _floats(text, key)
    if len(values) != 1:
        raise ConfigError(f"{key}: expected a single number")
    return values[0]


def _bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: {text!r} is not a boolean")


def load_config(path) -> RunConfig:
    """Parse and fully validate an INI run configuration.

    Unknown sections or keys are rejected by name; every value is
    type-checked before any command does work.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")

    for section in parser.sections():
        if section not in ("model", "simulate", "fit", "io"):
            raise ConfigError(f"unknown section [{section}]")

    model = ModelBlock()
    if parser.has_section("model"):
        for key, value in parser.items("model"):
            if key not in _MODEL_KEYS:
                raise ConfigError(f"model.{key}: unknown key")
            if key == "variants":
                model.variants = _int(value, "model.variants")
            elif key == "population":
                model.population = _int(value, "model.population")
            elif key == "horizon":
                model.horizon = _int(value, "model.horizon")
            elif key == "time_step":
                model.time_step = _float(value, "model.time_step")
            elif key == "recovery":
                model.recovery = _floats(value, "model.recovery")
            elif key == "components":
                model.components = _ints(value, "model.components")
            elif key == "covariates":
                model.covariates = _int(value, "model.covariates")
    if model.variants < 1:
        raise ConfigError("model.variants: must be >= 1")
    if model.population < 1:
        raise ConfigError("model.population: must be >= 1")
    if model.horizon < 1:
        raise ConfigError("model.horizon: must be >= 1")
    if model.time_step <= 0:
        raise ConfigError("model.time_step: must be > 0")
    if len(model.recovery) not in (1, model.variants):
        raise ConfigError("model.recovery: give one value or one per variant")
    if any(g <= 0 for g in model.recovery):
        raise ConfigError("model.recovery: rates must be > 0")
    if model.components and len(model.components) != model.variants:
        raise ConfigError("model.components: one count per variant")
    if any(m < 1 for m in model.component_counts()):
        raise ConfigError("model.components: counts must be >= 1")
    if model.covariates < 0:
        raise ConfigError("model.covariates: must be >= 0")

    simulate = SimulateBlock()
    if parser.has_section("simulate"):
        for key, value in parser.items("simulate"):
            if key in _SIMULATE_FIXED:
                if key == "seed":
                    simulate.seed = _int(value, "simulate.seed")
                elif key == "replicates":
                    simulate.replicates = _int(value, "simulate.replicates")
                elif key == "r1":
                    simulate.r1 = _floats(value, "simulate.r1")
                elif key == "r2":
                    simulate.r2 = _floats(value, "simulate.r2")
                else:
                    simulate.covariates_file = value.strip()
                continue
            stem = next((s for s in _SIMULATE_PER_VARIANT if key.startswith(s)), None)
            if stem is None or not key[len(stem):].isdigit():
                raise ConfigError(f"simulate.{key}: unknown key")
            k = int(key[len(stem):])
            if not 1 <= k <= model.variants:
                raise ConfigError(f"simulate.{key}: variant index outside 1..{model.variants}")
            simulate.truth[key] = _floats(value, f"simulate.{key}")
    if simulate.replicates < 1:
        raise ConfigError("simulate.replicates: must be >= 1")
    for key in ("r1", "r2"):
        for v in getattr(simulate, key):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"simulate.{key}: values must lie in [0, 1]")

    fit = FitBlock()
    if parser.has_section("fit"):
        for key, value in parser.items("fit"):
            if key not in _FIT_KEYS:
                raise ConfigError(f"fit.{key}: unknown key")
            if key == "scenario":
                fit.scenario = _int(value, "fit.scenario")
            elif key == "naive":
                fit.naive = _bool(value, "fit.naive")
            elif key == "restarts":
                fit.restarts = _int(value, "fit.restarts")
            elif key == "max_evals":
                fit.max_evals = _int(value, "fit.max_evals")
            elif key == "objective_tol":
                fit.objective_tol = _float(value, "fit.objective_tol")
            elif key == "param_tol":
                fit.param_tol = _float(value, "fit.param_tol")
            elif key == "fix_centers":
                fit.fix_centers = _bool(value, "fit.fix_centers")
            elif key == "initial":
                fit.initial = value.strip().lower()
            elif key == "bootstrap":
                fit.bootstrap = _int(value, "fit.bootstrap")
            elif key == "bootstrap_replicates":
                fit.bootstrap_replicates = _int(value, "fit.bootstrap_replicates")
    if fit.scenario not in (1, 2, 3):
        raise ConfigError("fit.scenario: must be 1, 2 or 3")
    if fit.restarts < 1:
        raise ConfigError("fit.restarts: must be >= 1")
    if fit.objective_tol <= 0 or fit.param_tol <= 0:
        raise ConfigError("fit.objective_tol/param_tol: must be > 0")
    if fit.initial not in ("auto", "truth"):
        raise ConfigError("fit.initial: must be auto or truth")
    if fit.bootstrap < 0 or fit.bootstrap == 1:
        raise ConfigError("fit.bootstrap: must be 0 or >= 2")

    io_block = IoBlock()
    if parser.has_section("io"):
        for key, value in parser.items("io"):
            if key not in _IO_KEYS:
                raise ConfigError(f"io.{key}: unknown key")
            setattr(io_block, key, value.strip())

    return RunConfig(model=model, simulate=simulate, fit=fit, io=io_block,
                     path=str(path))


def truth_params(config: RunConfig) -> ModelParams:
    """Assemble the simulation-truth parameter set from the config blocks."""
    model = config.model
    truth = config.simulate.truth
    counts = model.component_counts()
    amplitudes, centers, widths = [], [], []
    shapes, log_rates, rate_coefs = [], [], []
    log_hazards, hazard_coefs = [], []
    for k in range(1, model.variants + 1):
        for name, store, expect in (
            (f"amplitudes_{k}", amplitudes, counts[k - 1]),
            (f"centers_{k}", centers, counts[k - 1]),
            (f"widths_{k}", widths, counts[k - 1]),
        ):
            if name not in truth:
                raise ConfigError(f"simulate.{name}: required for simulation")
            values = truth[name]
            if len(values) != expect:
                raise ConfigError(
                    f"simulate.{name}: expected {expect} values per model.components"
                )
            store.append(values)
        for name, store in ((f"shape_{k}", shapes), (f"log_rate_{k}", log_rates),
                            (f"log_hazard_{k}", log_hazards)):
            if name not in truth:
                raise ConfigError(f"simulate.{name}: required for simulation")
            if len(truth[name]) != 1:
                raise ConfigError(f"simulate.{name}: expected a single value")
            store.append(truth[name][0])
        for name, store in ((f"rate_coefs_{k}", rate_coefs),
                            (f"hazard_coefs_{k}", hazard_coefs)):
            values = truth.get(name, ())
            if len(values) != model.covariates:
                if values or model.covariates:
                    raise ConfigError(
                        f"simulate.{name}: expected {model.covariates} values"
                    )
            store.append(values)
    return ModelParams(
        infection=InfectionParams(amplitudes, centers, widths, model.recovery_rates()),
        shedding=SheddingParams(tuple(shapes), tuple(log_rates), tuple(rate_coefs)),
        hazard=HazardParams(tuple(log_hazards), tuple(hazard_coefs)),
        population=model.population,
        horizon=model.horizon,
        time_step=model.time_step,
    )


def load_covariates(config: RunConfig) -> np.ndarray:
    """Covariate design for simulation: from covariates_file or all zeros."""
    model = config.model
    n_days = model.horizon + 1
    if not config.simulate.covariates_file:
        return np.zeros((n_days, model.covariates))
    path = config.simulate.covariates_file
    if not os.path.isabs(path) and config.path:
        path = os.path.join(os.path.dirname(config.path), path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    expect = ["day"] + [f"x{j}" for j in range(1, model.covariates + 1)]
    if header != expect:
        raise ConfigError(
            f"simulate.covariates_file: header must be {','.join(expect)}"
        )
    data = np.asarray([[float(v) for v in row] for row in rows[1:]])
    if data.shape[0] != n_days or np.any(data[:, 0] != np.arange(n_days)):
        raise ConfigError(
            "simulate.covariates_file: need one row per day, days 0..horizon"
        )
    return data[:, 1:]
