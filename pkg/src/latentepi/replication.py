"""Repeated simulate-report-fit experiments over under-reporting cells.

A cell is one (r1, r2) under-reporting setting.  Each replicate simulates a
population at the truth, thins the reported cases, and fits both ways: the
proposed estimator (policy-informed scenario, using the known complete-day
flags) and the naive one (reported counts taken at face value).  Summaries
report the six headline quantities per variant: admission hazard exp(lambda0),
gamma shape alpha, gamma rate exp(beta0).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimate import FitConfig, FitResult, OptimizerSettings, fit, parametric_bootstrap
from .model import ModelParams
from .pseudolik import Scenario
from .simulate import ReportingConfig, apply_reporting, simulate_population
from .util import worker_count

HEADLINE_PARAMS = ("lambda1", "lambda2", "alpha1", "alpha2", "beta1", "beta2")


def headline_names(num_variants: int) -> list[str]:
    return (
        [f"lambda{k}" for k in range(1, num_variants + 1)]
        + [f"alpha{k}" for k in range(1, num_variants + 1)]
        + [f"beta{k}" for k in range(1, num_variants + 1)]
    )


def headline_values(params: ModelParams) -> dict[str, float]:
    """Natural-scale headline quantities from a parameter set."""
    out = {}
    for k in range(params.num_variants):
        out[f"lambda{k + 1}"] = math.exp(params.hazard.intercept[k])
        out[f"alpha{k + 1}"] = params.shedding.shape[k]
        out[f"beta{k + 1}"] = math.exp(params.shedding.intercept[k])
    return out


def headline_from_fit(result: FitResult) -> tuple[dict[str, float], dict[str, float]]:
    """(estimates, fisher SEs) for the headline quantities, delta method for
    the exponentiated intercepts."""
    est = headline_values(result.estimates)
    ses: dict[str, float] = {}
    by_name = dict(zip(result.param_names, result.se_fisher))
    for k in range(result.estimates.num_variants):
        lam0 = result.estimates.hazard.intercept[k]
        beta0 = result.estimates.shedding.intercept[k]
        ses[f"lambda{k + 1}"] = by_name[f"lambda0[{k + 1}]"] * math.exp(lam0)
        ses[f"alpha{k + 1}"] = by_name[f"alpha[{k + 1}]"]
        ses[f"beta{k + 1}"] = by_name[f"beta0[{k + 1}]"] * math.exp(beta0)
    return est, ses


def headline_from_natural(natural: np.ndarray, names: list[str],
                          num_variants: int) -> dict[str, float]:
    by_name = dict(zip(names, natural))
    out = {}
    for k in range(1, num_variants + 1):
        out[f"lambda{k}"] = math.exp(by_name[f"lambda0[{k}]"])
        out[f"alpha{k}"] = by_name[f"alpha[{k}]"]
        out[f"beta{k}"] = math.exp(by_name[f"beta0[{k}]"])
    return out


@dataclass(frozen=True)
class CellDesign:
    """One replication experiment: truth, reporting severity, fit settings."""

    truth: ModelParams
    r1: float
    r2: float
    n_replicates: int
    seed: int
    scenario: Scenario = Scenario.POLICY_INFORMED
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    methods: tuple[str, ...] = ("proposed", "naive")
    covariates: np.ndarray | None = None

    def covariate_matrix(self) -> np.ndarray:
        if self.covariates is not None:
            return self.covariates
        return np.zeros((self.truth.num_days, self.truth.num_covariates))


def _replicate_seeds(master: int, index: int) -> tuple[int, int, int, int]:
    children = np.random.SeedSequence([master, index]).spawn(4)
    return tuple(int(c.generate_state(1)[0]) for c in children)


def simulate_replicate(design: CellDesign, index: int):
    """The observed series for one replicate, reproducible from the design."""
    sim_s, rep_s, _, _ = _replicate_seeds(design.seed, index)
    population = simulate_population(design.truth, design.covariate_matrix(), sim_s)
    reporting = ReportingConfig(design.r1, design.r2, rng_seed=rep_s)
    return apply_reporting(population, reporting)


def fit_config_for(design: CellDesign, index: int, method: str) -> FitConfig:
    _, _, fit_p, fit_n = _replicate_seeds(design.seed, index)
    naive = method == "naive"
    return FitConfig(
        template=design.truth,
        scenario=design.scenario,
        naive_mode=naive,
        optimizer=design.optimizer,
        seed=fit_n if naive else fit_p,
    )


def _run_replicate(args) -> list[dict]:
    design, index = args
    series = simulate_replicate(design, index)
    rows = []
    for method in design.methods:
        result = fit(series, fit_config_for(design, index, method))
        est, ses = headline_from_fit(result)
        row = {"replicate": index, "method": method,
               "converged": int(result.converged),
               "loglik": result.loglik, "n_evals": result.n_evals}
        for name in headline_names(design.truth.num_variants):
            row[name] = est[name]
            row[f"se1_{name}"] = ses[name]
        rows.append(row)
    return rows


class _OrderedFlusher:
    """Writes replicate rows to CSV in index order as a contiguous prefix, so
    interrupted runs can resume and completed runs are byte-identical."""

    def __init__(self, path, fieldnames, n_done: int):
        self.path = path
        self.fieldnames = fieldnames
        self.next_index = n_done
        self.pending: dict[int, list[dict]] = {}
        if path is not None and n_done == 0:
            with open(path, "w", newline="") as fh:
                csv.DictWriter(fh, fieldnames=fieldnames).writeheader()

    def add(self, index: int, rows: list[dict]):
        self.pending[index] = rows
        if self.path is None:
            return
        while self.next_index in self.pending:
            with open(self.path, "a", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=self.fieldnames)
                for row in self.pending[self.next_index]:
                    writer.writerow({k: _fmt(v) for k, v in row.items()})
            self.next_index += 1

    def collect(self) -> list[dict]:
        rows = []
        for idx in sorted(self.pending):
            rows.extend(self.pending[idx])
        return rows


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".12g")
    return v


def _load_existing(path, design: CellDesign) -> tuple[list[dict], int]:
    """Rows already on disk from an interrupted run, as a contiguous prefix."""
    if path is None or not os.path.exists(path):
        return [], 0
    with open(path, newline="") as fh:
        raw = list(csv.DictReader(fh))
    per_rep: dict[int, list[dict]] = {}
    for row in raw:
        idx = int(row["replicate"])
        parsed = {"replicate": idx, "method": row["method"],
                  "converged": int(row["converged"]),
                  "loglik": float(row["loglik"]), "n_evals": int(row["n_evals"])}
        for name in headline_names(design.truth.num_variants):
            parsed[name] = float(row[name])
            parsed[f"se1_{name}"] = float(row[f"se1_{name}"])
        per_rep.setdefault(idx, []).append(parsed)
    n_done = 0
    while n_done in per_rep and len(per_rep[n_done]) == len(design.methods):
        n_done += 1
    rows = []
    for idx in range(n_done):
        rows.extend(per_rep[idx])
    return rows, n_done


@dataclass
class CellResult:
    design: CellDesign
    rows: list[dict]
    bootstrap_se: dict[str, float] | None = None
    bootstrap_warnings: list[str] = field(default_factory=list)

    def estimates(self, method: str, name: str) -> np.ndarray:
        return np.asarray(
            [r[name] for r in self.rows if r["method"] == method], dtype=float
        )

    def fisher_se(self, method: str, name: str) -> np.ndarray:
        return np.asarray(
            [r[f"se1_{name}"] for r in self.rows if r["method"] == method], dtype=float
        )

    def convergence_rate(self, method: str) -> float:
        conv = [r["converged"] for r in self.rows if r["method"] == method]
        return float(np.mean(conv)) if conv else float("nan")

    def summary(self) -> list[dict]:
        truth = headline_values(self.design.truth)
        out = []
        for name in headline_names(self.design.truth.num_variants):
            row = {"parameter": name, "truth": truth[name]}
            naive = self.estimates("naive", name)
            prop = self.estimates("proposed", name)
            row["mean_naive"] = float(naive.mean()) if naive.size else float("nan")
            row["sd_naive"] = float(naive.std(ddof=1)) if naive.size > 1 else float("nan")
            row["mean_proposed"] = float(prop.mean()) if prop.size else float("nan")
            row["sd_proposed"] = float(prop.std(ddof=1)) if prop.size > 1 else float("nan")
            se1 = self.fisher_se("proposed", name)
            se1 = se1[np.isfinite(se1)]
            row["mean_se1"] = float(se1.mean()) if se1.size else float("nan")
            row["mean_se2"] = (
                self.bootstrap_se[name] if self.bootstrap_se else float("nan")
            )
            out.append(row)
        return out


def run_cell(design: CellDesign, workers: int | None = None,
             raw_path=None, bootstrap_b: int = 0,
             bootstrap_count: int = 1) -> CellResult:
    """Run every replicate of one cell, optionally bootstrapping some of them.

    Replicates execute in parallel and are flushed to raw_path in index order,
    so a rerun with the same seed resumes after the last complete replicate
    and finishes with byte-identical output.  When bootstrap_b > 0, the first
    bootstrap_count replicates are refitted B times each and their bootstrap
    SDs averaged into the summary's second SE column.
    """
    existing, n_done = _load_existing(raw_path, design)
    fieldnames = ["replicate", "method", "converged", "loglik", "n_evals"]
    for name in headline_names(design.truth.num_variants):
        fieldnames += [name, f"se1_{name}"]
    flusher = _OrderedFlusher(raw_path, fieldnames, n_done)

    tasks = [(design, i) for i in range(n_done, design.n_replicates)]
    if tasks:
        n_workers = worker_count(len(tasks)) if workers is None else max(1, workers)
        if n_workers <= 1 or len(tasks) <= 1:
            for task in tasks:
                flusher.add(task[1], _run_replicate(task))
        else:
            with ProcessPoolExecutor(max_workers=n_workers) as pool:
                lazy = pool.map(_run_replicate, tasks, chunksize=1)
                for (_, idx), rows in zip(tasks, lazy):
                    flusher.add(idx, rows)
    rows = existing + flusher.collect()
    result = CellResult(design=design, rows=rows)

    if bootstrap_b > 0 and bootstrap_count > 0 and "proposed" in design.methods:
        names = headline_names(design.truth.num_variants)
        per_run: list[dict[str, float]] = []
        for idx in range(min(bootstrap_count, design.n_replicates)):
            series = simulate_replicate(design, idx)
            cfg = fit_config_for(design, idx, "proposed")
            fitted = fit(series, cfg)
            boot = parametric_bootstrap(
                fitted.estimates, series, cfg, bootstrap_b,
                seed=np.random.SeedSequence([design.seed, 0xB007, idx]),
                reporting=ReportingConfig(design.r1, design.r2),
                workers=workers,
            )
            conv = boot.converged
            se_map = {}
            for name in names:
                vals = np.asarray([
                    headline_from_natural(boot.estimates[i], fitted.param_names,
                                          design.truth.num_variants)[name]
                    for i in range(bootstrap_b)
                ])
                used = vals[conv] if conv.any() else vals
                se_map[name] = float(used.std(ddof=1))
            per_run.append(se_map)
            result.bootstrap_warnings.extend(boot.warnings)
        result.bootstrap_se = {
            name: float(np.mean([se[name] for se in per_run])) for name in names
        }
    return result


def write_summary_csv(result: CellResult, path):
    fieldnames = ["parameter", "truth", "mean_naive", "sd_naive",
                  "mean_proposed", "sd_proposed", "mean_se1", "mean_se2"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in result.summary():
            writer.writerow({k: _fmt(v) for k, v in row.items()})
