"""Individual-level simulation, population aggregation, and under-reporting.

Daily scheme, consistent with the occupancy propagation in ``model``: during
the interval (t, t+1] an uninfected individual acquires variant k with
probability a_k(t) dt (mutually exclusive across variants), an infected
individual recovers with probability g_k dt, and an infected, not previously
admitted individual is admitted with probability 1 - exp(-hazard dt).
Admissions are dated to the end of the interval, so the state on the day
before admission is always an infected one.  Admission is absorbing for the
hospitalization process only; infection keeps evolving and re-infection after
recovery is possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ModelError,
    ModelParams,
    as_covariates,
    hazard_matrix,
    intensity_matrix,
    shedding_rate_matrix,
)

_BLOCK_SIZE = 4096


@dataclass
class IndividualTrajectory:
    """One subject's full latent path (simulation and test oracles only)."""

    states: np.ndarray          # (T,) int, state per day, 0 = uninfected
    shedding: np.ndarray        # (T,) float, 0 exactly when uninfected
    hosp_time: int              # admission day, or horizon if censored
    hosp_indicator: bool
    hosp_variant: int = 0       # variant at admission, 0 if never admitted

    def __post_init__(self):
        if self.hosp_indicator and self.states[self.hosp_time - 1] == 0:
            raise ModelError("admission recorded from the uninfected state")
        infected = self.states > 0
        if np.any(self.shedding[infected] <= 0.0) or np.any(
            self.shedding[~infected] != 0.0
        ):
            raise ModelError("shedding must be positive exactly on infected days")


@dataclass
class AggregatedSeries:
    """Daily population-level surveillance series, days 0..horizon.

    Treated as immutable after construction; reporting produces a new object.
    """

    hosp: np.ndarray                     # H_t, new admissions
    w_total: np.ndarray                  # summed signal across variants
    s_star: np.ndarray                   # reported active cases
    covariates: np.ndarray               # (T, p)
    w_by_variant: np.ndarray | None = None      # (T, K)
    s_true: np.ndarray | None = None             # true active counts
    complete: np.ndarray | None = None           # L_t, reporting-complete flag
    s_true_by_variant: np.ndarray | None = None  # (T, K), simulation only

    def __post_init__(self):
        t = len(self.hosp)
        for name in ("w_total", "s_star"):
            if len(getattr(self, name)) != t:
                raise ModelError(f"series column {name} has wrong length")
        if self.covariates.shape[0] != t:
            raise ModelError("covariate rows do not match the series length")
        for name in ("w_by_variant", "s_true", "complete", "s_true_by_variant"):
            col = getattr(self, name)
            if col is not None and len(col) != t:
                raise ModelError(f"series column {name} has wrong length")
        if np.any(self.hosp < 0) or np.any(self.s_star < 0):
            raise ModelError("negative counts in series")
        if self.s_true is not None and np.any(self.s_star > self.s_true):
            raise ModelError("reported cases exceed true active cases")

    @property
    def num_days(self) -> int:
        return len(self.hosp)

    @property
    def horizon(self) -> int:
        return self.num_days - 1

    @property
    def num_variants(self) -> int | None:
        return None if self.w_by_variant is None else self.w_by_variant.shape[1]

    @property
    def cumulative_admissions(self) -> np.ndarray:
        return np.cumsum(self.hosp)


@dataclass(frozen=True)
class ReportingConfig:
    """Two-parameter under-reporting: a fraction r1 of days report complete
    case counts; on the rest each active case is reported with rate r2.
    """

    fraction_complete: float
    reporting_rate: float
    rng_seed: int = 0
    complete_days: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.fraction_complete <= 1.0:
            raise ModelError("fraction_complete must lie in [0, 1]")
        if not 0.0 <= self.reporting_rate <= 1.0:
            raise ModelError("reporting_rate must lie in [0, 1]")


def _transition_tables(params: ModelParams, covariates: np.ndarray):
    """Per-interval transition probabilities; raises on step-size violations."""
    dt = params.time_step
    steps = params.horizon
    gam = intensity_matrix(params.infection, np.arange(steps, dtype=float)) * dt
    exit0 = gam.sum(axis=1)
    bad = np.nonzero(exit0 > 1.0)[0]
    if bad.size:
        raise ModelError(
            f"total daily exit probability exceeds 1 on day {bad[0]}; reduce the "
            f"time step"
        )
    rec = np.asarray(params.infection.recovery) * dt
    if np.any(rec > 1.0):
        raise ModelError("recovery probability per step exceeds 1; reduce the time step")
    p_adm = -np.expm1(-hazard_matrix(params.hazard, covariates[:steps]) * dt)
    return gam, rec, p_adm


def simulate_individual(params: ModelParams, covariates, rng) -> IndividualTrajectory:
    """Simulate one subject's infection path, daily shedding, and admission.

    Reference implementation with an explicit day loop; `simulate_population`
    is the vectorized equivalent for whole cohorts.
    """
    covariates = as_covariates(covariates, params.num_days, params.num_covariates)
    gam, rec, p_adm = _transition_tables(params, covariates)
    cum = np.cumsum(gam, axis=1)
    k = params.num_variants
    steps = params.horizon

    states = np.zeros(steps + 1, dtype=np.int64)
    hosp_time = steps
    hosp_indicator = False
    hosp_variant = 0
    for t in range(steps):
        s = states[t]
        if s == 0:
            u = rng.random()
            idx = int(np.searchsorted(cum[t], u))
            states[t + 1] = idx + 1 if idx < k else 0
        else:
            if not hosp_indicator and rng.random() < p_adm[t, s - 1]:
                hosp_indicator = True
                hosp_time = t + 1
                hosp_variant = int(s)
            states[t + 1] = 0 if rng.random() < rec[s - 1] else s

    shedding = np.zeros(steps + 1)
    rate = shedding_rate_matrix(params.shedding, covariates)
    shape = np.asarray(params.shedding.shape)
    infected = np.nonzero(states > 0)[0]
    # tiny gamma shapes put most mass below double-precision range; floor the
    # draw at the smallest positive double so infected days stay positive
    tiny = np.nextafter(0.0, 1.0)
    for t in infected:
        v = states[t] - 1
        shedding[t] = max(rng.gamma(shape[v], 1.0 / rate[t, v]), tiny)
    return IndividualTrajectory(states, shedding, hosp_time, hosp_indicator, hosp_variant)


def simulate_trajectories(params: ModelParams, covariates, n: int, seed) -> list[IndividualTrajectory]:
    """n independent trajectories with per-individual child RNG streams."""
    streams = np.random.SeedSequence(seed).spawn(n)
    return [
        simulate_individual(params, covariates, np.random.default_rng(s))
        for s in streams
    ]


def _simulate_states_block(gam, rec, n: int, rng) -> np.ndarray:
    """Vectorized state paths for n individuals, shape (n, steps+1), int8."""
    steps = gam.shape[0]
    k = gam.shape[1]
    cum = np.cumsum(gam, axis=1)
    states = np.zeros((n, steps + 1), dtype=np.int8)
    cur = states[:, 0].copy()
    for t in range(steps):
        nxt = cur.copy()
        m0 = cur == 0
        n0 = int(m0.sum())
        if n0:
            idx = np.searchsorted(cum[t], rng.random(n0))
            nxt[m0] = np.where(idx < k, idx + 1, 0).astype(np.int8)
        mi = ~m0
        ni = int(mi.sum())
        if ni:
            stay = rng.random(ni) >= rec[cur[mi] - 1]
            nxt[mi] = np.where(stay, cur[mi], 0).astype(np.int8)
        states[:, t + 1] = nxt
        cur = nxt
    return states


def simulate_state_frequencies(params: ModelParams, n_paths: int, seed) -> np.ndarray:
    """Empirical occupancy frequencies from n_paths simulated state paths.

    Monte Carlo check for `propagate_occupancy`; shape (horizon+1, K+1).
    """
    covariates = np.zeros((params.num_days, params.num_covariates))
    gam, rec, _ = _transition_tables(params, covariates)
    k = params.num_variants
    counts = np.zeros((params.num_days, k + 1))
    done = 0
    streams = np.random.SeedSequence(seed).spawn(-(-n_paths // _BLOCK_SIZE))
    for ss in streams:
        n = min(_BLOCK_SIZE, n_paths - done)
        states = _simulate_states_block(gam, rec, n, np.random.default_rng(ss))
        for j in range(k + 1):
            counts[:, j] += (states == j).sum(axis=0)
        done += n
    return counts / n_paths


def simulate_population(params: ModelParams, covariates, seed) -> AggregatedSeries:
    """Simulate a whole cohort and aggregate it into daily series.

    Individuals are simulated in fixed-size blocks with child RNG streams
    spawned from the master seed, and block contributions are summed in block
    order, so the result is reproducible bit for bit no matter how blocks are
    scheduled.
    """
    covariates = as_covariates(covariates, params.num_days, params.num_covariates)
    gam, rec, p_adm = _transition_tables(params, covariates)
    n_pop = params.population
    k = params.num_variants
    t_days = params.num_days
    rate = shedding_rate_matrix(params.shedding, covariates)
    shape = np.asarray(params.shedding.shape)

    hosp = np.zeros(t_days)
    s_by_variant = np.zeros((t_days, k))
    w_by_variant = np.zeros((t_days, k))

    n_blocks = -(-n_pop // _BLOCK_SIZE)
    streams = np.random.SeedSequence(seed).spawn(n_blocks)
    done = 0
    for ss in streams:
        n = min(_BLOCK_SIZE, n_pop - done)
        rng = np.random.default_rng(ss)
        states = _simulate_states_block(gam, rec, n, rng)
        # admissions: one pass over days, at-risk = infected and never admitted
        admitted = np.zeros(n, dtype=bool)
        for t in range(t_days - 1):
            cur = states[:, t]
            at_risk = (cur > 0) & ~admitted
            n_risk = int(at_risk.sum())
            if n_risk == 0:
                continue
            hit = rng.random(n_risk) < p_adm[t, cur[at_risk] - 1]
            if hit.any():
                hosp[t + 1] += hit.sum()
                idx = np.nonzero(at_risk)[0][hit]
                admitted[idx] = True
        # shedding sums, drawn per (day, variant) batch
        for j in range(1, k + 1):
            infected = states == j
            s_by_variant[:, j - 1] += infected.sum(axis=0)
            counts = infected.sum(axis=0)
            for t in np.nonzero(counts)[0]:
                draws = rng.gamma(shape[j - 1], 1.0 / rate[t, j - 1], size=counts[t])
                w_by_variant[t, j - 1] += draws.sum()
        done += n

    s_true = s_by_variant.sum(axis=1).astype(np.int64)
    return AggregatedSeries(
        hosp=hosp.astype(np.int64),
        w_total=w_by_variant.sum(axis=1),
        s_star=s_true.copy(),
        covariates=covariates,
        w_by_variant=w_by_variant,
        s_true=s_true,
        complete=np.ones(t_days, dtype=bool),
        s_true_by_variant=s_by_variant,
    )


def aggregate(trajectories, params: ModelParams, covariates) -> AggregatedSeries:
    """Sum individual trajectories into daily series (exact defining sums)."""
    if not trajectories:
        raise ModelError("cannot aggregate an empty population")
    covariates = as_covariates(covariates, params.num_days, params.num_covariates)
    t_days = params.num_days
    k = params.num_variants
    hosp = np.zeros(t_days, dtype=np.int64)
    s_by_variant = np.zeros((t_days, k))
    w_by_variant = np.zeros((t_days, k))
    for traj in trajectories:
        if len(traj.states) != t_days:
            raise ModelError("trajectory horizon does not match the model")
        if traj.hosp_indicator:
            hosp[traj.hosp_time] += 1
        for j in range(1, k + 1):
            mask = traj.states == j
            s_by_variant[mask, j - 1] += 1
            w_by_variant[mask, j - 1] += traj.shedding[mask]
    s_true = s_by_variant.sum(axis=1).astype(np.int64)
    return AggregatedSeries(
        hosp=hosp,
        w_total=w_by_variant.sum(axis=1),
        s_star=s_true.copy(),
        covariates=covariates,
        w_by_variant=w_by_variant,
        s_true=s_true,
        complete=np.ones(t_days, dtype=bool),
        s_true_by_variant=s_by_variant,
    )


def apply_reporting(series: AggregatedSeries, config: ReportingConfig, rng=None) -> AggregatedSeries:
    """Thin the reported case counts; hospital and signal streams untouched.

    ceil(r1 * num_days) days are flagged complete and report the true count;
    the rest report Binomial(S_t, r2) cases.
    """
    if series.s_true is None:
        raise ModelError("reporting needs the true case counts")
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    t_days = series.num_days
    if config.complete_days is not None:
        days = np.asarray(sorted(config.complete_days), dtype=np.int64)
        if days.size and (days[0] < 0 or days[-1] >= t_days):
            raise ModelError("explicit complete days outside the series horizon")
    else:
        n_complete = math.ceil(config.fraction_complete * t_days)
        days = np.sort(rng.choice(t_days, size=n_complete, replace=False))
    complete = np.zeros(t_days, dtype=bool)
    complete[days] = True
    s_star = np.where(
        complete,
        series.s_true,
        rng.binomial(series.s_true, config.reporting_rate),
    ).astype(np.int64)
    return AggregatedSeries(
        hosp=series.hosp.copy(),
        w_total=series.w_total.copy(),
        s_star=s_star,
        covariates=series.covariates,
        w_by_variant=None if series.w_by_variant is None else series.w_by_variant.copy(),
        s_true=series.s_true.copy(),
        complete=complete,
        s_true_by_variant=None
        if series.s_true_by_variant is None
        else series.s_true_by_variant.copy(),
    )
