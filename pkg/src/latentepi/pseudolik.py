"""Pseudo-log-likelihood for aggregated surveillance series.

Latent variant-specific counts are replaced by conditional expectations
computed from the occupancy probabilities: the active-case total is split
across variants by the occupancy shares, hospital admissions follow a
Poisson-type term, the summed signal follows a gamma term whose shape scales
with the expected number of infected individuals, and reported case counts
enter either through an exact binomial mass (complete days) or through a
one-sided survival probability (under-reported days) with the active-case
total replaced by a normal-approximation truncated mean.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import special

from .model import (
    ModelError,
    ModelParams,
    as_covariates,
    hazard_matrix,
    intensity_matrix,
    propagate_occupancy,
    shedding_rate_matrix,
)
from .simulate import AggregatedSeries

# Large negative stand-in for log(0); finite so derivative-free searches can
# back out of impossible regions instead of propagating NaN.
LOG_ZERO = -1e300

_ACTIVE_EPS = 1e-12
_SHAPE_EPS = 1e-8
_Z_LOW = -8.0


class Scenario(enum.Enum):
    """How reported case counts are read as information about true actives."""

    FULL_OBSERVABILITY = 1
    POLICY_INFORMED = 2
    PERSISTENT_UNDERREPORTING = 3


def variant_shares(occupancy: np.ndarray) -> np.ndarray:
    """Conditional variant shares P{s(t)=k | s(t) != 0}, shape (T, K).

    Rows where no infected occupancy mass remains (sum < 1e-12) are NaN; the
    likelihood terms for those days are skipped downstream.
    """
    occupancy = np.asarray(occupancy, dtype=float)
    active = occupancy[:, 1:].sum(axis=1)
    defined = active > _ACTIVE_EPS
    shares = np.full_like(occupancy[:, 1:], np.nan)
    shares[defined] = occupancy[defined, 1:] / active[defined, None]
    return shares


def _inverse_mills(z):
    # phi(z) / (1 - Phi(z)); the scaled complementary error function keeps the
    # right tail finite where pdf and survival both underflow.
    return np.sqrt(2.0 / np.pi) / special.erfcx(z / np.sqrt(2.0))


def truncated_mean(n: int, p: float, lower: float) -> float:
    """Normal-approximation E(S | S >= lower) for S ~ Binomial(n, p).

    Returns mu + sigma * phi(z) / (1 - Phi(z)) with z = (lower - mu) / sigma;
    for z <= -8 the truncation is inactive and mu is returned.
    """
    if not 0.0 < p < 1.0:
        raise ModelError("truncated_mean requires p in (0, 1)")
    if n < 1:
        raise ModelError("truncated_mean requires n >= 1")
    mu = n * p
    sigma = np.sqrt(n * p * (1.0 - p))
    z = (lower - mu) / sigma
    if z <= _Z_LOW:
        return float(mu)
    return float(mu + sigma * _inverse_mills(z))


def _truncated_mean_vec(n: int, p: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Vectorized truncated mean; degenerate p handled for internal use."""
    p = np.clip(p, 0.0, 1.0)
    mu = n * p
    var = n * p * (1.0 - p)
    out = mu.copy()
    pos = var > 0
    sigma = np.sqrt(var[pos])
    z = (lower[pos] - mu[pos]) / sigma
    adj = np.where(z <= _Z_LOW, 0.0, sigma * _inverse_mills(np.maximum(z, _Z_LOW)))
    out[pos] = mu[pos] + adj
    # no variance left: the count is deterministic at mu, keep the bound
    out[~pos] = np.maximum(mu[~pos], lower[~pos])
    return out


@dataclass
class LatentExpectations:
    """Per-day, per-variant conditional expectations of the latent counts."""

    e_s: np.ndarray          # expected actives by variant, (T, K)
    e_h: np.ndarray          # expected admissions by variant, (T, K)
    e_r: np.ndarray          # expected at-risk by variant, (T, K)
    s_resolved: np.ndarray   # scenario-resolved active-case total, (T,)
    shares: np.ndarray       # occupancy shares, NaN where undefined, (T, K)
    defined: np.ndarray      # (T,) bool, False where shares are undefined


def _resolve_cases(series: AggregatedSeries, active: np.ndarray, scenario: Scenario,
                   n: int) -> np.ndarray:
    s_star = series.s_star.astype(float)
    if scenario is Scenario.FULL_OBSERVABILITY:
        return s_star
    if scenario is Scenario.POLICY_INFORMED:
        if series.complete is None:
            raise ModelError("policy-informed scenario needs the L column")
        resolved = _truncated_mean_vec(n, active, s_star)
        return np.where(series.complete, s_star, resolved)
    return _truncated_mean_vec(n, active, s_star)


def latent_expectations(series: AggregatedSeries, occupancy: np.ndarray,
                        scenario: Scenario, n: int) -> LatentExpectations:
    """Scenario-resolved active cases split into variant-level expectations.

    E(S_t^k) = S_t * share_k(t); E(H_t^k) = H_t * share_k(t);
    E(R_t^k) = E(S_t^k) * (1 - C_t / N).
    """
    occupancy = np.asarray(occupancy, dtype=float)
    if occupancy.shape[0] != series.num_days:
        raise ModelError("series and occupancy tables disagree on the horizon")
    cum = series.cumulative_admissions
    if np.any(cum > n):
        raise ModelError("cumulative admissions exceed the population size")
    active = occupancy[:, 1:].sum(axis=1)
    shares = variant_shares(occupancy)
    defined = active > _ACTIVE_EPS
    resolved = _resolve_cases(series, active, scenario, n)
    filled = np.where(defined[:, None], np.nan_to_num(shares), 0.0)
    e_s = resolved[:, None] * filled
    e_h = series.hosp.astype(float)[:, None] * filled
    e_r = e_s * (1.0 - cum / n)[:, None]
    return LatentExpectations(e_s, e_h, e_r, resolved, shares, defined)


def _binom_logpmf(s: np.ndarray, n: int, p: np.ndarray) -> np.ndarray:
    """Exact binomial log-pmf via log-gamma, with p in {0, 1} edges."""
    out = np.full(len(s), LOG_ZERO)
    inner = (p > 0.0) & (p < 1.0)
    if inner.any():
        pi = p[inner]
        si = s[inner]
        out[inner] = (
            special.gammaln(n + 1)
            - special.gammaln(si + 1)
            - special.gammaln(n - si + 1)
            + si * np.log(pi)
            + (n - si) * np.log1p(-pi)
        )
    out[(p <= 0.0) & (s == 0)] = 0.0
    out[(p >= 1.0) & (s == n)] = 0.0
    return out


def _norm_logsf(z: np.ndarray) -> np.ndarray:
    # log(1 - Phi(z)) = log Phi(-z), stable in both tails
    return special.log_ndtr(-z)


def _case_logterms(series: AggregatedSeries, active: np.ndarray,
                   scenario: Scenario, n: int) -> np.ndarray:
    s_star = series.s_star.astype(float)
    p = np.clip(active, 0.0, 1.0)
    if scenario is Scenario.FULL_OBSERVABILITY:
        complete = np.ones(series.num_days, dtype=bool)
    elif scenario is Scenario.POLICY_INFORMED:
        if series.complete is None:
            raise ModelError("policy-informed scenario needs the L column")
        complete = np.asarray(series.complete, dtype=bool)
    else:
        complete = np.zeros(series.num_days, dtype=bool)

    out = np.empty(series.num_days)
    out[complete] = _binom_logpmf(s_star[complete], n, p[complete])
    lower = ~complete
    if lower.any():
        mu = n * p[lower]
        var = n * p[lower] * (1.0 - p[lower])
        sl = s_star[lower]
        vals = np.zeros(lower.sum())
        pos = var > 0
        vals[pos] = _norm_logsf((sl[pos] - mu[pos]) / np.sqrt(var[pos]))
        vals[~pos] = np.where(sl[~pos] <= mu[~pos], 0.0, LOG_ZERO)
        out[lower] = vals
    return out


def pseudo_loglik(params: ModelParams, series: AggregatedSeries,
                  scenario: Scenario) -> float:
    value, _ = pseudo_loglik_parts(params, series, scenario)
    return value


def pseudo_loglik_parts(params: ModelParams, series: AggregatedSeries,
                        scenario: Scenario):
    """Pseudo-log-likelihood value plus diagnostic term counts.

    Day terms: (a) Poisson-type admissions sum_k E(H) log f - f E(R);
    (b) gamma signal terms with shape E(S) alpha, skipped on zero-signal or
    vanishing-shape days; (c) case term, exact binomial on complete days and
    one-sided normal-approximation survival otherwise.  Returns a finite
    value, using a large negative sentinel for impossible configurations.
    """
    if series.num_days != params.num_days:
        raise ModelError("series horizon does not match the model")
    n = params.population
    x = series.covariates
    if x.shape[1] != params.num_covariates:
        raise ModelError("series covariate dimension does not match the model")

    rho = propagate_occupancy(params)
    active = rho[:, 1:].sum(axis=1)
    lat = latent_expectations(series, rho, scenario, n)
    defined = lat.defined
    diagnostics = {"days_no_occupancy": int((~defined).sum())}

    # admissions; the log-hazard is the linear predictor, always finite
    haz = hazard_matrix(params.hazard, x)
    h_terms = lat.e_h * np.log(haz) - haz * lat.e_r
    hosp_term = float(h_terms[defined].sum())

    # signal
    if series.w_by_variant is not None:
        w = series.w_by_variant
    else:
        w = series.w_total[:, None] * np.nan_to_num(lat.shares)
    shape = lat.e_s * np.asarray(params.shedding.shape)[None, :]
    rate = shedding_rate_matrix(params.shedding, x)
    observed = np.isfinite(w)
    valid = defined[:, None] & observed & (w > 0.0) & (shape >= _SHAPE_EPS)
    diagnostics["signal_terms_dropped"] = int((observed & ~valid).sum())
    diagnostics["signal_without_infections"] = int(
        (observed & (w > 0.0) & ((~defined[:, None]) | (shape < _SHAPE_EPS))).sum()
    )
    sv = shape[valid]
    wv = w[valid]
    rv = rate[valid]
    signal_term = float(
        (sv * np.log(rv) - special.gammaln(sv) + (sv - 1.0) * np.log(wv) - rv * wv).sum()
    )

    case_term = float(_case_logterms(series, active, scenario, n).sum())

    total = hosp_term + signal_term + case_term
    if not np.isfinite(total):
        total = LOG_ZERO
    return float(max(total, LOG_ZERO)), diagnostics


@dataclass
class OracleParts:
    """Complete-data log-likelihood split into its three processes."""

    hosp: float
    signal: float
    infection: float

    @property
    def total(self) -> float:
        return self.hosp + self.signal + self.infection


def individual_loglik_parts(trajectories, params: ModelParams,
                            covariates) -> OracleParts:
    """Complete-data log-likelihood from fully observed trajectories.

    Discrete-day analogue of the individual-level factorization: point
    contributions use log-intensities at the interval generating the event,
    integrals become per-day intensity sums times the step size.  Test oracle
    for small populations; estimation never sees individual paths.
    """
    x = as_covariates(covariates, params.num_days, params.num_covariates)
    dt = params.time_step
    steps = params.horizon
    gam = intensity_matrix(params.infection, np.arange(steps, dtype=float))
    exit0 = gam.sum(axis=1)
    rec = np.asarray(params.infection.recovery)
    haz = hazard_matrix(params.hazard, x[:steps])
    rate = shedding_rate_matrix(params.shedding, x)
    shape = np.asarray(params.shedding.shape)
    lgam_shape = special.gammaln(shape)

    h_total = 0.0
    w_total = 0.0
    s_total = 0.0
    for traj in trajectories:
        states = traj.states
        if len(states) != steps + 1:
            raise ModelError("trajectory horizon does not match the model")
        end = traj.hosp_time if traj.hosp_indicator else steps
        for t in range(end):
            s = states[t]
            if s > 0:
                h_total -= haz[t, s - 1] * dt
        if traj.hosp_indicator:
            h_total += np.log(haz[traj.hosp_time - 1, traj.hosp_variant - 1])

        infected = np.nonzero(states > 0)[0]
        for t in infected:
            v = states[t] - 1
            w = traj.shedding[t]
            w_total += (
                shape[v] * np.log(rate[t, v])
                - lgam_shape[v]
                + (shape[v] - 1.0) * np.log(w)
                - rate[t, v] * w
            )

        for t in range(steps):
            s = states[t]
            s_total -= (exit0[t] if s == 0 else rec[s - 1]) * dt
            nxt = states[t + 1]
            if nxt != s:
                if s == 0:
                    s_total += np.log(gam[t, nxt - 1])
                else:
                    s_total += np.log(rec[s - 1])
    return OracleParts(float(h_total), float(w_total), float(s_total))


def individual_loglik(trajectories, params: ModelParams, covariates) -> float:
    return individual_loglik_parts(trajectories, params, covariates).total
