"""Core model: infection intensities, occupancy propagation, observation densities.

The latent infection process is a time-inhomogeneous Markov chain on states
{0, 1, ..., K}: 0 = uninfected, k >= 1 = infected with variant k.  Entry
intensities 0 -> k are Gaussian mixtures over calendar time; exit intensities
k -> 0 are fixed per-variant recovery rates.  While infected with variant k an
individual emits a gamma-distributed daily signal and is exposed to a
log-linear hospitalization hazard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


class ModelError(ValueError):
    """Invalid parameter values or inconsistent model dimensions."""


def _as_nested_tuple(values):
    return tuple(tuple(float(v) for v in row) for row in values)


@dataclass(frozen=True)
class InfectionParams:
    """Entry-intensity mixtures and fixed recovery rates, one set per variant.

    amplitudes[k][m], centers[k][m], widths[k][m] parameterize the m-th
    Gaussian component of variant k+1's entry intensity (1/day, day, day).
    recovery[k] is the fixed k+1 -> 0 exit rate (1/day); it is a constant of
    the model, not an estimated quantity.
    """

    amplitudes: tuple[tuple[float, ...], ...]
    centers: tuple[tuple[float, ...], ...]
    widths: tuple[tuple[float, ...], ...]
    recovery: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _as_nested_tuple(self.amplitudes))
        object.__setattr__(self, "centers", _as_nested_tuple(self.centers))
        object.__setattr__(self, "widths", _as_nested_tuple(self.widths))
        object.__setattr__(self, "recovery", tuple(float(g) for g in self.recovery))
        k = len(self.amplitudes)
        if not (len(self.centers) == len(self.widths) == len(self.recovery) == k):
            raise ModelError("infection parameter blocks disagree on variant count")
        for a_k, b_k, c_k in zip(self.amplitudes, self.centers, self.widths):
            if not (len(a_k) == len(b_k) == len(c_k)):
                raise ModelError("mixture component counts disagree within a variant")
            if any(not math.isfinite(v) for v in (*a_k, *b_k, *c_k)):
                raise ModelError("non-finite infection parameter")
            if any(a < 0 for a in a_k):
                raise ModelError("mixture amplitudes must be >= 0")
            if any(c <= 0 for c in c_k):
                raise ModelError("mixture widths must be > 0")
        if any(g <= 0 or not math.isfinite(g) for g in self.recovery):
            raise ModelError("recovery rates must be > 0")

    @property
    def num_variants(self) -> int:
        return len(self.amplitudes)

    @property
    def components(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.amplitudes)


@dataclass(frozen=True)
class SheddingParams:
    """Gamma signal model per variant: shape alpha_k, log-rate intercept and
    covariate coefficients.  The daily signal of a variant-k infected
    individual with covariate row x is Gamma(shape, rate) with
    rate = exp(intercept_k + x @ coefs_k); mean = shape / rate.
    """

    shape: tuple[float, ...]
    intercept: tuple[float, ...]
    coefs: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(float(v) for v in self.shape))
        object.__setattr__(self, "intercept", tuple(float(v) for v in self.intercept))
        coefs = self.coefs or tuple(() for _ in self.shape)
        object.__setattr__(self, "coefs", _as_nested_tuple(coefs))
        k = len(self.shape)
        if not (len(self.intercept) == len(self.coefs) == k):
            raise ModelError("shedding parameter blocks disagree on variant count")
        if any(a <= 0 or not math.isfinite(a) for a in self.shape):
            raise ModelError("gamma shapes must be > 0")
        if any(not math.isfinite(v) for v in self.intercept):
            raise ModelError("non-finite shedding intercept")
        if len({len(c) for c in self.coefs}) > 1:
            raise ModelError("shedding coefficient vectors must share a length")

    @property
    def num_variants(self) -> int:
        return len(self.shape)


@dataclass(frozen=True)
class HazardParams:
    """Hospitalization hazard per variant: log-hazard intercept and covariate
    coefficients; hazard = exp(intercept_k + x @ coefs_k), state 0 has hazard 0.
    """

    intercept: tuple[float, ...]
    coefs: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intercept", tuple(float(v) for v in self.intercept))
        coefs = self.coefs or tuple(() for _ in self.intercept)
        object.__setattr__(self, "coefs", _as_nested_tuple(coefs))
        if len(self.coefs) != len(self.intercept):
            raise ModelError("hazard parameter blocks disagree on variant count")
        if any(not math.isfinite(v) for v in self.intercept):
            raise ModelError("non-finite hazard intercept")
        if len({len(c) for c in self.coefs}) > 1:
            raise ModelError("hazard coefficient vectors must share a length")

    @property
    def num_variants(self) -> int:
        return len(self.intercept)


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set plus the fixed design constants (N, E, K, step)."""

    infection: InfectionParams
    shedding: SheddingParams
    hazard: HazardParams
    population: int
    horizon: int
    time_step: float = 1.0

    def __post_init__(self):
        k = self.infection.num_variants
        if self.shedding.num_variants != k or self.hazard.num_variants != k:
            raise ModelError("parameter blocks disagree on variant count")
        if self.population < 1:
            raise ModelError("population must be >= 1")
        if self.horizon < 1:
            raise ModelError("horizon must be >= 1")
        if not (self.time_step > 0 and math.isfinite(self.time_step)):
            raise ModelError("time step must be > 0")
        p_w = len(self.shedding.coefs[0]) if self.shedding.coefs else 0
        p_h = len(self.hazard.coefs[0]) if self.hazard.coefs else 0
        if p_w != p_h:
            raise ModelError("shedding and hazard covariate dimensions differ")

    @property
    def num_variants(self) -> int:
        return self.infection.num_variants

    @property
    def num_covariates(self) -> int:
        return len(self.shedding.coefs[0]) if self.shedding.coefs else 0

    @property
    def num_days(self) -> int:
        """Number of observation days, 0..horizon inclusive."""
        return self.horizon + 1


def as_covariates(x, num_days: int, num_covariates: int | None = None) -> np.ndarray:
    """Validate and shape a covariate matrix: one row per day, finite entries."""
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.size == 0:
        arr = np.zeros((num_days, 0))
    if arr.shape[0] != num_days:
        raise ModelError(
            f"covariate matrix has {arr.shape[0]} rows, expected {num_days}"
        )
    if not np.all(np.isfinite(arr)):
        raise ModelError("covariate matrix contains non-finite entries")
    if num_covariates is not None and arr.shape[1] != num_covariates:
        raise ModelError(
            f"covariate matrix has {arr.shape[1]} columns, expected {num_covariates}"
        )
    return arr


def _check_variant(k: int, num_variants: int):
    if not 1 <= k <= num_variants:
        raise ModelError(f"variant index {k} outside 1..{num_variants}")


def infection_intensity(infection: InfectionParams, variant: int, t):
    """Entry intensity 0 -> variant at time t (days): sum of Gaussian bumps
    a * exp(-(t - b)^2 / (2 c^2)).  Accepts scalar or array t.
    """
    _check_variant(variant, infection.num_variants)
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    i = variant - 1
    for a, b, c in zip(
        infection.amplitudes[i], infection.centers[i], infection.widths[i]
    ):
        out += a * np.exp(-((t - b) ** 2) / (2.0 * c * c))
    return float(out) if out.ndim == 0 else out


def intensity_matrix(infection: InfectionParams, times) -> np.ndarray:
    """Entry intensities for all variants on a time grid, shape (len(times), K)."""
    times = np.asarray(times, dtype=float)
    out = np.empty((times.size, infection.num_variants))
    for k in range(infection.num_variants):
        out[:, k] = infection_intensity(infection, k + 1, times)
    return out


def propagate_occupancy(params: ModelParams) -> np.ndarray:
    """Forward-propagate state occupancy probabilities day by day.

    Returns rho with shape (horizon+1, K+1); rho[t, 0] is the uninfected
    probability and rho[t, k] the variant-k probability at day t.  Uses the
    first-order update
        rho[t+1, k] = rho[t, k] (1 - g_k dt) + rho[t, 0] a_k(t) dt
    with probability mass conservation in state 0.  Requires the per-day exit
    probabilities sum(a_k(t)) dt and g_k dt to stay within [0, 1].
    """
    n_steps = params.horizon
    dt = params.time_step
    k = params.num_variants
    gam = intensity_matrix(params.infection, np.arange(n_steps, dtype=float)) * dt
    if not np.all(np.isfinite(gam)):
        raise ModelError("non-finite infection intensity during propagation")
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

    rho = np.empty((n_steps + 1, k + 1))
    rho[0, 0] = 1.0
    rho[0, 1:] = 0.0
    keep = 1.0 - rec
    for t in range(n_steps):
        r0 = rho[t, 0]
        rk = rho[t, 1:]
        rho[t + 1, 1:] = rk * keep + r0 * gam[t]
        rho[t + 1, 0] = r0 * (1.0 - exit0[t]) + rk @ rec
    return rho


def shedding_rate(shedding: SheddingParams, variant: int, x) -> float:
    """Gamma rate parameter exp(intercept + x @ coefs) for one variant."""
    _check_variant(variant, shedding.num_variants)
    i = variant - 1
    eta = shedding.intercept[i]
    coefs = shedding.coefs[i]
    if coefs:
        eta = eta + float(np.dot(np.asarray(x, dtype=float).ravel(), coefs))
    return math.exp(eta)


def shedding_mean(shedding: SheddingParams, variant: int, x) -> float:
    """Mean daily signal of one infected individual: shape / rate."""
    return shedding.shape[variant - 1] / shedding_rate(shedding, variant, x)


def shedding_logpdf(shedding: SheddingParams, variant: int, x, w: float) -> float:
    """Log gamma density of a positive signal value w for an infected state.

    State 0 emits exactly zero and is handled by callers; w <= 0 is an error
    here because the gamma density has no mass at 0.
    """
    if not w > 0:
        raise ModelError("shedding density requires w > 0")
    alpha = shedding.shape[variant - 1]
    rate = shedding_rate(shedding, variant, x)
    return (
        alpha * math.log(rate)
        - float(special.gammaln(alpha))
        + (alpha - 1.0) * math.log(w)
        - rate * w
    )


def hazard_rate(hazard: HazardParams, variant: int, x) -> float:
    """Daily hospitalization hazard exp(intercept + x @ coefs) while infected."""
    _check_variant(variant, hazard.num_variants)
    i = variant - 1
    eta = hazard.intercept[i]
    coefs = hazard.coefs[i]
    if coefs:
        eta = eta + float(np.dot(np.asarray(x, dtype=float).ravel(), coefs))
    if not math.isfinite(eta):
        raise ModelError("non-finite hazard linear predictor")
    return math.exp(eta)


def hazard_matrix(hazard: HazardParams, covariates: np.ndarray) -> np.ndarray:
    """Hazards for all days and variants, shape (T, K)."""
    t = covariates.shape[0]
    k = hazard.num_variants
    out = np.empty((t, k))
    intercepts = np.asarray(hazard.intercept)
    if hazard.coefs and len(hazard.coefs[0]):
        coefs = np.asarray(hazard.coefs)  # (K, p)
        out[:] = np.exp(intercepts[None, :] + covariates @ coefs.T)
    else:
        out[:] = np.exp(intercepts)[None, :]
    return out


def shedding_rate_matrix(shedding: SheddingParams, covariates: np.ndarray) -> np.ndarray:
    """Gamma rates for all days and variants, shape (T, K)."""
    t = covariates.shape[0]
    k = shedding.num_variants
    out = np.empty((t, k))
    intercepts = np.asarray(shedding.intercept)
    if shedding.coefs and len(shedding.coefs[0]):
        coefs = np.asarray(shedding.coefs)
        out[:] = np.exp(intercepts[None, :] + covariates @ coefs.T)
    else:
        out[:] = np.exp(intercepts)[None, :]
    return out
