"""Maximization of the pseudo-log-likelihood and uncertainty quantification.

Free parameters live on a transformed scale: log for amplitudes, widths, and
gamma shapes (positivity without constrained optimization), identity for
mixture centers and all regression intercepts/coefficients.  A simplex search
handles the dropped-term discontinuities near zero-signal boundaries and a
quasi-Newton stage polishes; standard errors come from a central-difference
Hessian (observed information) and from a parametric bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .model import (
    HazardParams,
    InfectionParams,
    ModelError,
    ModelParams,
    SheddingParams,
    propagate_occupancy,
)
from .pseudolik import (
    LOG_ZERO,
    Scenario,
    latent_expectations,
    pseudo_loglik,
    pseudo_loglik_parts,
)
from .simulate import AggregatedSeries, ReportingConfig, apply_reporting, simulate_population
from .util import parallel_map

_SENTINEL_NEG = -LOG_ZERO  # objective value standing in for +inf


@dataclass(frozen=True)
class OptimizerSettings:
    max_evals: int = 20000
    objective_tol: float = 1e-8
    param_tol: float = 1e-6
    restarts: int = 3
    jitter: float = 0.15


@dataclass(frozen=True)
class FitConfig:
    """Everything `fit` needs besides the data.

    template supplies the model structure and fixed constants (population,
    horizon, variant count, mixture sizes, recovery rates); its parameter
    values are ignored unless initial_values == "template".  naive_mode reads
    the reported counts as the true actives on every day.
    """

    template: ModelParams
    scenario: Scenario = Scenario.POLICY_INFORMED
    naive_mode: bool = False
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    initial_values: ModelParams | str = "auto"
    fix_centers: bool = False
    seed: int = 0

    def effective_scenario(self) -> Scenario:
        return Scenario.FULL_OBSERVABILITY if self.naive_mode else self.scenario


@dataclass
class FitResult:
    estimates: ModelParams
    loglik: float
    converged: bool
    n_evals: int
    param_names: list[str]
    theta: np.ndarray                   # transformed-scale optimum
    natural: np.ndarray                 # natural-scale free parameters
    se_fisher: np.ndarray | None = None
    se_bootstrap: np.ndarray | None = None
    bootstrap_estimates: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


class ParameterMap:
    """Bijection between ModelParams and the flat transformed vector."""

    def __init__(self, template: ModelParams, fix_centers: bool = False):
        self.template = template
        self.fix_centers = fix_centers
        inf = template.infection
        names: list[str] = []
        log_scale: list[bool] = []
        for k, m_k in enumerate(inf.components, start=1):
            for m in range(1, m_k + 1):
                names.append(f"a[{k}.{m}]")
                log_scale.append(True)
                if not fix_centers:
                    names.append(f"b[{k}.{m}]")
                    log_scale.append(False)
                names.append(f"c[{k}.{m}]")
                log_scale.append(True)
        n_cov = template.num_covariates
        for k in range(1, template.num_variants + 1):
            names.append(f"alpha[{k}]")
            log_scale.append(True)
            names.append(f"beta0[{k}]")
            log_scale.append(False)
            for j in range(1, n_cov + 1):
                names.append(f"beta[{k}.{j}]")
                log_scale.append(False)
        self._hazard_start = len(names)
        for k in range(1, template.num_variants + 1):
            names.append(f"lambda0[{k}]")
            log_scale.append(False)
            for j in range(1, n_cov + 1):
                names.append(f"lambda[{k}.{j}]")
                log_scale.append(False)
        self.names = names
        self.log_scale = np.asarray(log_scale)
        self.infection_slice = slice(0, self._infection_size())
        self.emission_slice = slice(self._infection_size(), len(names))

    def _infection_size(self) -> int:
        per = 2 if self.fix_centers else 3
        return per * sum(self.template.infection.components)

    @property
    def size(self) -> int:
        return len(self.names)

    def pack(self, params: ModelParams) -> np.ndarray:
        inf = params.infection
        vals: list[float] = []
        for k in range(params.num_variants):
            for m in range(len(inf.amplitudes[k])):
                vals.append(math.log(inf.amplitudes[k][m]))
                if not self.fix_centers:
                    vals.append(inf.centers[k][m])
                vals.append(math.log(inf.widths[k][m]))
        for k in range(params.num_variants):
            vals.append(math.log(params.shedding.shape[k]))
            vals.append(params.shedding.intercept[k])
            vals.extend(params.shedding.coefs[k])
        for k in range(params.num_variants):
            vals.append(params.hazard.intercept[k])
            vals.extend(params.hazard.coefs[k])
        return np.asarray(vals)

    def unpack(self, theta: np.ndarray) -> ModelParams:
        t = self.template
        inf = t.infection
        pos = 0
        amplitudes, centers, widths = [], [], []
        for k in range(t.num_variants):
            a_k, b_k, c_k = [], [], []
            for m in range(len(inf.amplitudes[k])):
                a_k.append(math.exp(min(theta[pos], 700.0)))
                pos += 1
                if self.fix_centers:
                    b_k.append(inf.centers[k][m])
                else:
                    b_k.append(theta[pos])
                    pos += 1
                c_k.append(math.exp(min(theta[pos], 700.0)))
                pos += 1
            amplitudes.append(a_k)
            centers.append(b_k)
            widths.append(c_k)
        n_cov = t.num_covariates
        shape, s_int, s_coef = [], [], []
        for _ in range(t.num_variants):
            shape.append(math.exp(min(theta[pos], 700.0)))
            s_int.append(theta[pos + 1])
            s_coef.append(tuple(theta[pos + 2 : pos + 2 + n_cov]))
            pos += 2 + n_cov
        h_int, h_coef = [], []
        for _ in range(t.num_variants):
            h_int.append(theta[pos])
            h_coef.append(tuple(theta[pos + 1 : pos + 1 + n_cov]))
            pos += 1 + n_cov
        return ModelParams(
            infection=InfectionParams(amplitudes, centers, widths, inf.recovery),
            shedding=SheddingParams(tuple(shape), tuple(s_int), tuple(s_coef)),
            hazard=HazardParams(tuple(h_int), tuple(h_coef)),
            population=t.population,
            horizon=t.horizon,
            time_step=t.time_step,
        )

    def natural(self, theta: np.ndarray) -> np.ndarray:
        return np.where(self.log_scale, np.exp(theta), theta)

    def natural_gradient(self, theta: np.ndarray) -> np.ndarray:
        """Diagonal of d(natural)/d(theta), for the delta method."""
        return np.where(self.log_scale, np.exp(theta), 1.0)


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    window = max(1, window | 1)
    pad = window // 2
    padded = np.concatenate([x[pad:0:-1], x, x[-2 : -pad - 2 : -1]])
    kernel = np.ones(window) / window
    return np.convolve(padded, kernel, mode="valid")


def _find_peaks(signal: np.ndarray, n_peaks: int, min_separation: int = 25):
    """Indices of the n_peaks tallest local maxima, returned in time order."""
    order = np.argsort(signal)[::-1]
    floor = 0.1 * signal.max()
    chosen: list[int] = []
    for idx in order:
        if signal[idx] <= floor:
            break
        if all(abs(idx - c) >= min_separation for c in chosen):
            chosen.append(int(idx))
        if len(chosen) == n_peaks:
            break
    if len(chosen) < n_peaks:
        t = len(signal)
        fill = np.linspace(0.2 * t, 0.8 * t, n_peaks)
        for f in fill:
            if len(chosen) == n_peaks:
                break
            if all(abs(f - c) >= min_separation for c in chosen):
                chosen.append(int(f))
        chosen = chosen[:n_peaks]
    return sorted(chosen)


def _half_max_width(signal: np.ndarray, peak: int) -> float:
    half = signal[peak] / 2.0
    left = peak
    while left > 0 and signal[left] > half:
        left -= 1
    right = peak
    while right < len(signal) - 1 and signal[right] > half:
        right += 1
    return max(right - left, 6) / 2.355  # FWHM to Gaussian width


def auto_initial_params(series: AggregatedSeries, template: ModelParams,
                        scenario: Scenario | None = None) -> ModelParams:
    """Data-driven starting values: mixture bumps from smoothed case peaks,
    emission parameters from crude method-of-moments; refined by the block
    warm start inside `fit`.

    Under the policy-informed scenario only the reporting-complete days carry
    level information, so the case curve is interpolated across the rest
    before smoothing.
    """
    n = template.population
    cases = series.s_star.astype(float)
    if (
        scenario is Scenario.POLICY_INFORMED
        and series.complete is not None
        and series.complete.any()
        and not series.complete.all()
    ):
        days = np.arange(series.num_days, dtype=float)
        good = np.asarray(series.complete, dtype=bool)
        cases = np.interp(days, days[good], cases[good])
    sig = _moving_average(cases, 15)
    if sig.max() <= 0:
        sig = _moving_average(np.nan_to_num(series.w_total), 15)
        sig = sig / max(sig.max(), 1e-300) * 0.02 * n
    components = template.infection.components
    peaks = _find_peaks(sig, sum(components))

    amplitudes, centers, widths = [], [], []
    pos = 0
    for k, m_k in enumerate(components):
        rec = template.infection.recovery[k]
        a_k, b_k, c_k = [], [], []
        for _ in range(m_k):
            peak = peaks[pos]
            pos += 1
            frac = min(max(sig[peak] / n, 1e-6), 0.5)
            a_k.append(rec * frac / (1.0 - frac))
            b_k.append(max(peak - 0.7 / rec, 1.0))
            c_k.append(float(np.clip(_half_max_width(sig, peak), 5.0, 50.0)))
        amplitudes.append(a_k)
        centers.append(b_k)
        widths.append(c_k)
    infection = InfectionParams(amplitudes, centers, widths, template.infection.recovery)

    active_days = sig > 0.05 * sig.max()
    person_days = float(sig[active_days].sum())
    lam0 = math.log(max(float(series.hosp.sum()), 1.0) / max(person_days, 1.0))
    w_obs = np.nan_to_num(series.w_total)
    mean_signal = float(w_obs[active_days].sum()) / max(person_days, 1.0)
    alpha0 = 0.01
    beta0 = math.log(alpha0 / max(mean_signal, 1e-280))
    k = template.num_variants
    n_cov = template.num_covariates
    zeros = tuple(tuple(0.0 for _ in range(n_cov)) for _ in range(k))
    shedding = SheddingParams((alpha0,) * k, (beta0,) * k, zeros)
    hazard = HazardParams((lam0,) * k, zeros)
    return replace(template, infection=infection, shedding=shedding, hazard=hazard)


def _make_objective(pmap: ParameterMap, series: AggregatedSeries, scenario: Scenario):
    counter = {"evals": 0}

    def objective(theta):
        counter["evals"] += 1
        try:
            params = pmap.unpack(theta)
            return -pseudo_loglik(params, series, scenario)
        except (ModelError, OverflowError):
            return _SENTINEL_NEG

    return objective, counter


def _signal_block_loglik(log_alpha, beta0, coefs, w, e_s, x, valid_base):
    alpha = math.exp(min(log_alpha, 700.0))
    eta = beta0 + (x @ coefs if len(coefs) else 0.0)
    rate = np.exp(eta)
    shape = e_s * alpha
    valid = valid_base & (shape >= 1e-8)
    if not valid.any():
        return 0.0
    sv, wv = shape[valid], w[valid]
    rv = rate[valid] if np.ndim(rate) else np.full(len(sv), rate)
    return float((sv * np.log(rv) - gammaln(sv) + (sv - 1) * np.log(wv) - rv * wv).sum())


def _warm_start_emissions(pmap: ParameterMap, theta: np.ndarray,
                          series: AggregatedSeries, scenario: Scenario) -> np.ndarray:
    """Block update of shedding and hazard given the current infection block.

    With occupancy fixed, the admission intercept has a closed form and each
    variant's signal parameters reduce to a cheap two-dimensional search.
    """
    params = pmap.unpack(theta)
    rho = propagate_occupancy(params)
    lat = latent_expectations(series, rho, scenario, params.population)
    theta = theta.copy()
    t = pmap.template
    n_cov = t.num_covariates
    k_tot = t.num_variants
    x = series.covariates

    if series.w_by_variant is not None:
        w_all = series.w_by_variant
    else:
        w_all = series.w_total[:, None] * np.nan_to_num(lat.shares)

    base = pmap.emission_slice.start
    for k in range(k_tot):
        off = base + k * (2 + n_cov)
        w_k = w_all[:, k]
        e_s = lat.e_s[:, k]
        valid_base = lat.defined & np.isfinite(w_k) & (w_k > 0)
        coefs = theta[off + 2 : off + 2 + n_cov]

        def nll(v, w_k=w_k, e_s=e_s, coefs=coefs, valid_base=valid_base):
            return -_signal_block_loglik(v[0], v[1], coefs, w_k, e_s, x, valid_base)

        res = optimize.minimize(
            nll, np.array([theta[off], theta[off + 1]]), method="Nelder-Mead",
            options={"maxfev": 400, "xatol": 1e-4, "fatol": 1e-7},
        )
        theta[off], theta[off + 1] = res.x

    hbase = base + k_tot * (2 + n_cov)
    for k in range(k_tot):
        off = hbase + k * (1 + n_cov)
        coefs = theta[off + 1 : off + 1 + n_cov]
        num = float(lat.e_h[lat.defined, k].sum())
        # exposure weighted by the covariate part of the hazard, so the
        # intercept update is the exact profile maximizer given the rest
        weight = np.exp(x[lat.defined] @ coefs) if n_cov else 1.0
        den = float((weight * lat.e_r[lat.defined, k]).sum())
        if num > 0 and den > 0:
            theta[off] = math.log(num / den)
    return theta


def _run_stages(objective, theta0, pmap, settings, budget):
    """Simplex stage then quasi-Newton polish from one starting point."""
    evals_cap = max(budget, 200)
    res_nm = optimize.minimize(
        objective, theta0, method="Nelder-Mead",
        options={
            "maxfev": int(evals_cap * 0.8),
            "xatol": settings.param_tol * 10,
            "fatol": max(settings.objective_tol * 100, 1e-7),
            "adaptive": pmap.size > 8,
        },
    )
    res_qn = optimize.minimize(
        objective, res_nm.x, method="L-BFGS-B",
        options={"maxfun": int(evals_cap * 0.2), "ftol": settings.objective_tol,
                 "gtol": 1e-6},
    )
    if res_qn.fun <= res_nm.fun:
        best_x, best_f = res_qn.x, float(res_qn.fun)
        converged = bool(res_qn.success) or bool(res_nm.success)
    else:
        best_x, best_f = res_nm.x, float(res_nm.fun)
        converged = bool(res_nm.success)
    return best_x, best_f, converged


def fit(series: AggregatedSeries, config: FitConfig) -> FitResult:
    """Best local optimum of the pseudo-log-likelihood over restarts.

    Restart 0 starts from the configured (or auto) initial values after a
    block warm start; later restarts jitter the transformed starting point.
    The highest objective wins, ties resolved by the lowest restart index.
    """
    scenario = config.effective_scenario()
    pmap = ParameterMap(config.template, config.fix_centers)
    if isinstance(config.initial_values, ModelParams):
        start_params = config.initial_values
    elif config.initial_values == "template":
        start_params = config.template
    elif config.initial_values == "auto":
        start_params = auto_initial_params(series, config.template, scenario)
    else:
        raise ModelError(f"unknown initial_values {config.initial_values!r}")
    theta_init = pmap.pack(start_params)

    objective, counter = _make_objective(pmap, series, scenario)
    settings = config.optimizer
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    per_restart = settings.max_evals // max(settings.restarts, 1)

    best = None
    for restart in range(settings.restarts):
        theta0 = theta_init.copy()
        if restart > 0:
            theta0 = theta0 + settings.jitter * rng.standard_normal(pmap.size)
        try:
            theta0 = _warm_start_emissions(pmap, theta0, series, scenario)
        except (ModelError, OverflowError):
            pass
        theta_r, f_r, conv_r = _run_stages(objective, theta0, pmap, settings, per_restart)
        if best is None or f_r < best[1] - 1e-12:
            best = (theta_r, f_r, conv_r)

    theta_hat, f_hat, converged = best
    loglik = -f_hat
    if loglik <= LOG_ZERO:
        converged = False
    n_evals = counter["evals"]
    estimates = pmap.unpack(theta_hat)
    _, diagnostics = pseudo_loglik_parts(estimates, series, scenario)
    diagnostics["boundary_flags"] = [
        name
        for name, on_log, v in zip(pmap.names, pmap.log_scale, theta_hat)
        if on_log and abs(v) > 25.0
    ]
    se, flags = _fisher_standard_errors(objective, pmap, theta_hat)
    diagnostics.update(flags)
    return FitResult(
        estimates=estimates,
        loglik=loglik,
        converged=converged and n_evals < settings.max_evals,
        n_evals=n_evals,
        param_names=list(pmap.names),
        theta=theta_hat,
        natural=pmap.natural(theta_hat),
        se_fisher=se,
        diagnostics=diagnostics,
    )


def _numeric_hessian(fn, theta: np.ndarray, steps: np.ndarray) -> np.ndarray:
    n = len(theta)
    hess = np.empty((n, n))
    f0 = fn(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        hess[i, i] = (fn(theta + ei) - 2.0 * f0 + fn(theta - ei)) / steps[i] ** 2
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = steps[i]
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = steps[j]
            hess[i, j] = hess[j, i] = (
                fn(theta + ei + ej) - fn(theta + ei - ej)
                - fn(theta - ei + ej) + fn(theta - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return hess


def _fisher_standard_errors(objective, pmap: ParameterMap, theta: np.ndarray):
    steps = np.maximum(1e-4, 1e-4 * np.abs(theta))
    hess = _numeric_hessian(objective, theta, steps)
    flags: dict = {}
    n = len(theta)
    se = np.full(n, np.nan)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        flags["fisher_singular"] = True
        return se, flags
    var = np.diag(cov)
    bad = ~(var > 0)
    if bad.any():
        flags["fisher_nonpositive"] = [pmap.names[i] for i in np.nonzero(bad)[0]]
    good = ~bad
    scale = pmap.natural_gradient(theta)
    se[good] = np.sqrt(var[good]) * scale[good]
    return se, flags


def fisher_se(series: AggregatedSeries, estimates: ModelParams,
              config: FitConfig) -> np.ndarray:
    """Natural-scale standard errors from the observed information at
    `estimates` (central differences on the transformed scale, delta-method
    mapping back).  Coordinates with no positive curvature come back NaN.
    """
    pmap = ParameterMap(config.template, config.fix_centers)
    objective, _ = _make_objective(pmap, series, config.effective_scenario())
    se, _flags = _fisher_standard_errors(objective, pmap, pmap.pack(estimates))
    return se


@dataclass
class BootstrapResult:
    se: np.ndarray                  # natural-scale SD across converged fits
    estimates: np.ndarray           # (B, n_free) natural-scale estimates
    converged: np.ndarray           # (B,) bool
    warnings: list[str]


def _bootstrap_one(args):
    estimates, covariates, reporting, config, sim_seed, rep_seed, fit_seed = args
    population = simulate_population(estimates, covariates, sim_seed)
    observed = apply_reporting(population, reporting, np.random.default_rng(rep_seed))
    cfg = replace(config, initial_values=estimates, seed=fit_seed)
    res = fit(observed, cfg)
    return res.natural, res.converged


def parametric_bootstrap(estimates: ModelParams, template: AggregatedSeries,
                         config: FitConfig, b: int, seed,
                         reporting: ReportingConfig | None = None,
                         replicate_seeds=None,
                         workers: int | None = None) -> BootstrapResult:
    """Simulate-and-refit standard errors at the fitted parameters.

    Each replicate regenerates a full population at `estimates`, applies the
    template's reporting-complete day pattern (reporting rate taken from
    `reporting`), and refits warm-started at `estimates` with the same
    configuration.  Non-converged replicates are excluded from the SD and
    counted; more than 20% of them attaches a warning.
    """
    if b < 2:
        raise ModelError("parametric bootstrap needs at least 2 replicates")
    if reporting is None:
        if template.complete is not None and not bool(np.all(template.complete)):
            raise ModelError(
                "template has under-reported days; supply the reporting "
                "configuration used to generate them"
            )
        reporting = ReportingConfig(1.0, 1.0)
    if template.complete is not None:
        days = tuple(int(d) for d in np.nonzero(template.complete)[0])
        reporting = replace(reporting, complete_days=days)

    if replicate_seeds is None:
        root = np.random.SeedSequence(seed)
        replicate_seeds = [s.generate_state(1)[0] for s in root.spawn(b)]
    tasks = []
    for i in range(b):
        ss = np.random.SeedSequence(int(replicate_seeds[i]))
        sim_s, rep_s, fit_s = [int(c.generate_state(1)[0]) for c in ss.spawn(3)]
        tasks.append(
            (estimates, template.covariates, reporting, config, sim_s, rep_s, fit_s)
        )
    outcomes = parallel_map(_bootstrap_one, tasks, workers=workers)
    mat = np.vstack([nat for nat, _ in outcomes])
    conv = np.asarray([ok for _, ok in outcomes])
    warnings = []
    n_bad = int((~conv).sum())
    if n_bad > 0.2 * b:
        warnings.append(f"{n_bad} of {b} bootstrap replicates did not converge")
    used = mat[conv] if conv.any() else mat
    se = used.std(axis=0, ddof=1) if len(used) > 1 else np.full(mat.shape[1], np.nan)
    return BootstrapResult(se=se, estimates=mat, converged=conv, warnings=warnings)


def scenario_sweep(series: AggregatedSeries, scenarios, config: FitConfig) -> list[FitResult]:
    """Independent fits per scenario from shared initial values."""
    if isinstance(config.initial_values, ModelParams):
        shared = config.initial_values
    elif config.initial_values == "template":
        shared = config.template
    else:
        shared = auto_initial_params(series, config.template)
    results = []

    for scenario in scenarios:
        cfg = replace(config, scenario=scenario, initial_values=shared)
        results.append(fit(series, cfg))
    return results
