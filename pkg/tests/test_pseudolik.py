import math

import numpy as np
import pytest
from scipy import stats

from latentepi import (
    AggregatedSeries,
    HazardParams,
    IndividualTrajectory,
    InfectionParams,
    ModelError,
    ModelParams,
    ReportingConfig,
    Scenario,
    SheddingParams,
    apply_reporting,
    individual_loglik,
    individual_loglik_parts,
    latent_expectations,
    propagate_occupancy,
    pseudo_loglik,
    simulate_population,
    simulate_trajectories,
    truncated_mean,
    variant_shares,
)
from latentepi.pseudolik import pseudo_loglik_parts

from helpers import two_wave_params, zeros


def exact_truncated_binomial_mean(n, p, lower):
    s = np.arange(0, n + 1)
    pmf = stats.binom.pmf(s, n, p)
    keep = s >= lower
    return float((s[keep] * pmf[keep]).sum() / pmf[keep].sum())


class TestVariantShares:
    def test_single_active_variant(self):
        occupancy = np.array([[0.9, 0.1, 0.0]])
        shares = variant_shares(occupancy)
        assert shares[0] == pytest.approx([1.0, 0.0])

    def test_ratio_arithmetic(self):
        occupancy = np.array([[0.8, 0.15, 0.05]])
        shares = variant_shares(occupancy)
        assert shares[0] == pytest.approx([0.75, 0.25])

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            raw = rng.dirichlet(np.ones(k + 1), size=12)
            shares = variant_shares(raw)
            sums = shares.sum(axis=1)
            assert np.abs(sums - 1.0).max() < 1e-12

    def test_inactive_rows_flagged_nan(self):
        occupancy = np.array([[1.0, 0.0, 0.0], [0.5, 0.25, 0.25]])
        shares = variant_shares(occupancy)
        assert np.isnan(shares[0]).all()
        assert shares[1] == pytest.approx([0.5, 0.5])


class TestTruncatedMean:
    def test_inactive_constraint_returns_mean(self):
        # z = (0 - 500) / 22.36 is far below the cutoff
        assert truncated_mean(1000, 0.5, 0.0) == pytest.approx(500.0, abs=1e-9)

    def test_matches_exact_summation(self):
        approx = truncated_mean(1000, 0.1, 120.0)
        exact = exact_truncated_binomial_mean(1000, 0.1, 120.0)
        assert approx == pytest.approx(exact, rel=0.01)

    def test_monotone_in_lower_bound(self):
        n, p = 1000, 0.1
        mu = n * p
        sigma = math.sqrt(n * p * (1 - p))
        lowers = [mu + 3 * sigma, mu + 3 * sigma + 5]
        values = [truncated_mean(n, p, lo) for lo in lowers]
        assert values[1] > values[0]
        for lo, val in zip(lowers, values):
            assert val == pytest.approx(
                exact_truncated_binomial_mean(n, p, lo), rel=0.015
            )

    def test_result_at_least_mean(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            n = int(rng.integers(50, 5000))
            p = float(rng.uniform(0.01, 0.9))
            lower = float(rng.uniform(0, n * p + 4 * math.sqrt(n * p)))
            assert truncated_mean(n, p, lower) >= n * p - 1e-9

    def test_extreme_tail_stays_finite(self):
        value = truncated_mean(1000, 0.1, 300.0)  # z about +21
        assert np.isfinite(value)
        assert value >= 300.0 - 1.0

    def test_invalid_probability_rejected(self):
        with pytest.raises(ModelError):
            truncated_mean(100, 0.0, 5.0)
        with pytest.raises(ModelError):
            truncated_mean(100, 1.0, 5.0)


def make_series(hosp, s_star, w_total=None, complete=None, s_true=None, k=2):
    t = len(hosp)
    return AggregatedSeries(
        hosp=np.asarray(hosp, dtype=np.int64),
        w_total=np.zeros(t) if w_total is None else np.asarray(w_total, float),
        s_star=np.asarray(s_star, dtype=np.int64),
        covariates=np.zeros((t, 0)),
        s_true=None if s_true is None else np.asarray(s_true, dtype=np.int64),
        complete=None if complete is None else np.asarray(complete, dtype=bool),
    )


class TestLatentExpectations:
    def test_single_variant_day(self):
        occupancy = np.array([[0.9, 0.1, 0.0]])
        series = make_series([4], [100])
        lat = latent_expectations(series, occupancy, Scenario.FULL_OBSERVABILITY, 1000)
        assert lat.e_s[0] == pytest.approx([100.0, 0.0])
        assert lat.e_h[0] == pytest.approx([4.0, 0.0])

    def test_displayed_arithmetic(self):
        # shares (0.75, 0.25), resolved 400 actives, 8 admissions, C/N = 0.01
        occupancy = np.array([[1.0, 0.0, 0.0], [0.8, 0.15, 0.05]])
        series = make_series([8, 0], [0, 400])
        # place the 8 admissions on day 0 so C_1/N = 8/800 = 0.01
        lat = latent_expectations(series, occupancy, Scenario.FULL_OBSERVABILITY, 800)
        assert lat.e_s[1] == pytest.approx([300.0, 100.0])
        assert lat.e_h[1] == pytest.approx([0.0, 0.0])
        assert lat.e_r[1] == pytest.approx([297.0, 99.0])

    def test_decomposition_sums_exact(self):
        params = two_wave_params(n=8000)
        series = simulate_population(params, zeros(params), seed=31)
        occupancy = propagate_occupancy(params)
        lat = latent_expectations(series, occupancy, Scenario.FULL_OBSERVABILITY,
                                  params.population)
        defined = lat.defined
        assert np.allclose(
            lat.e_h[defined].sum(axis=1), series.hosp[defined], atol=1e-9
        )
        assert np.allclose(
            lat.e_s[defined].sum(axis=1), lat.s_resolved[defined], atol=1e-9
        )

    def test_variant_split_tracks_truth(self):
        params = two_wave_params(n=50000)
        series = simulate_population(params, zeros(params), seed=37)
        occupancy = propagate_occupancy(params)
        lat = latent_expectations(series, occupancy, Scenario.FULL_OBSERVABILITY,
                                  params.population)
        busy = series.s_true > 500
        err = lat.e_s[busy] - series.s_true_by_variant[busy]
        # Monte Carlo error of the variant split at truth parameters
        assert np.abs(err).max() < 4 * math.sqrt(500) + 0.05 * series.s_true[busy].max()

    def test_impossible_admissions_rejected(self):
        occupancy = np.array([[0.9, 0.1], [0.9, 0.1]])
        series = make_series([5, 0], [1, 1], k=1)
        with pytest.raises(ModelError):
            latent_expectations(series, occupancy, Scenario.FULL_OBSERVABILITY, 4)

    def test_policy_scenario_needs_flags(self):
        occupancy = np.array([[0.9, 0.1]])
        series = make_series([0], [5], k=1)
        with pytest.raises(ModelError):
            latent_expectations(series, occupancy, Scenario.POLICY_INFORMED, 100)

    def test_persistent_resolves_above_reported(self):
        params = two_wave_params(n=20000)
        series = simulate_population(params, zeros(params), seed=41)
        thinned = apply_reporting(series, ReportingConfig(0.0, 0.3, rng_seed=2))
        occupancy = propagate_occupancy(params)
        lat = latent_expectations(thinned, occupancy,
                                  Scenario.PERSISTENT_UNDERREPORTING,
                                  params.population)
        assert np.all(lat.s_resolved >= thinned.s_star - 1e-6)


class TestPseudoLoglik:
    def test_empty_epidemic_is_zero(self):
        infection = InfectionParams([[0.0], [0.0]], [[50.0], [120.0]],
                                    [[10.0], [10.0]], [0.07, 0.07])
        params = ModelParams(
            infection=infection,
            shedding=SheddingParams((1e-3, 1e-3), (0.0, 0.0)),
            hazard=HazardParams((-5.0, -5.0)),
            population=1000, horizon=30,
        )
        series = make_series([0] * 31, [0] * 31)
        assert pseudo_loglik(params, series, Scenario.FULL_OBSERVABILITY) == 0.0

    def test_true_parameters_beat_distorted(self):
        params = two_wave_params(n=5000)
        wins = 0
        for rep in range(50):
            series = simulate_population(params, zeros(params), seed=600 + rep)
            good = pseudo_loglik(params, series, Scenario.FULL_OBSERVABILITY)
            worse_h = HazardParams(
                intercept=(params.hazard.intercept[0] + math.log(2.0),
                           params.hazard.intercept[1]),
            )
            bad_params = ModelParams(
                infection=params.infection, shedding=params.shedding,
                hazard=worse_h, population=params.population,
                horizon=params.horizon,
            )
            bad = pseudo_loglik(bad_params, series, Scenario.FULL_OBSERVABILITY)
            wins += good > bad
        assert wins >= 48  # >= 95% of replicates

    def test_full_equals_policy_with_all_complete(self):
        params = two_wave_params(n=8000)
        series = simulate_population(params, zeros(params), seed=51)
        assert series.complete.all()
        full = pseudo_loglik(params, series, Scenario.FULL_OBSERVABILITY)
        policy = pseudo_loglik(params, series, Scenario.POLICY_INFORMED)
        assert full == policy

    def test_variant_label_permutation_invariance(self):
        params = two_wave_params(n=8000)
        series = simulate_population(params, zeros(params), seed=53)
        value = pseudo_loglik(params, series, Scenario.FULL_OBSERVABILITY)

        swapped_params = ModelParams(
            infection=InfectionParams(
                amplitudes=params.infection.amplitudes[::-1],
                centers=params.infection.centers[::-1],
                widths=params.infection.widths[::-1],
                recovery=params.infection.recovery[::-1],
            ),
            shedding=SheddingParams(
                shape=params.shedding.shape[::-1],
                intercept=params.shedding.intercept[::-1],
                coefs=params.shedding.coefs[::-1],
            ),
            hazard=HazardParams(
                intercept=params.hazard.intercept[::-1],
                coefs=params.hazard.coefs[::-1],
            ),
            population=params.population, horizon=params.horizon,
        )
        swapped_series = AggregatedSeries(
            hosp=series.hosp, w_total=series.w_total, s_star=series.s_star,
            covariates=series.covariates,
            w_by_variant=series.w_by_variant[:, ::-1],
            s_true=series.s_true, complete=series.complete,
        )
        swapped = pseudo_loglik(swapped_params, swapped_series,
                                Scenario.FULL_OBSERVABILITY)
        assert swapped == pytest.approx(value, rel=1e-12)

    def test_smooth_in_parameters(self):
        params = two_wave_params(n=8000)
        series = simulate_population(params, zeros(params), seed=57)
        base = pseudo_loglik(params, series, Scenario.FULL_OBSERVABILITY)
        bumped = ModelParams(
            infection=params.infection,
            shedding=SheddingParams(
                shape=(params.shedding.shape[0] * (1 + 1e-8),
                       params.shedding.shape[1]),
                intercept=params.shedding.intercept,
            ),
            hazard=params.hazard,
            population=params.population, horizon=params.horizon,
        )
        moved = pseudo_loglik(bumped, series, Scenario.FULL_OBSERVABILITY)
        assert abs(moved - base) < 1e-4

    def test_case_term_is_valid_pmf_at_small_n(self):
        from latentepi.pseudolik import _case_logterms

        n = 30
        infection = InfectionParams([[0.02]], [[10.0]], [[6.0]], [0.07])
        params = ModelParams(
            infection=infection,
            shedding=SheddingParams((1e-3,), (0.0,)),
            hazard=HazardParams((-50.0,)),
            population=n, horizon=3,
        )
        occupancy = propagate_occupancy(params)
        p_active = occupancy[:, 1:].sum(axis=1)
        for t in range(1, 4):
            total = 0.0
            for s in range(n + 1):
                series = make_series(
                    hosp=[0] * 4,
                    s_star=[s if u == t else 0 for u in range(4)],
                    k=1,
                )
                terms = _case_logterms(series, p_active,
                                       Scenario.FULL_OBSERVABILITY, n)
                assert terms[t] <= 1e-12  # exp(term) in (0, 1]
                total += math.exp(terms[t])
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_horizon_mismatch_rejected(self):
        params = two_wave_params(n=1000, horizon=100)
        series = make_series([0] * 5, [0] * 5)
        with pytest.raises(ModelError):
            pseudo_loglik(params, series, Scenario.FULL_OBSERVABILITY)

    def test_signal_only_days_counted_in_diagnostics(self):
        params = two_wave_params(n=2000)
        series = simulate_population(params, zeros(params), seed=61)
        w = series.w_total.copy()
        w[0] = 1e-6  # signal on a day with essentially no occupancy mass
        tweaked = AggregatedSeries(
            hosp=series.hosp, w_total=w, s_star=series.s_star,
            covariates=series.covariates, s_true=series.s_true,
            complete=series.complete,
        )
        _, diag = pseudo_loglik_parts(params, tweaked,
                                      Scenario.FULL_OBSERVABILITY)
        assert diag["signal_without_infections"] >= 1


class TestIndividualOracle:
    def test_never_infected_closed_form(self):
        params = two_wave_params(n=1)
        t = params.num_days
        traj = IndividualTrajectory(
            states=np.zeros(t, dtype=int), shedding=np.zeros(t),
            hosp_time=params.horizon, hosp_indicator=False,
        )
        parts = individual_loglik_parts([traj], params, zeros(params))
        assert parts.hosp == 0.0
        assert parts.signal == 0.0
        from latentepi.model import intensity_matrix

        gam = intensity_matrix(params.infection,
                               np.arange(params.horizon, dtype=float))
        assert parts.infection == pytest.approx(-gam.sum(), rel=1e-12)

    def test_hand_built_path(self):
        params = two_wave_params(n=1, horizon=20)
        t = params.num_days
        states = np.zeros(t, dtype=int)
        states[3:11] = 1  # infected days 3..10, recovered at day 11
        shed = np.zeros(t)
        shed[3:11] = 2.0e-7
        traj = IndividualTrajectory(
            states=states, shedding=shed, hosp_time=6, hosp_indicator=True,
            hosp_variant=1,
        )
        parts = individual_loglik_parts([traj], params, zeros(params))

        from latentepi.model import (
            hazard_rate,
            infection_intensity,
            shedding_logpdf,
        )

        haz = hazard_rate(params.hazard, 1, ())
        # at risk on infected days 3, 4, 5 (admitted at day 6)
        expected_h = math.log(haz) - 3 * haz
        assert parts.hosp == pytest.approx(expected_h, rel=1e-12)

        expected_w = sum(
            shedding_logpdf(params.shedding, 1, (), 2.0e-7) for _ in range(8)
        )
        assert parts.signal == pytest.approx(expected_w, rel=1e-12)

        gamma10 = params.infection.recovery[0]
        expected_s = (
            math.log(infection_intensity(params.infection, 1, 2.0))
            + math.log(gamma10)
            - sum(
                infection_intensity(params.infection, 1, float(u))
                + infection_intensity(params.infection, 2, float(u))
                for u in range(20)
                if states[u] == 0
            )
            - 8 * gamma10
        )
        assert parts.infection == pytest.approx(expected_s, rel=1e-12)

    def test_total_is_sum_of_parts(self):
        params = two_wave_params(n=50)
        trajs = simulate_trajectories(params, zeros(params), 50, seed=71)
        parts = individual_loglik_parts(trajs, params, zeros(params))
        assert individual_loglik(trajs, params, zeros(params)) == pytest.approx(
            parts.total
        )
