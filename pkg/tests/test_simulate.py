import math

import numpy as np
import pytest

from latentepi import (
    AggregatedSeries,
    HazardParams,
    IndividualTrajectory,
    InfectionParams,
    ModelError,
    ModelParams,
    ReportingConfig,
    SheddingParams,
    aggregate,
    apply_reporting,
    hazard_rate,
    simulate_individual,
    simulate_population,
    simulate_trajectories,
)


from helpers import two_wave_params, zeros  # noqa: E402


def flat_params(a=0.01, recovery=0.07, n=1000, horizon=200, hazard=-6.0):
    # one very wide bump approximates a constant infection intensity
    infection = InfectionParams(
        amplitudes=[[a]], centers=[[100.0]], widths=[[1e6]], recovery=[recovery]
    )
    shedding = SheddingParams(shape=(0.5,), intercept=(0.0,))
    return ModelParams(
        infection=infection, shedding=shedding,
        hazard=HazardParams(intercept=(hazard,)),
        population=n, horizon=horizon,
    )


class TestSimulateIndividual:
    def test_no_infection_possible(self):
        infection = InfectionParams([[0.0]], [[50.0]], [[10.0]], [0.07])
        params = ModelParams(
            infection=infection,
            shedding=SheddingParams(shape=(1.0,), intercept=(0.0,)),
            hazard=HazardParams(intercept=(-3.0,)),
            population=10, horizon=100,
        )
        traj = simulate_individual(params, zeros(params), np.random.default_rng(0))
        assert np.all(traj.states == 0)
        assert np.all(traj.shedding == 0.0)
        assert not traj.hosp_indicator
        assert traj.hosp_time == params.horizon

    def test_vanishing_hazard_never_admits(self):
        params = two_wave_params(n=10000, hazard1=-50.0, hazard2=-50.0)
        series = simulate_population(params, zeros(params), seed=14)
        assert series.hosp.sum() == 0

    def test_shedding_positive_exactly_when_infected(self):
        params = flat_params()
        rng = np.random.default_rng(7)
        for _ in range(50):
            traj = simulate_individual(params, zeros(params), rng)
            infected = traj.states > 0
            assert np.all(traj.shedding[infected] > 0)
            assert np.all(traj.shedding[~infected] == 0.0)

    def test_admission_only_from_infected_state(self):
        params = flat_params(a=0.02, hazard=-3.5)
        rng = np.random.default_rng(8)
        admitted = 0
        for _ in range(300):
            traj = simulate_individual(params, zeros(params), rng)
            if traj.hosp_indicator:
                admitted += 1
                assert traj.states[traj.hosp_time - 1] == traj.hosp_variant
        assert admitted > 0

    def test_equilibrium_fraction(self):
        # constant entry 0.01/day against recovery 0.07/day settles at
        # 0.01 / (0.01 + 0.07) = 0.125
        params = flat_params(a=0.01, recovery=0.07, n=100_000, horizon=200,
                             hazard=-50.0)
        series = simulate_population(params, zeros(params), seed=3)
        fraction = series.s_true[-1] / params.population
        assert fraction == pytest.approx(0.125, abs=0.01)


class TestAggregate:
    def test_single_never_infected(self):
        params = flat_params(n=1)
        t = params.num_days
        traj = IndividualTrajectory(
            states=np.zeros(t, dtype=int), shedding=np.zeros(t),
            hosp_time=params.horizon, hosp_indicator=False,
        )
        series = aggregate([traj], params, zeros(params))
        assert series.hosp.sum() == 0
        assert series.s_true.sum() == 0
        assert series.w_total.sum() == 0.0

    def test_two_handwritten_paths(self):
        params = flat_params(n=2, horizon=20)
        t = params.num_days
        states = np.zeros(t, dtype=int)
        states[3:11] = 1  # infected days 3..10
        shed = np.where(states > 0, 2.5, 0.0)
        sick = IndividualTrajectory(
            states=states, shedding=shed, hosp_time=6, hosp_indicator=True,
            hosp_variant=1,
        )
        healthy = IndividualTrajectory(
            states=np.zeros(t, dtype=int), shedding=np.zeros(t),
            hosp_time=params.horizon, hosp_indicator=False,
        )
        series = aggregate([sick, healthy], params, zeros(params))
        assert series.hosp[6] == 1 and series.hosp.sum() == 1
        expected_s = np.zeros(t, dtype=int)
        expected_s[3:11] = 1
        assert np.array_equal(series.s_true, expected_s)
        cum = series.cumulative_admissions
        assert np.all(cum[:6] == 0) and np.all(cum[6:] == 1)
        assert series.w_total[4] == pytest.approx(2.5)

    def test_admission_conservation(self):
        params = flat_params(a=0.02, n=3000, hazard=-4.0)
        trajectories = simulate_trajectories(params, zeros(params), 3000, seed=5)
        series = aggregate(trajectories, params, zeros(params))
        assert series.hosp.sum() == sum(t.hosp_indicator for t in trajectories)

    def test_horizon_mismatch_rejected(self):
        params = flat_params(n=1, horizon=20)
        bad = IndividualTrajectory(
            states=np.zeros(5, dtype=int), shedding=np.zeros(5),
            hosp_time=4, hosp_indicator=False,
        )
        with pytest.raises(ModelError):
            aggregate([bad], params, zeros(params))


class TestPopulationConsistency:
    def test_population_matches_trajectory_aggregation_statistically(self):
        params = flat_params(a=0.02, n=4000, hazard=-4.0)
        fast = simulate_population(params, zeros(params), seed=40)
        slow = aggregate(
            simulate_trajectories(params, zeros(params), 4000, seed=41),
            params, zeros(params),
        )
        # same generative law, different streams: compare totals loosely
        assert fast.s_true.mean() == pytest.approx(slow.s_true.mean(), rel=0.1)
        assert fast.hosp.sum() == pytest.approx(slow.hosp.sum(), rel=0.25)

    def test_signal_mean_tracks_expected_actives(self):
        # E(W_t^k | S_t^k) = S_t^k * alpha / rate; checked across replicates
        params = two_wave_params(n=2000)
        t_check = 60
        w_draws, s_draws = [], []
        for rep in range(120):
            series = simulate_population(params, zeros(params), seed=1000 + rep)
            w_draws.append(series.w_by_variant[t_check, 0])
            s_draws.append(series.s_true_by_variant[t_check, 0])
        w_draws = np.asarray(w_draws)
        mean_per_case = params.shedding.shape[0] / math.exp(
            params.shedding.intercept[0]
        )
        expected = np.mean(s_draws) * mean_per_case
        se = w_draws.std(ddof=1) / math.sqrt(len(w_draws))
        assert abs(w_draws.mean() - expected) < 3 * se + 1e-12

    def test_admission_rate_matches_hazard(self):
        params = flat_params(a=0.02, n=2500, hazard=-4.5)
        trajectories = simulate_trajectories(params, zeros(params), 2500, seed=77)
        admissions = 0
        at_risk_days = 0
        for traj in trajectories:
            end = traj.hosp_time if traj.hosp_indicator else params.horizon
            at_risk_days += int((traj.states[:end] > 0).sum())
            admissions += int(traj.hosp_indicator)
        p_admit = -math.expm1(-hazard_rate(params.hazard, 1, ()))
        expected = p_admit * at_risk_days
        assert abs(admissions - expected) < 3 * math.sqrt(expected)

    def test_same_seed_reproduces_exactly(self):
        params = two_wave_params(n=5000)
        a = simulate_population(params, zeros(params), seed=99)
        b = simulate_population(params, zeros(params), seed=99)
        assert np.array_equal(a.hosp, b.hosp)
        assert np.array_equal(a.s_true, b.s_true)
        assert np.array_equal(a.w_by_variant, b.w_by_variant)


@pytest.fixture(scope="module")
def reported_series():
    params = two_wave_params(n=20000)
    return simulate_population(params, zeros(params), seed=123)


class TestReporting:
    def test_full_reporting_is_identity(self, reported_series):
        out = apply_reporting(reported_series, ReportingConfig(1.0, 0.3, rng_seed=1))
        assert np.array_equal(out.s_star, reported_series.s_true)
        assert np.all(out.complete)

    def test_thinning_rate(self, reported_series):
        out = apply_reporting(reported_series, ReportingConfig(0.0, 0.2, rng_seed=2))
        busy = reported_series.s_true > 100
        ratio = out.s_star[busy] / reported_series.s_true[busy]
        assert ratio.mean() == pytest.approx(0.2, abs=0.02)

    def test_exact_complete_day_count(self, reported_series):
        out = apply_reporting(reported_series, ReportingConfig(0.8, 0.5, rng_seed=3))
        expected = math.ceil(0.8 * reported_series.num_days)
        assert int(out.complete.sum()) == expected

    def test_reported_never_exceeds_true(self, reported_series):
        for seed in range(5):
            out = apply_reporting(reported_series, ReportingConfig(0.3, 0.7, rng_seed=seed))
            assert np.all(out.s_star <= out.s_true)

    def test_hosp_and_signal_untouched(self, reported_series):
        out = apply_reporting(reported_series, ReportingConfig(0.5, 0.1, rng_seed=4))
        assert np.array_equal(out.hosp, reported_series.hosp)
        assert np.array_equal(out.w_total, reported_series.w_total)

    def test_explicit_day_set(self, reported_series):
        days = (0, 5, 10)
        out = apply_reporting(
            reported_series, ReportingConfig(0.0, 0.2, rng_seed=5, complete_days=days)
        )
        assert np.array_equal(np.nonzero(out.complete)[0], days)

    def test_same_seed_identical(self, reported_series):
        cfg = ReportingConfig(0.4, 0.3, rng_seed=11)
        a = apply_reporting(reported_series, cfg)
        b = apply_reporting(reported_series, cfg)
        assert np.array_equal(a.s_star, b.s_star)
        assert np.array_equal(a.complete, b.complete)

    def test_requires_true_counts(self):
        bad = AggregatedSeries(
            hosp=np.zeros(5, dtype=int), w_total=np.zeros(5),
            s_star=np.zeros(5, dtype=int), covariates=np.zeros((5, 0)),
        )
        with pytest.raises(ModelError):
            apply_reporting(bad, ReportingConfig(0.5, 0.5))
