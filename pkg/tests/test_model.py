import math

import numpy as np
import pytest
from scipy import integrate

from latentepi import (
    HazardParams,
    InfectionParams,
    ModelError,
    ModelParams,
    SheddingParams,
    hazard_rate,
    infection_intensity,
    propagate_occupancy,
    shedding_logpdf,
    shedding_mean,
    simulate_state_frequencies,
)


def single_variant(a=0.001, b=50.0, c=10.0, recovery=0.07):
    return InfectionParams(
        amplitudes=[[a]], centers=[[b]], widths=[[c]], recovery=[recovery]
    )


def make_params(infection, n=1000, horizon=200, shapes=None):
    k = infection.num_variants
    shedding = SheddingParams(
        shape=shapes or (1.0,) * k, intercept=(0.0,) * k
    )
    hazard = HazardParams(intercept=(-6.0,) * k)
    return ModelParams(
        infection=infection, shedding=shedding, hazard=hazard,
        population=n, horizon=horizon,
    )


class TestInfectionIntensity:
    def test_center_value(self):
        assert infection_intensity(single_variant(), 1, 50.0) == pytest.approx(0.001)

    def test_one_sigma_displacement(self):
        expected = 0.001 * math.exp(-0.5)
        assert infection_intensity(single_variant(), 1, 60.0) == pytest.approx(
            expected, rel=1e-12
        )

    def test_two_component_sum(self):
        inf = InfectionParams(
            amplitudes=[[0.001, 0.002]], centers=[[40.0, 120.0]],
            widths=[[8.0, 12.0]], recovery=[0.07],
        )
        # independent scalar evaluation of each Gaussian bump
        t = 80.0
        expected = 0.001 * math.exp(-((t - 40.0) ** 2) / (2 * 8.0**2)) + (
            0.002 * math.exp(-((t - 120.0) ** 2) / (2 * 12.0**2))
        )
        assert infection_intensity(inf, 1, t) == pytest.approx(expected, rel=1e-12)

    def test_component_permutation_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = rng.uniform(1e-4, 5e-3, size=3)
            b = rng.uniform(0, 200, size=3)
            c = rng.uniform(2, 40, size=3)
            perm = rng.permutation(3)
            inf1 = InfectionParams([a], [b], [c], [0.07])
            inf2 = InfectionParams([a[perm]], [b[perm]], [c[perm]], [0.07])
            t = rng.uniform(0, 200)
            assert infection_intensity(inf1, 1, t) == pytest.approx(
                infection_intensity(inf2, 1, t), rel=1e-12
            )

    def test_invalid_variant_rejected(self):
        with pytest.raises(ModelError):
            infection_intensity(single_variant(), 2, 10.0)
        with pytest.raises(ModelError):
            infection_intensity(single_variant(), 0, 10.0)

    def test_bad_construction_rejected(self):
        with pytest.raises(ModelError):
            InfectionParams([[-0.001]], [[50.0]], [[10.0]], [0.07])
        with pytest.raises(ModelError):
            InfectionParams([[0.001]], [[50.0]], [[0.0]], [0.07])
        with pytest.raises(ModelError):
            InfectionParams([[0.001]], [[50.0]], [[10.0]], [-0.07])


class TestOccupancy:
    def test_zero_amplitudes_stay_uninfected(self):
        params = make_params(single_variant(a=0.0))
        # zero amplitude is allowed; no transitions can happen
        inf = InfectionParams([[0.0]], [[50.0]], [[10.0]], [0.07])
        params = make_params(inf)
        rho = propagate_occupancy(params)
        assert np.all(rho[:, 0] == 1.0)
        assert np.all(rho[:, 1] == 0.0)

    def test_rows_sum_to_one_random_draws(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            k = int(rng.integers(1, 4))
            inf = InfectionParams(
                amplitudes=[[rng.uniform(0, 0.01)] for _ in range(k)],
                centers=[[rng.uniform(0, 200)] for _ in range(k)],
                widths=[[rng.uniform(3, 50)] for _ in range(k)],
                recovery=rng.uniform(0.01, 0.3, size=k),
            )
            rho = propagate_occupancy(make_params(inf))
            assert np.abs(rho.sum(axis=1) - 1.0).max() < 1e-10
            assert rho.min() >= 0.0 and rho.max() <= 1.0
            assert rho[0, 0] == 1.0

    def test_step_size_violation_names_day(self):
        inf = InfectionParams([[1.5]], [[50.0]], [[10.0]], [0.07])
        with pytest.raises(ModelError, match="day 4[0-9]"):
            propagate_occupancy(make_params(inf))

    def test_matches_monte_carlo_single_variant(self):
        params = make_params(single_variant(), horizon=200)
        rho = propagate_occupancy(params)
        freq = simulate_state_frequencies(params, 60_000, seed=21)
        assert np.abs(rho - freq).max() < 0.004

    def test_disjoint_waves_peak_location(self):
        inf = InfectionParams(
            amplitudes=[[0.003], [0.004]], centers=[[40.0], [140.0]],
            widths=[[10.0], [10.0]], recovery=[0.07, 0.07],
        )
        params = make_params(inf, horizon=200)
        rho = propagate_occupancy(params)
        freq = simulate_state_frequencies(params, 60_000, seed=22)
        # the analytic argmax must sit within 3 days of the Monte Carlo argmax
        assert abs(int(rho[:, 1].argmax()) - int(freq[:, 1].argmax())) <= 3
        assert abs(int(rho[:, 2].argmax()) - int(freq[:, 2].argmax())) <= 3


class TestSheddingDensity:
    def test_exponential_at_one(self):
        sh = SheddingParams(shape=(1.0,), intercept=(0.0,))
        assert shedding_logpdf(sh, 1, (), 1.0) == pytest.approx(-1.0, abs=1e-12)

    def test_mean_matches_reported_baseline(self):
        # shape 0.004 with log-rate 9.57 implies a mean of 28.1e-8; this pins
        # the shape-rate convention of the gamma parameterization
        sh = SheddingParams(shape=(0.004,), intercept=(9.57,))
        assert shedding_mean(sh, 1, ()) == pytest.approx(28.1e-8, rel=0.01)

    def test_mean_with_covariate_shift(self):
        sh = SheddingParams(shape=(0.004,), intercept=(9.57,), coefs=((-0.51,),))
        assert shedding_mean(sh, 1, (1.0,)) == pytest.approx(46.7e-8, rel=0.01)

    def test_density_normalizes(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            alpha = float(rng.uniform(0.3, 5.0))
            beta0 = float(rng.uniform(-1.0, 3.0))
            sh = SheddingParams(shape=(alpha,), intercept=(beta0,))
            total, _ = integrate.quad(
                lambda w: math.exp(shedding_logpdf(sh, 1, (), w)),
                0.0, np.inf,
            )
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_nonpositive_value_rejected(self):
        sh = SheddingParams(shape=(1.0,), intercept=(0.0,))
        with pytest.raises(ModelError):
            shedding_logpdf(sh, 1, (), 0.0)


class TestHazardRate:
    def test_baseline_value(self):
        hz = HazardParams(intercept=(-6.53,))
        assert hazard_rate(hz, 1, ()) == pytest.approx(0.0015, abs=5e-5)

    def test_zero_linear_predictor(self):
        hz = HazardParams(intercept=(0.0,), coefs=((0.0,),))
        assert hazard_rate(hz, 1, (3.0,)) == 1.0

    def test_covariate_shift(self):
        hz = HazardParams(intercept=(-6.53,), coefs=((1.146,),))
        assert hazard_rate(hz, 1, (1.0,)) == pytest.approx(0.0046, abs=5e-5)

    def test_log_linearity(self):
        rng = np.random.default_rng(9)
        hz = HazardParams(intercept=(-2.0,), coefs=((0.4, -0.8, 1.1),))
        for _ in range(10):
            x = rng.normal(size=3)
            shift = rng.normal(size=3)
            lhs = hazard_rate(hz, 1, x + shift)
            rhs = hazard_rate(hz, 1, x) * math.exp(float(shift @ (0.4, -0.8, 1.1)))
            assert lhs == pytest.approx(rhs, rel=1e-12)
