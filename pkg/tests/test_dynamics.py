import math

import numpy as np
import pytest

from mfglab.coefficients import CoefficientSet, build_coefficients, lq_family
from mfglab.dynamics import (
    common_noise_wrap,
    second_moment_growth,
    simulate_conditional_common_noise,
    simulate_in_flow,
    simulate_mckean,
    simulate_theta,
    time_continuity_ratio,
    time_grid,
)
from mfglab.errors import ConfigError, DimensionError, SimulationError, UnknownFamilyError
from mfglab.measures import EmpiricalMeasure, sample_cloud
from mfglab.models import CoefficientSpec, Component, SamplerSpec
from mfglab.oracle_lq import LQParams, oracle_field


def _zero_field(t, x, mu):
    return np.zeros_like(x)


def _family(name, **params):
    return build_coefficients(CoefficientSpec(family=name, params=params))


def test_time_grid():
    np.testing.assert_allclose(time_grid(1.0, 0.25), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert len(time_grid(0.0, 0.1)) == 1
    with pytest.raises(ConfigError):
        time_grid(1.0, 0.3)
    with pytest.raises(ConfigError):
        time_grid(1.0, 0.0)


def test_zero_drift_without_noise_keeps_the_initial_law():
    mu0 = EmpiricalMeasure.uniform([-1.0, 0.5, 2.0])
    flow = simulate_mckean(_family("zero"), _zero_field, mu0, 1.0, 0.1, 3, 0.0, seed=1)
    for k in range(flow.n_steps + 1):
        np.testing.assert_array_equal(flow.cloud(k).points, mu0.points)


def test_linear_drift_mean_decays_exponentially():
    mu0 = EmpiricalMeasure.uniform([1.0, 2.0, 3.0])
    dt = 0.01
    flow = simulate_mckean(_family("linear_drift", k=1.0), _zero_field, mu0, 1.0, dt, 3, 0.0, seed=1)
    expected = 2.0 * math.exp(-1.0)
    assert flow.cloud(flow.n_steps).mean()[0] == pytest.approx(expected, abs=2.0 * dt * 2.0)


def test_brownian_variance():
    N, T, sigma = 10_000, 1.0, 0.5
    flow = simulate_mckean(_family("zero"), _zero_field, EmpiricalMeasure.dirac(0.0), T, 0.05, N, sigma, seed=2)
    variance = float(flow.cloud(flow.n_steps).covariance()[0, 0])
    assert variance == pytest.approx(2.0 * sigma * T, abs=5.0 * T / math.sqrt(N))


def test_simulation_preconditions():
    cs = _family("zero")
    with pytest.raises(ConfigError):
        simulate_mckean(cs, _zero_field, EmpiricalMeasure.dirac(0.0), 1.0, 0.1, 1, 0.0, seed=0)
    with pytest.raises(ConfigError):
        simulate_mckean(cs, _zero_field, EmpiricalMeasure.dirac(0.0), 1.0, 0.3, 10, 0.0, seed=0)


def test_non_finite_drift_names_the_particle():
    def F(x, mu, u):
        return np.where(x > 5.0, np.inf, 0.0)

    zero = lambda x, mu, u: np.zeros_like(x)
    cs = CoefficientSet(F, zero, lambda x, mu: np.zeros_like(x), 1.0)
    with pytest.raises(SimulationError) as info:
        simulate_mckean(cs, _zero_field, EmpiricalMeasure.uniform([0.0, 10.0]), 1.0, 0.1, 2, 0.0, seed=0)
    assert info.value.particle == 1
    assert info.value.s == 0.0


def test_simulation_is_reproducible():
    cs = lq_family(p=1.0, q=1.0)
    mu0 = EmpiricalMeasure.uniform(np.linspace(-1.0, 1.0, 50))
    W = lambda t, x, mu: x
    first = simulate_mckean(cs, W, mu0, 0.5, 0.05, 100, 0.3, seed=11)
    second = simulate_mckean(cs, W, mu0, 0.5, 0.05, 100, 0.3, seed=11)
    other = simulate_mckean(cs, W, mu0, 0.5, 0.05, 100, 0.3, seed=12)
    np.testing.assert_array_equal(first.particle_paths, second.particle_paths)
    assert not np.array_equal(first.particle_paths, other.particle_paths)


def test_common_noise_with_zero_beta_matches_plain_simulation():
    cs = lq_family()
    mu0 = EmpiricalMeasure.uniform(np.linspace(-1.0, 1.0, 20))
    W = lambda t, x, mu: 0.5 * x
    plain = simulate_mckean(cs, W, mu0, 0.5, 0.05, 40, 0.2, seed=5)
    common = simulate_conditional_common_noise(cs, W, mu0, 0.5, 0.05, 40, 0.2, 0.0, seed=5)
    np.testing.assert_array_equal(plain.particle_paths, common.particle_paths)


def test_common_noise_shifts_the_whole_cloud():
    cs = _family("zero")
    finals = []
    for seed in range(400):
        flow = simulate_conditional_common_noise(cs, _zero_field, EmpiricalMeasure.dirac(0.0), 1.0, 0.1, 2, 0.0, 0.5, seed)
        cloud = flow.cloud(flow.n_steps).points[:, 0]
        assert cloud[0] == cloud[1]
        np.testing.assert_allclose(flow.common_path[-1], cloud[:1])
        finals.append(cloud[0])
    assert np.var(finals) == pytest.approx(1.0, abs=0.25)


def test_common_noise_leaves_within_cloud_variance():
    flow = simulate_conditional_common_noise(
        _family("zero"), _zero_field, EmpiricalMeasure.dirac(0.0), 1.0, 0.1, 5_000, 0.5, 1.0, seed=3
    )
    assert float(flow.cloud(flow.n_steps).covariance()[0, 0]) == pytest.approx(1.0, abs=0.1)


def test_in_flow_uses_the_given_measures():
    cs = lq_family()
    measures = [EmpiricalMeasure.uniform([float(k)]) for k in range(6)]
    seen = []

    def W(t, x, mu):
        seen.append(float(mu.mean()[0]))
        return np.zeros_like(x)

    simulate_in_flow(cs, W, np.zeros((4, 1)), measures, 0.5, 0.1, 0.0, seed=0)
    assert seen == [0.0, 1.0, 2.0, 3.0, 4.0]
    with pytest.raises(ConfigError):
        simulate_in_flow(cs, W, np.zeros((4, 1)), measures[:3], 0.5, 0.1, 0.0, seed=0)


def test_theta_paths():
    constant = simulate_theta("zero", "zero", [0.3], 1.0, 0.1, seed=0)
    np.testing.assert_array_equal(constant.values[:, 0], np.full(11, 0.3))

    dt = 0.01
    decay = simulate_theta("linear", "zero", [1.0], 1.0, dt, seed=0)
    assert decay.values[-1, 0] == pytest.approx(math.exp(-1.0), abs=2.0 * dt)

    increments = np.concatenate(
        [np.diff(simulate_theta("zero", "identity", [0.0], 1.0, 0.1, seed=s).values[:, 0]) for s in range(200)]
    )
    assert np.var(increments) == pytest.approx(0.1, rel=0.2)

    with pytest.raises(UnknownFamilyError):
        simulate_theta("cubic", "zero", [0.0], 1.0, 0.1, seed=0)


def test_common_noise_wrap():
    mu = EmpiricalMeasure.uniform([-1.0, 0.0, 4.0])
    x = np.array([[0.5], [2.0]])
    identity = common_noise_wrap(lambda t, x, mu: x)
    np.testing.assert_array_equal(identity(0.0, x, [0.0], mu), x)
    np.testing.assert_allclose(identity(0.0, x, [1.5], mu), x + 1.5)

    a, b = 2.0, 0.5
    lq = common_noise_wrap(lambda t, x, mu: a * x + b * mu.mean())
    np.testing.assert_allclose(lq(0.0, x, [1.0], mu), a * (x + 1.0) + b * (1.0 + 1.0))

    with pytest.raises(DimensionError):
        identity(0.0, x, [1.0, 2.0], mu)


def test_flow_statistics_are_stable_under_refinement():
    params = LQParams(p=1.0, p_bar=0.25, q=1.0, q_bar=0.25, T=1.0)
    cs = lq_family(p=1.0, p_bar=0.25, q=1.0, q_bar=0.25)
    W = oracle_field(params, dt=0.01)
    mu0 = sample_cloud(SamplerSpec(components=[Component(mean=1.0)]), 1, np.random.default_rng(0), n_atoms=8_000)

    coarse = simulate_mckean(cs, W, mu0, 1.0, 0.02, 2_000, 0.1, seed=7)
    fine = simulate_mckean(cs, W, mu0, 1.0, 0.01, 4_000, 0.1, seed=7)
    growth = second_moment_growth(coarse, mu0), second_moment_growth(fine, mu0)
    assert growth[1] == pytest.approx(growth[0], rel=0.1)
    continuity = time_continuity_ratio(coarse), time_continuity_ratio(fine)
    assert continuity[1] == pytest.approx(continuity[0], rel=0.1)
    assert max(continuity) < 10.0
