import math

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import make_scenario
from mfglab.coefficients import build_coefficients, lq_family, probe_l2_monotone, zero_family
from mfglab.dynamics import common_noise_wrap
from mfglab.errors import RiccatiBlowUpError, UnsupportedFamilyError
from mfglab.measures import EmpiricalMeasure, pushforward_shift
from mfglab.models import Component, SamplerSpec
from mfglab.oracle_lq import LQParams, monotone_flag, oracle_field, pde_residual, riccati_solve
from mfglab.solver import initial_measures, reference_clouds, tabulate

MONOTONE = dict(p=1.0, p_bar=0.25, q=1.0, q_bar=0.25)


def test_zero_coefficients_give_zero_path():
    path = riccati_solve(LQParams(p=0.0, p_bar=0.0, q=0.0, q_bar=0.0, T=1.0), 0.01)
    np.testing.assert_array_equal(path.a, 0.0)
    np.testing.assert_array_equal(path.b, 0.0)


def test_equilibrium_a_stays_at_one():
    path = riccati_solve(LQParams(p=1.0, q=1.0, T=2.0), 0.01)
    np.testing.assert_allclose(path.a, 1.0, atol=1e-14)


def test_tanh_solution():
    path = riccati_solve(LQParams(p=0.0, q=1.0, T=1.0), 1e-4)
    np.testing.assert_allclose(path.a, np.tanh(path.times), atol=1e-8)
    for t in (0.0, 0.37, 1.0):
        assert path.at(t)[0] == pytest.approx(math.tanh(t), abs=1e-8)


def test_blow_up_is_reported():
    with pytest.raises(RiccatiBlowUpError) as info:
        riccati_solve(LQParams(p=-2.0, q=1.0, T=5.0), 0.01)
    assert info.value.time == pytest.approx(math.atanh(0.5), abs=1e-3)


def test_zero_horizon():
    path = riccati_solve(LQParams(p=0.3, p_bar=0.1, T=0.0), 0.01)
    assert path.at(0.0) == (0.3, 0.1)


def test_params_reject_non_finite_values():
    with pytest.raises(ValidationError):
        LQParams(p=float("nan"))


def test_oracle_at_time_zero_is_the_terminal_map():
    params = LQParams(T=1.0, **MONOTONE)
    W = oracle_field(params, dt=0.01)
    cs = lq_family(**MONOTONE)
    mu = EmpiricalMeasure.uniform([-1.0, 0.5, 2.0])
    x = np.array([[0.0], [1.5]])
    np.testing.assert_allclose(W(0.0, x, mu), cs.W0(x, mu), atol=1e-12)


def test_monotone_flag_and_probe():
    params = LQParams(T=1.0, **MONOTONE)
    assert monotone_flag(params)
    assert not LQParams(p=-0.5).monotone
    path = riccati_solve(params, 0.01)
    assert path.monotone
    W = oracle_field(params, path)
    sampler = SamplerSpec(n_atoms=16)
    for t in (0.0, 0.5, 1.0):
        report = probe_l2_monotone(lambda x, mu: W(t, x, mu), sampler, n_pairs=12, seed=0)
        assert report.passed


def test_pde_residual_is_small():
    params = LQParams(T=1.0, **MONOTONE)
    path = riccati_solve(params, 0.01)
    xs = np.linspace(-2.0, 2.0, 5)
    means = np.array([-1.0, 0.0, 1.0])
    assert pde_residual(params, path, xs, means) <= 1e-6
    assert pde_residual(params, path, xs, means, sigma_x=0.3) <= 1e-6


def test_pde_residual_sees_the_diffusion_term():
    params = LQParams(T=1.0, **MONOTONE)
    path = riccati_solve(params, 0.01)
    oracle = oracle_field(params, path)
    curved = lambda t, x, mu: oracle(t, x, mu) + 0.1 * np.asarray(x) ** 2  # noqa: E731
    assert pde_residual(params, path, [0.0], [0.0], field=curved) <= 1e-6
    assert pde_residual(params, path, [0.0], [0.0], sigma_x=0.3, field=curved) == pytest.approx(0.06, abs=1e-5)


def test_params_from_coefficients():
    params = LQParams.from_coefficients(lq_family(**MONOTONE), T=0.5)
    assert params.q_bar == 0.25
    assert params.T == 0.5
    with pytest.raises(UnsupportedFamilyError):
        LQParams.from_coefficients(zero_family(), T=1.0)


def test_common_noise_wrap_matches_shifted_tables():
    # W(t, x + theta, (id + theta)# mu) for the oracle agrees with the oracle
    # tabulated on flows started from the shifted initial measure
    scenario = make_scenario("lq", MONOTONE, initial_measures=[SamplerSpec(components=[Component(mean=0.5)])])
    cs = build_coefficients(scenario.coefficients)
    W = oracle_field(LQParams(T=scenario.T, **MONOTONE), dt=scenario.dt)
    wrapped = common_noise_wrap(W)
    theta = np.array([0.7])

    mu0 = pushforward_shift(initial_measures(scenario)[0], theta)
    clouds = reference_clouds(cs, W, scenario, 0, mu0)
    table = tabulate(W, cs, scenario, flow_clouds=[clouds])
    for k in (0, 4, scenario.n_steps):
        cloud = table.flows[0].node_cloud(k)
        x = table.flows[0].stencils[k] - theta
        unshifted = pushforward_shift(cloud, -theta)
        t = k * scenario.dt
        np.testing.assert_allclose(wrapped(t, x, theta, unshifted), table.flows[0].values[k], atol=1e-8)
