import numpy as np
import pytest

from mfglab.coefficients import BaseMap, cubic_base, linear_base, mean_field_linear_base, probe_l2_monotone
from mfglab.errors import ConfigError, ResolventError
from mfglab.measures import EmpiricalMeasure, lifted_norm, wasserstein2
from mfglab.models import Component, SamplerSpec
from mfglab.yosida import (
    RegularizedCoefficient,
    convergence_sweep,
    regularize,
    resolvent,
    resolvent_residual,
    shifted,
)

COMPACT = SamplerSpec(components=[Component(kind="uniform", scale=1.0)], n_atoms=32)


def test_resolvent_of_linear_map():
    y = resolvent(linear_base(1.0), 0.5, EmpiricalMeasure.uniform([3.0]))
    assert y.points[0, 0] == pytest.approx(2.0, abs=1e-9)


def test_resolvent_of_cubic_needs_newton():
    x = EmpiricalMeasure.uniform([2.0])
    y = resolvent(cubic_base(10.0), 1.0, x)
    assert y.points[0, 0] == pytest.approx(1.0, abs=1e-9)
    assert resolvent_residual(cubic_base(10.0), 1.0, x, y) <= 1e-10


def test_resolvent_keeps_symmetric_clouds_centered():
    y = resolvent(mean_field_linear_base(1.0), 0.5, EmpiricalMeasure.uniform([-2.0, -1.0, 1.0, 2.0]))
    assert y.mean()[0] == pytest.approx(0.0, abs=1e-12)


def test_resolvent_is_nonexpansive(rng):
    base = mean_field_linear_base(0.5)
    for _ in range(10):
        x = rng.normal(size=(16, 1))
        y = rng.normal(size=(16, 1))
        rx = resolvent(base, 0.5, EmpiricalMeasure.uniform(x))
        ry = resolvent(base, 0.5, EmpiricalMeasure.uniform(y))
        w = rx.weights
        assert lifted_norm(rx.points, ry.points, w) <= lifted_norm(x, y, w) + 1e-9


def test_resolvent_failure_reports_residual():
    never = BaseMap(lambda x, mu: -np.asarray(x, dtype=float), None, "negated")
    with pytest.raises(ResolventError) as info:
        resolvent(never, 1.0, EmpiricalMeasure.uniform([1.0, 2.0]), max_iter=20)
    assert info.value.residual > 0


def test_regularized_linear_value():
    reg = RegularizedCoefficient(linear_base(1.0), 1.0)
    value = reg(np.array([[4.0]]), EmpiricalMeasure.uniform([0.0, 1.0]))
    assert value[0, 0] == pytest.approx(2.0, abs=1e-9)


def test_regularized_map_is_monotone(gaussian_sampler):
    reg = RegularizedCoefficient(cubic_base(10.0), 0.5)
    assert probe_l2_monotone(reg, gaussian_sampler, n_pairs=12, seed=0).passed


def test_measure_map_contracts_w2(rng):
    reg = RegularizedCoefficient(cubic_base(10.0), 0.5)
    mu = EmpiricalMeasure.uniform(rng.normal(size=(20, 1)))
    nu = EmpiricalMeasure.uniform(rng.normal(1.0, 2.0, size=(20, 1)))
    assert wasserstein2(reg.measure_map(mu), reg.measure_map(nu)).value <= wasserstein2(mu, nu).value + 1e-9


def test_epsilon_must_respect_growth_constant():
    with pytest.raises(ConfigError):
        RegularizedCoefficient(cubic_base(1.0), 0.5, growth_constant=3.0)
    with pytest.raises(ConfigError):
        regularize(cubic_base(1.0), 0.4)
    assert regularize(cubic_base(1.0), 0.1).growth_bound() == pytest.approx(4.0 / 0.7)


def test_shifted_map():
    base = shifted(linear_base(-0.5), 1.0)
    assert base.name == "linear+shift"
    assert base(np.array([[2.0]]), EmpiricalMeasure.uniform([0.0]))[0, 0] == pytest.approx(1.0)


def test_sweep_on_cubic():
    epsilons = [1.0, 0.5, 0.25]
    rows = convergence_sweep(cubic_base(10.0), epsilons, COMPACT, n_pairs=40, seed=1)
    assert [r.epsilon for r in rows] == epsilons
    for row in rows:
        assert row.lipschitz_quotient <= 1.0 / row.epsilon + 1e-6
    errors = [r.sup_error for r in rows]
    assert errors[0] > errors[1] > errors[2]


def test_sweep_on_linear_map_matches_closed_form():
    rows = convergence_sweep(linear_base(1.0), [0.5, 0.25, 1e-3], COMPACT, n_pairs=10, seed=2)
    compact_max = max(r.sup_error * (1.0 + r.epsilon) / r.epsilon for r in rows)
    for row in rows:
        assert row.sup_error == pytest.approx(row.epsilon / (1.0 + row.epsilon) * compact_max, rel=1e-6)
    assert rows[-1].sup_error <= 1e-3


def test_sweep_growth_within_bound():
    base = cubic_base(1.0)
    rows = convergence_sweep(base, [0.1, 0.05], COMPACT, n_pairs=20, seed=3)
    for row in rows:
        assert row.growth_ratio <= (1.0 + 3.0) / (1.0 - 3.0 * row.epsilon)


def test_sweep_rejects_unsorted_epsilons():
    with pytest.raises(ConfigError):
        convergence_sweep(linear_base(1.0), [0.25, 0.5], COMPACT)


@pytest.mark.slow
def test_sweep_lipschitz_on_many_pairs():
    rows = convergence_sweep(cubic_base(10.0), [1.0, 0.5, 0.25], COMPACT, n_pairs=1000, seed=4)
    for row in rows:
        assert row.lipschitz_quotient <= 1.0 / row.epsilon + 1e-6
