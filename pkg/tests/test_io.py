import numpy as np
import pytest

from conftest import make_scenario
from mfglab.coefficients import build_coefficients
from mfglab.dynamics import simulate_conditional_common_noise
from mfglab.errors import MeasureError, MissingFieldError
from mfglab.io import (
    build_manifest,
    config_hash,
    measure_from_json,
    measure_to_json,
    read_field,
    read_flow,
    read_measure_csv,
    write_field,
    write_flow,
    write_measure_csv,
    write_table,
)
from mfglab.measures import EmpiricalMeasure
from mfglab.models import CoefficientSpec, SweepRow


def test_measure_csv_keeps_every_bit(tmp_path, rng):
    mu = EmpiricalMeasure(rng.normal(size=(7, 2)), np.full(7, 1.0 / 7.0))
    back = read_measure_csv(write_measure_csv(mu, tmp_path / "mu.csv"))
    np.testing.assert_array_equal(back.points, mu.points)
    np.testing.assert_array_equal(back.weights, mu.weights)


def test_measure_json_checks_dimension():
    data = measure_to_json(EmpiricalMeasure.uniform([[0.0, 1.0]]))
    assert measure_from_json(data).dim == 2
    data["dim"] = 3
    with pytest.raises(MeasureError):
        measure_from_json(data)


def test_field_round_trip(tmp_path, lq_field):
    write_field(lq_field, tmp_path / "field")
    back = read_field(tmp_path / "field")
    assert back.converged == lq_field.converged
    assert back.increment_history == lq_field.increment_history
    for a, b in zip(back.flows, lq_field.flows):
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.stencils, b.stencils)
        np.testing.assert_array_equal(a.clouds, b.clouds)
    x = np.array([[0.3], [-1.2]])
    np.testing.assert_array_equal(back.eval_node(5, 0, x), lq_field.eval_node(5, 0, x))
    assert [t.base for t in back.flows] == [t.base for t in lq_field.flows]
    for a, b in zip(back.flows[1:], lq_field.flows[1:]):
        np.testing.assert_array_equal(a.shift, b.shift)


def test_field_read_back_with_its_terminal_map(tmp_path, lq_field, lq_scenario):
    cs = build_coefficients(lq_scenario.coefficients)
    write_field(lq_field, tmp_path / "field")
    back = read_field(tmp_path / "field", terminal=cs.W0)
    x = np.array([[0.3], [-1.2]])
    off_flow = EmpiricalMeasure.uniform([2.5, 3.5])
    for t in (0.0, 0.03, 0.1):
        np.testing.assert_array_equal(back(t, x, off_flow), lq_field(t, x, off_flow))


def test_flow_round_trip(tmp_path):
    cs = build_coefficients(CoefficientSpec(family="zero"))
    zero = lambda t, x, mu: np.zeros_like(x)  # noqa: E731
    mu0 = EmpiricalMeasure.uniform([[-1.0], [0.0], [2.0]])
    flow = simulate_conditional_common_noise(cs, zero, mu0, 0.2, 0.05, 3, 0.1, 0.5, seed=7)
    write_flow(flow, tmp_path / "flow", "abc")
    back = read_flow(tmp_path / "flow")
    np.testing.assert_array_equal(back.times, flow.times)
    np.testing.assert_array_equal(back.particle_paths, flow.particle_paths)
    np.testing.assert_array_equal(back.common_path, flow.common_path)
    assert back.seed == 7


def test_read_field_checks_presence_and_hash(tmp_path, lq_field):
    with pytest.raises(MissingFieldError):
        read_field(tmp_path / "nothing")
    lq_field.config_hash = "abc"
    try:
        write_field(lq_field, tmp_path / "field")
    finally:
        lq_field.config_hash = ""
    assert read_field(tmp_path / "field", expected_hash="abc").config_hash == "abc"
    with pytest.raises(MissingFieldError):
        read_field(tmp_path / "field", expected_hash="def")


def test_config_hash_tracks_the_config():
    a = make_scenario("lq", {"p": 1.0})
    assert config_hash(a) == config_hash(make_scenario("lq", {"p": 1.0}))
    assert config_hash(a) != config_hash(make_scenario("lq", {"p": 1.0}, seed=4))


def test_manifest_has_no_wall_clock():
    manifest = build_manifest(make_scenario(), "solve")
    assert manifest.command == "solve"
    assert manifest.seed == 3
    assert set(manifest.model_dump()) == {"tool", "version", "command", "config_hash", "seed", "config"}


def test_tables_are_byte_stable(tmp_path):
    rows = [SweepRow(epsilon=0.5, sup_error=1.0 / 3.0, lipschitz_quotient=1.9, growth_ratio=0.1)]
    first = write_table(rows, tmp_path / "a.csv").read_bytes()
    second = write_table(rows, tmp_path / "b.csv").read_bytes()
    assert first == second
    assert b"0.33333333333333331" in first
