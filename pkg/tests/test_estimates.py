import dataclasses
import math

import pytest

from conftest import make_scenario
from mfglab.coefficients import build_coefficients, lq_family
from mfglab.errors import ConfigError, FieldNotConvergedError
from mfglab.estimates import (
    bound_ratio_growth,
    fit_exponent,
    measure_stability_harness,
    shifted_clouds,
    stability_harness,
)
from mfglab.measures import EmpiricalMeasure, wasserstein2
from mfglab.models import CoefficientSpec, EstimateReport, EstimateRow, PicardSpec
from mfglab.solver import picard_solve


def test_fit_exponent():
    sizes = [1e-1, 1e-2, 1e-3]
    assert fit_exponent(sizes, [2.0 * s for s in sizes]) == pytest.approx(1.0)
    assert fit_exponent(sizes, [s**0.5 for s in sizes]) == pytest.approx(0.5)
    assert fit_exponent(sizes, [0.0, 0.0, 0.0]) == math.inf


def test_bound_ratio_growth():
    sizes = [1e-1, 1e-2, 1e-3]
    assert bound_ratio_growth(sizes, [2.0 * s for s in sizes], 1.0) == pytest.approx(0.0)
    # a faster decay than predicted never counts as growth
    assert bound_ratio_growth(sizes, [s for s in sizes], 1.0 / 3.0) == 0.0
    assert bound_ratio_growth(sizes, [1e-1, 1e-2, 2e-3], 1.0) == pytest.approx(1.0)
    assert bound_ratio_growth(sizes, [0.0, 0.0, 0.0], 1.0) == 0.0


def test_report_fails_when_the_ratio_grows():
    sizes, diffs = [1e-1, 1e-2, 1e-3], [1e-1, 1e-2, 2e-3]
    rows = [EstimateRow(perturbation_size=s, diff_W=d, ratio_W=d / s) for s, d in zip(sizes, diffs)]
    report = EstimateReport(
        harness="state",
        regime="l2",
        gamma=1.0,
        predicted_exponent=1.0,
        fitted_exponent=fit_exponent(sizes, diffs),
        ratio_spread=1.0,
        ratio_growth=bound_ratio_growth(sizes, diffs, 1.0),
        slack=0.2,
        rows=rows,
    )
    assert report.fitted_exponent >= 0.8
    assert not report.passed


def test_shifted_clouds_move_by_delta(lq_field):
    clouds = lq_field.flows[0].clouds
    moved = shifted_clouds(clouds, 0.3)
    k = 3
    distance = wasserstein2(EmpiricalMeasure.uniform(clouds[k]), EmpiricalMeasure.uniform(moved[k])).value
    assert distance == pytest.approx(0.3)


def test_state_harness_on_lq(lq_field, lq_scenario):
    cs = build_coefficients(lq_scenario.coefficients)
    report = stability_harness(lq_field, cs, lq_scenario)
    assert report.harness == "state"
    assert report.predicted_exponent == 1.0
    assert 0.8 <= report.fitted_exponent <= 1.2
    assert report.ratio_spread <= 0.2
    assert report.ratio_growth <= report.slack
    assert report.passed
    assert all(row.diff_X is not None for row in report.rows)


def test_measure_harness_on_lq(lq_field, lq_scenario):
    cs = build_coefficients(lq_scenario.coefficients)
    report = measure_stability_harness(lq_field, cs, lq_scenario, delta_mus=[0.2, 0.1, 0.05, 0.0])
    diffs = [row.diff_W for row in report.rows]
    assert diffs[-1] == 0.0
    assert diffs[1] / diffs[0] == pytest.approx(0.5, abs=0.05)
    assert diffs[2] / diffs[1] == pytest.approx(0.5, abs=0.05)
    assert report.predicted_exponent == pytest.approx(1.0)
    assert report.passed


def test_harness_rejects_unconverged_fields(lq_field, lq_scenario):
    cs = build_coefficients(lq_scenario.coefficients)
    stale = dataclasses.replace(lq_field, converged=False)
    with pytest.raises(FieldNotConvergedError):
        stability_harness(stale, cs, lq_scenario)
    with pytest.raises(FieldNotConvergedError):
        measure_stability_harness(stale, cs, lq_scenario)


def test_harness_needs_a_predicting_regime(lq_field, lq_scenario):
    with pytest.raises(ConfigError):
        stability_harness(lq_field, lq_family(q=0.0), lq_scenario)


def test_holder_terminal_map_meets_its_prediction():
    scenario = make_scenario(
        coefficients=CoefficientSpec(family="holder", params={"q": 1.0}, gamma=0.5),
        picard=PicardSpec(tol=1e-7, max_iter=80),
    )
    cs = build_coefficients(scenario.coefficients)
    field = picard_solve(cs, scenario)
    assert field.converged
    report = stability_harness(field, cs, scenario)
    assert report.predicted_exponent == pytest.approx(1.0 / 3.0)
    assert report.passed
