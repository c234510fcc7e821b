"""
Empirical stability estimates for solved fields: sensitivity of the FBSDE to
the initial state and to the prescribed measure flow, compared with the
exponent each monotonicity regime predicts.
"""
import logging
import math
from typing import Optional

import numpy as np

from mfglab.coefficients import CoefficientSet, holder_norm_gamma, predicted_exponent
from mfglab.dynamics import simulate_in_flow, simulate_mckean
from mfglab.errors import ConfigError, FieldNotConvergedError
from mfglab.field import DecouplingField
from mfglab.measures import EmpiricalMeasure, lifted_norm
from mfglab.models import EstimateReport, EstimateRow, ScenarioConfig
from mfglab.solver import picard_solve_frozen
from mfglab.streams import derive_seed, substream

logger = logging.getLogger(__name__)


def _check_field(field: DecouplingField, cs: CoefficientSet, flow_index: int) -> float:
    if not field.converged:
        raise FieldNotConvergedError(field.final_increment)
    if flow_index not in field.references:
        raise ConfigError(f"flow_index {flow_index} is not one of the reference flows {field.references}")
    exponent = predicted_exponent(cs.regime.kind, cs.gamma)
    if exponent is None:
        raise ConfigError(f"regime {cs.regime.kind!r} predicts no stability exponent")
    return exponent


def fit_exponent(sizes: list[float], diffs: list[float]) -> float:
    """Slope of log diff against log size; inf when every difference vanishes."""
    pairs = [(s, d) for s, d in zip(sizes, diffs) if s > 0 and d > 0]
    if len(pairs) < 2:
        return math.inf
    logs = np.log(np.asarray(pairs))
    slope, _ = np.polyfit(logs[:, 0], logs[:, 1], 1)
    return float(slope)


def _spread(ratios: list[float]) -> float:
    positive = [r for r in ratios if r > 0]
    if not positive:
        return 0.0
    return max(positive) / min(positive) - 1.0


def bound_ratio_growth(sizes: list[float], diffs: list[float], exponent: float) -> float:
    """
    How far diff / size^exponent rises above its value at the largest
    perturbation as the perturbation shrinks; 0 when it never rises.
    """
    rows = sorted(((s, d) for s, d in zip(sizes, diffs) if s > 0), reverse=True)
    if len(rows) < 2:
        return 0.0
    ratios = [d / s**exponent for s, d in rows]
    if ratios[0] <= 0:
        return 0.0 if max(ratios) <= 0 else math.inf
    return max(0.0, max(ratios) / ratios[0] - 1.0)


def perturbation_direction(x0: np.ndarray, seed: int) -> np.ndarray:
    """Random direction of unit lifted L2 norm for the atoms of x0."""
    z = substream(seed, "perturbation").standard_normal(x0.shape)
    weights = np.full(x0.shape[0], 1.0 / x0.shape[0])
    return z / lifted_norm(z, np.zeros_like(z), weights)


def stability_harness(
    field: DecouplingField,
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    perturbation_sizes: Optional[list[float]] = None,
    flow_index: int = 0,
    slack: Optional[float] = None,
) -> EstimateReport:
    """
    Coupled simulations from X0 and X0 + delta e sharing their Brownian paths;
    measures sup_t ||W^x_t - W^y_t|| and sup_t ||X_t - Y_t|| against delta.
    """
    predicted = _check_field(field, cs, flow_index)
    sizes = perturbation_sizes or scenario.estimates.perturbation_sizes
    slack = scenario.estimates.slack if slack is None else slack
    x0 = field.flows[flow_index].clouds[-1]
    n = x0.shape[0]
    weights = np.full(n, 1.0 / n)
    direction = perturbation_direction(x0, scenario.seed)
    seed = derive_seed(scenario.seed, "stability")

    def run(start: np.ndarray):
        flow = simulate_mckean(cs, field, EmpiricalMeasure.uniform(start), scenario.T, scenario.dt, n, scenario.sigma_x, seed)
        w = [field(scenario.T - float(t), flow.particle_paths[:, k, :], flow.cloud(k)) for k, t in enumerate(flow.times)]
        return flow.particle_paths, w

    base_paths, base_w = run(x0)
    rows = []
    for delta in sizes:
        paths, w = run(x0 + delta * direction)
        diff_w = max(lifted_norm(a, b, weights) for a, b in zip(base_w, w))
        diff_x = max(lifted_norm(base_paths[:, k, :], paths[:, k, :], weights) for k in range(paths.shape[1]))
        rows.append(
            EstimateRow(
                perturbation_size=delta,
                diff_W=diff_w,
                diff_X=diff_x,
                ratio_W=diff_w / delta,
                ratio_X=diff_x / holder_norm_gamma(delta, cs.gamma),
            )
        )
        logger.info("state perturbation %.1e: dW=%.3e dX=%.3e", delta, diff_w, diff_x)

    return EstimateReport(
        harness="state",
        regime=cs.regime.kind,
        gamma=cs.gamma,
        predicted_exponent=predicted,
        fitted_exponent=fit_exponent([r.perturbation_size for r in rows], [r.diff_W for r in rows]),
        ratio_spread=_spread([r.ratio_W for r in rows]),
        ratio_growth=bound_ratio_growth([r.perturbation_size for r in rows], [r.diff_W for r in rows], predicted),
        slack=slack,
        rows=rows,
    )


def shifted_clouds(clouds: np.ndarray, delta: float) -> np.ndarray:
    """Every snapshot translated by delta along (1, ..., 1)/sqrt(d): W2 distance exactly delta."""
    d = clouds.shape[2]
    return clouds + delta / math.sqrt(d)


def measure_stability_harness(
    field: DecouplingField,
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    delta_mus: Optional[list[float]] = None,
    flow_index: int = 0,
    slack: Optional[float] = None,
) -> EstimateReport:
    """
    Frozen-measure FBSDE along two measure flows at W2 distance delta_mu,
    started from the same particles with the same noise. The bound shape is
    max(delta, delta^(gamma / (2 - gamma))), whose small-delta exponent is
    gamma / (2 - gamma).
    """
    _check_field(field, cs, flow_index)
    deltas = scenario.estimates.delta_mus if delta_mus is None else delta_mus
    slack = scenario.estimates.slack if slack is None else slack
    clouds = field.flows[flow_index].clouds
    x0 = clouds[-1]
    n = x0.shape[0]
    weights = np.full(n, 1.0 / n)
    seed = derive_seed(scenario.seed, "measure-stability")
    exponent = cs.gamma / (2.0 - cs.gamma)

    def run(flow_clouds: np.ndarray) -> list[np.ndarray]:
        frozen = picard_solve_frozen(cs, scenario, [flow_clouds])
        measures = [EmpiricalMeasure.uniform(c) for c in flow_clouds[::-1]]
        flow = simulate_in_flow(cs, frozen.pinned(0), x0, measures, scenario.T, scenario.dt, scenario.sigma_x, seed)
        K = flow.n_steps
        return [frozen.eval_node(K - k, 0, flow.particle_paths[:, k, :]) for k in range(K + 1)]

    base = run(clouds)
    rows = []
    for delta in deltas:
        w = base if delta == 0 else run(shifted_clouds(clouds, delta))
        diff = max(lifted_norm(a, b, weights) for a, b in zip(base, w))
        shape = max(delta, delta**exponent)
        rows.append(EstimateRow(perturbation_size=delta, diff_W=diff, ratio_W=diff / shape if shape > 0 else 0.0))
        logger.info("measure perturbation %.2e: dW=%.3e", delta, diff)

    return EstimateReport(
        harness="measure",
        regime=cs.regime.kind,
        gamma=cs.gamma,
        predicted_exponent=exponent,
        fitted_exponent=fit_exponent([r.perturbation_size for r in rows], [r.diff_W for r in rows]),
        ratio_spread=_spread([r.ratio_W for r in rows if r.perturbation_size > 0]),
        ratio_growth=bound_ratio_growth([r.perturbation_size for r in rows], [r.diff_W for r in rows], exponent),
        slack=slack,
        rows=rows,
    )
