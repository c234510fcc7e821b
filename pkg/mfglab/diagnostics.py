"""
Monotonicity functionals evaluated on computed fields.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np

from mfglab.coefficients import STATE_KINDS, state_pair
from mfglab.dynamics import FieldClosure
from mfglab.errors import DimensionError, MeasureError
from mfglab.field import DecouplingField
from mfglab.measures import EmpiricalMeasure, entropy_kde, marginal, moment, optimal_coupling
from mfglab.models import LipschitzRow, SamplerSpec, ZReport, ZRow
from mfglab.streams import derive_seed, ordered_map, substream

logger = logging.getLogger(__name__)


def z_functional(W1: FieldClosure, W2: FieldClosure, t: float, x_cloud: EmpiricalMeasure, y_cloud: EmpiricalMeasure) -> float:
    """sum_i w_i (W1(t, x_i, L(X)) - W2(t, y_i, L(Y))) . (x_i - y_i) for index-paired atoms."""
    if x_cloud.size != y_cloud.size:
        raise MeasureError(f"paired clouds need equal sizes, got {x_cloud.size} and {y_cloud.size}")
    if x_cloud.dim != y_cloud.dim:
        raise DimensionError(f"dimension mismatch: {x_cloud.dim} vs {y_cloud.dim}")
    if not np.allclose(x_cloud.weights, y_cloud.weights, rtol=0.0, atol=1e-12):
        raise MeasureError("paired clouds need identical weights")
    diff = W1(t, x_cloud.points, x_cloud) - W2(t, y_cloud.points, y_cloud)
    return float(x_cloud.weights @ np.sum(diff * (x_cloud.points - y_cloud.points), axis=1))


def _optimally_paired(x: EmpiricalMeasure, y: EmpiricalMeasure) -> EmpiricalMeasure:
    """Reorder the atoms of y along the optimal plan (a permutation for equal uniform clouds)."""
    plan = optimal_coupling(x, y).plan
    return EmpiricalMeasure(y.points[np.argmax(plan, axis=1)], x.weights)


def propagation_check(
    field: FieldClosure,
    times,
    sampler: SamplerSpec,
    n_pairs: int,
    seed: int,
    dim: int = 1,
    tolerance: Optional[float] = None,
    coupling: Literal["index", "optimal"] = "index",
    threads: int = 1,
    other: Optional[FieldClosure] = None,
) -> ZReport:
    """
    Minimum over sampled pairs and times of Z(t, X, Y), computed from the
    field against `other` (the field itself by default), with the quotient
    Z / ||X - Y||^2 reported alongside.

    The default tolerance bounds the Monte Carlo error of Z: three times the
    summed node standard errors of both fields, times the largest E|X - Y|
    over the sampled pairs, floored at 1e-8.
    """
    if coupling not in ("index", "optimal"):
        raise MeasureError(f"unknown coupling {coupling!r}")
    other = field if other is None else other
    seeds = [derive_seed(seed, "z-pair", i) for i in range(n_pairs)]
    pairs = []
    for i, pair_seed in enumerate(seeds):
        x, y = state_pair(sampler, dim, pair_seed, STATE_KINDS[i % len(STATE_KINDS)])
        if coupling == "optimal":
            y = _optimally_paired(x, y)
        pairs.append((x, y))
    if tolerance is None:
        std_error = getattr(field, "max_std_error", 0.0) + getattr(other, "max_std_error", 0.0)
        spread = max(float(x.weights @ np.linalg.norm(x.points - y.points, axis=1)) for x, y in pairs)
        tolerance = max(3.0 * std_error * spread, 1e-8)

    rows = []
    for t in times:
        t = float(t)

        def evaluate(pair: tuple[EmpiricalMeasure, EmpiricalMeasure]) -> tuple[float, float]:
            x, y = pair
            gap = x.points - y.points
            size = float(x.weights @ np.sum(gap**2, axis=1))
            z = z_functional(field, other, t, x, y)
            return z, (z / size if size >= 1e-24 else math.inf)

        values = ordered_map(evaluate, pairs, threads)
        z_values = np.array([v[0] for v in values])
        worst = int(np.argmin(z_values))
        rows.append(
            ZRow(
                t=t,
                min_value=float(z_values[worst]),
                min_quotient=float(min(v[1] for v in values)),
                argmin_pair_seed=seeds[worst],
            )
        )
        logger.debug("Z at t=%.4g: min %.4e", t, z_values[worst])

    overall = min(rows, key=lambda r: r.min_value)
    report = ZReport(
        min_value=overall.min_value,
        min_quotient=min(r.min_quotient for r in rows),
        argmin_time=overall.t,
        argmin_pair_seed=overall.argmin_pair_seed,
        n_samples=n_pairs * len(rows),
        tolerance_used=tolerance,
        coupling=coupling,
        rows=rows,
    )
    logger.info("propagation check: min Z %.4e at t=%.4g (%s)", report.min_value, report.argmin_time,
                "passed" if report.passed else "failed")
    return report


@dataclass
class PhiParams:
    alpha: float = 0.0
    lam: float = 0.0
    psi: Callable[[float], float] = lambda t: 0.0
    f: Optional[Callable[[np.ndarray], np.ndarray]] = None  # (n, 2d) atoms -> (n,)


def entropy_penalized_value(
    W: FieldClosure,
    V: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray],
    t: float,
    m: EmpiricalMeasure,
    phi: PhiParams,
    kappa: float,
    bandwidth: Optional[float] = None,
) -> float:
    """
    int (W(t, x, pi_1 m) - V(y, pi_2 m)) . (x - y) dm - phi(t, m) + kappa E(m), with
    phi(t, m) = psi(t) + int f dm - alpha e^{lam t} (E3(pi_1 m) + E3(pi_2 m)).
    """
    if kappa < 0:
        raise MeasureError(f"kappa must be nonnegative, got {kappa}")
    first, second = marginal(m, "first"), marginal(m, "second")
    x, y = first.points, second.points
    pairing = np.sum((W(t, x, first) - V(y, second)) * (x - y), axis=1)
    value = float(m.weights @ pairing)

    phi_value = phi.psi(t) - phi.alpha * math.exp(phi.lam * t) * (moment(first, 3) + moment(second, 3))
    if phi.f is not None:
        phi_value += float(m.weights @ np.asarray(phi.f(m.points), dtype=float))
    value -= phi_value
    if kappa > 0:
        value += kappa * entropy_kde(m, bandwidth)
    return value


def field_lipschitz_series(field: DecouplingField, flow_index: int = 0, n_pairs: int = 100, seed: int = 0) -> list[LipschitzRow]:
    """Spatial Lipschitz quotient of the field at each time node, on pairs drawn around the node cloud."""
    table = field.flows[flow_index]
    rows = []
    for k in range(table.clouds.shape[0]):
        cloud = table.clouds[k]
        rng = substream(seed, "lipschitz", k)
        idx = rng.integers(0, cloud.shape[0], size=n_pairs)
        x = cloud[idx]
        scale = max(float(cloud.std()), 1e-3)
        y = x + scale * rng.standard_normal(x.shape)
        gaps = np.linalg.norm(x - y, axis=1)
        keep = gaps > 1e-12
        jumps = np.linalg.norm(field.eval_node(k, flow_index, x) - field.eval_node(k, flow_index, y), axis=1)
        quotient = float(np.max(jumps[keep] / gaps[keep])) if keep.any() else 0.0
        rows.append(LipschitzRow(t=k * field.dt, quotient=quotient))
    return rows
