"""
The psi operator (Feynman-Kac evaluation along McKean-Vlasov characteristics)
and the Picard iteration W <- psi(W) that produces a DecouplingField.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from mfglab.coefficients import CoefficientSet
from mfglab.dynamics import FieldClosure, MeasureFlow, simulate_mckean, time_grid
from mfglab.errors import ConfigError, FieldNotConvergedError, SimulationError
from mfglab.field import DecouplingField, FlowTable, build_stencil, satellite_shifts
from mfglab.measures import EmpiricalMeasure, lifted_norm, pushforward_shift, sample_cloud
from mfglab.models import ResidualRow, ScenarioConfig
from mfglab.streams import derive_seed, ordered_map, step_normals, substream

logger = logging.getLogger(__name__)

# U(k, x) -> control at time-to-go node k for states x along one flow
NodeControl = Callable[[int, np.ndarray], np.ndarray]


def initial_measures(scenario: ScenarioConfig) -> list[EmpiricalMeasure]:
    """The configured initial measures, sampled once per flow from the root seed."""
    return [
        sample_cloud(spec, scenario.dim, substream(scenario.seed, "initial-measure", j))
        for j, spec in enumerate(scenario.initial_measures)
    ]


def _flow_clouds(flow: MeasureFlow) -> np.ndarray:
    """Forward particle paths reordered by time to go: clouds[k] is forward step K - k."""
    return np.ascontiguousarray(flow.particle_paths.transpose(1, 0, 2)[::-1])


def reference_clouds(cs: CoefficientSet, W: FieldClosure, scenario: ScenarioConfig, j: int, mu0: EmpiricalMeasure) -> np.ndarray:
    flow = simulate_mckean(
        cs, W, mu0, scenario.T, scenario.dt, scenario.N, scenario.sigma_x, derive_seed(scenario.seed, "flow", j)
    )
    return _flow_clouds(flow)


def _stencils(clouds: np.ndarray, size: int) -> np.ndarray:
    return np.stack([build_stencil(c, size) for c in clouds])


def bundle_values(
    cs: CoefficientSet,
    control: NodeControl,
    clouds: np.ndarray,
    start: np.ndarray,
    k: int,
    stop: int,
    terminal: Callable[[np.ndarray, EmpiricalMeasure], np.ndarray],
    dt: float,
    sigma_x: float,
    M: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Mean and standard error over M replicas of
    terminal(X, m) + sum_i G(X_i, m_i, U(k - i, X_i)) dt for a tagged bundle
    started at each point of `start` from node k and run down to node `stop`.
    """
    replicas = M if sigma_x > 0 else 1
    S, d = start.shape
    x = np.repeat(start, replicas, axis=0)
    acc = np.zeros_like(x)
    for i in range(k - stop):
        node = k - i
        law = EmpiricalMeasure.uniform(clouds[node])
        u = control(node, x)
        drift = cs.F(x, law, u)
        if not np.all(np.isfinite(drift)):
            raise SimulationError(i * dt, int(np.argmax(~np.all(np.isfinite(drift), axis=1))))
        acc += cs.G(x, law, u) * dt
        x = x - drift * dt
        if sigma_x > 0:
            x = x + math.sqrt(2.0 * sigma_x * dt) * step_normals(seed, "bundle", i, x.shape)
    samples = (terminal(x, EmpiricalMeasure.uniform(clouds[stop])) + acc).reshape(S, replicas, d)
    values = samples.mean(axis=1)
    if replicas == 1:
        return values, np.zeros(S)
    errors = samples.std(axis=1, ddof=1) / math.sqrt(replicas)
    return values, errors.max(axis=1)


def _tabulate_values(
    cs: CoefficientSet,
    control: NodeControl,
    clouds: np.ndarray,
    stencils: np.ndarray,
    scenario: ScenarioConfig,
    j: int,
    threads: int,
) -> tuple[np.ndarray, np.ndarray]:
    def node(k: int) -> tuple[np.ndarray, np.ndarray]:
        if k == 0:
            return cs.W0(stencils[0], EmpiricalMeasure.uniform(clouds[0])), np.zeros(stencils.shape[1])
        return bundle_values(
            cs, control, clouds, stencils[k], k, 0, cs.W0,
            scenario.dt, scenario.sigma_x, scenario.M, derive_seed(scenario.seed, "node", k, j),
        )

    results = ordered_map(node, range(clouds.shape[0]), threads)
    return np.stack([r[0] for r in results]), np.stack([r[1] for r in results])


def _flow_layout(scenario: ScenarioConfig) -> list[tuple[int, Optional[np.ndarray]]]:
    """(reference index, shift) per flow: the reference flows first, then the satellites of each."""
    n = len(scenario.initial_measures)
    layout: list[tuple[int, Optional[np.ndarray]]] = [(j, None) for j in range(n)]
    if scenario.measure_shift > 0:
        for j in range(n):
            layout += [(j, s) for s in satellite_shifts(scenario.dim, scenario.measure_shift)]
    return layout


def _flow_start(mus: list[EmpiricalMeasure], base: int, shift: Optional[np.ndarray]) -> EmpiricalMeasure:
    return mus[base] if shift is None else pushforward_shift(mus[base], shift)


def _seed_index(table: FlowTable, j: int) -> int:
    # satellites share the random numbers of their reference flow
    return j if table.is_reference else table.base


def _table(clouds, stencils, values, errors, base: int, shift: Optional[np.ndarray]) -> FlowTable:
    return FlowTable(clouds, stencils, values, errors, base=None if shift is None else base, shift=shift)


def initial_field(cs: CoefficientSet, scenario: ScenarioConfig, config_hash: str = "") -> DecouplingField:
    """W0(t, x, mu) := W0(x, mu) on flows driven by W0 itself."""
    frozen = lambda t, x, mu: cs.W0(x, mu)  # noqa: E731
    mus = initial_measures(scenario)
    tables = []
    for base, shift in _flow_layout(scenario):
        clouds = reference_clouds(cs, frozen, scenario, base, _flow_start(mus, base, shift))
        stencils = _stencils(clouds, scenario.stencil_size)
        values = np.stack([cs.W0(stencils[k], EmpiricalMeasure.uniform(clouds[k])) for k in range(len(clouds))])
        tables.append(_table(clouds, stencils, values, np.zeros(stencils.shape[:2]), base, shift))
    return DecouplingField(scenario.T, scenario.dt, tables, config_hash, terminal=cs.W0)


def psi_apply(
    cs: CoefficientSet,
    W_in: DecouplingField,
    scenario: ScenarioConfig,
    frozen: bool = False,
    threads: int = 1,
) -> DecouplingField:
    """
    One application of psi. Reference flows are regenerated under W_in
    (kept as they are when frozen) and every node is re-evaluated by
    integrating along the characteristics.
    """
    mus = None if frozen else initial_measures(scenario)
    tables = []
    for j, old in enumerate(W_in.flows):
        seed_index = _seed_index(old, j)
        if frozen:
            clouds = old.clouds
        else:
            clouds = reference_clouds(cs, W_in.pinned(j), scenario, seed_index, _flow_start(mus, seed_index, old.shift))
        stencils = _stencils(clouds, scenario.stencil_size)
        control = lambda k, x, j=j: W_in.eval_node(k, j, x)  # noqa: E731
        values, errors = _tabulate_values(cs, control, clouds, stencils, scenario, seed_index, threads)
        tables.append(FlowTable(clouds, stencils, values, errors, base=old.base, shift=old.shift))
    return DecouplingField(scenario.T, scenario.dt, tables, W_in.config_hash, terminal=cs.W0)


def picard_increment(old: DecouplingField, new: DecouplingField) -> float:
    """sup over nodes of the lifted L2 distance between the two fields on the new node clouds."""
    worst = 0.0
    for j, table in enumerate(new.flows):
        n = table.clouds.shape[1]
        weights = np.full(n, 1.0 / n)
        for k in range(table.clouds.shape[0]):
            x = table.clouds[k]
            worst = max(worst, lifted_norm(new.eval_node(k, j, x), old.eval_node(k, j, x), weights))
    return worst


def _iterate(
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    field: DecouplingField,
    tol: float,
    max_iter: int,
    frozen: bool,
    threads: int,
) -> DecouplingField:
    if tol <= 0:
        raise ConfigError(f"Picard tolerance must be positive, got {tol}")
    history: list[float] = []
    effective = tol
    for iteration in range(1, max_iter + 1):
        new = psi_apply(cs, field, scenario, frozen=frozen, threads=threads)
        increment = picard_increment(field, new)
        history.append(increment)
        floor = 3.0 * new.max_std_error
        if floor > effective:
            logger.warning("Picard tolerance raised from %.3e to %.3e by Monte Carlo error", tol, floor)
            effective = floor
        logger.info("Picard iteration %d: increment %.3e", iteration, increment)
        field = new
        if increment < effective:
            break
    field.iteration_count = len(history)
    field.final_increment = history[-1]
    field.increment_history = history
    field.effective_tol = effective
    field.converged = history[-1] < effective
    if not field.converged:
        logger.warning("Picard did not converge in %d iterations (last increment %.3e)", max_iter, history[-1])
    return field


def picard_solve(
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    threads: int = 1,
    config_hash: str = "",
) -> DecouplingField:
    tol = scenario.picard.tol if tol is None else tol
    max_iter = scenario.picard.max_iter if max_iter is None else max_iter
    start = initial_field(cs, scenario, config_hash)
    return _iterate(cs, scenario, start, tol, max_iter, frozen=False, threads=threads)


def picard_solve_frozen(
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    flow_clouds: list[np.ndarray],
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    threads: int = 1,
) -> DecouplingField:
    """Picard iteration with the measure flows prescribed (clouds indexed by time to go)."""
    tables = []
    for clouds in flow_clouds:
        stencils = _stencils(clouds, scenario.stencil_size)
        values = np.stack([cs.W0(stencils[k], EmpiricalMeasure.uniform(clouds[k])) for k in range(len(clouds))])
        tables.append(FlowTable(clouds, stencils, values, np.zeros(stencils.shape[:2])))
    start = DecouplingField(scenario.T, scenario.dt, tables, terminal=cs.W0)
    tol = scenario.picard.tol if tol is None else tol
    max_iter = scenario.picard.max_iter if max_iter is None else max_iter
    return _iterate(cs, scenario, start, tol, max_iter, frozen=True, threads=threads)


def tabulate(
    closure: FieldClosure,
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    flow_clouds: Optional[list[np.ndarray]] = None,
) -> DecouplingField:
    """Any field closure on the solver's table layout, with flows driven by the closure itself."""
    if flow_clouds is None:
        mus = initial_measures(scenario)
        layout = _flow_layout(scenario)
        flow_clouds = [
            reference_clouds(cs, closure, scenario, base, _flow_start(mus, base, shift)) for base, shift in layout
        ]
    else:
        layout = [(j, None) for j in range(len(flow_clouds))]
    times = time_grid(scenario.T, scenario.dt)
    tables = []
    for clouds, (base, shift) in zip(flow_clouds, layout):
        stencils = _stencils(clouds, scenario.stencil_size)
        values = np.stack(
            [closure(float(times[k]), stencils[k], EmpiricalMeasure.uniform(clouds[k])) for k in range(len(clouds))]
        )
        tables.append(_table(clouds, stencils, values, np.zeros(stencils.shape[:2]), base, shift))
    terminal = lambda x, mu: closure(0.0, x, mu)  # noqa: E731
    return DecouplingField(scenario.T, scenario.dt, tables, converged=True, terminal=terminal)


def sup_table_error(field: DecouplingField, closure: FieldClosure) -> float:
    """max |field - closure| over every table node and stencil point."""
    worst = 0.0
    for table in field.flows:
        for k in range(table.values.shape[0]):
            exact = closure(k * field.dt, table.stencils[k], EmpiricalMeasure.uniform(table.clouds[k]))
            worst = max(worst, float(np.max(np.abs(table.values[k] - exact))))
    return worst


def dynamic_programming_gap(
    field: DecouplingField,
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    k: int,
    l: int,
    flow_index: int = 0,
) -> tuple[float, float]:
    """
    Compare psi over [0, t_k] with psi over [t_l, t_k] closed by the field
    at node l. Returns (sup gap over the stencil, combined standard error).
    """
    if not 0 <= l <= k <= field.n_steps:
        raise ConfigError(f"need 0 <= l <= k <= {field.n_steps}, got k={k}, l={l}")
    table = field.flows[flow_index]
    control = lambda node, x: field.eval_node(node, flow_index, x)  # noqa: E731
    seed = derive_seed(scenario.seed, "dp-gap", k, l)
    args = (field.dt, scenario.sigma_x, scenario.M)
    direct, direct_se = bundle_values(cs, control, table.clouds, table.stencils[k], k, 0, cs.W0, *args, seed)
    closing = lambda x, mu: field.eval_node(l, flow_index, x)  # noqa: E731
    split, split_se = bundle_values(cs, control, table.clouds, table.stencils[k], k, l, closing, *args, seed)
    gap = float(np.max(np.abs(direct - split)))
    return gap, float(np.max(np.hypot(direct_se, split_se)))


@dataclass
class FBSDEPaths:
    flow: MeasureFlow
    w_values: np.ndarray  # (N, K+1, d)
    residuals: list[ResidualRow]


def build_fbsde_paths(
    field: DecouplingField,
    cs: CoefficientSet,
    scenario: ScenarioConfig,
    flow_index: int = 0,
) -> FBSDEPaths:
    """Forward particles under the solved field with W_s = field(T - s, X_s, m_s) and the backward drift residuals."""
    if not field.converged:
        raise FieldNotConvergedError(field.final_increment)
    mu0 = initial_measures(scenario)[flow_index]
    flow = simulate_mckean(
        cs, field.pinned(flow_index), mu0, scenario.T, scenario.dt, scenario.N, scenario.sigma_x,
        derive_seed(scenario.seed, "fbsde", flow_index),
    )
    K = flow.n_steps
    n, _, d = flow.particle_paths.shape
    w = np.empty((n, K + 1, d))
    for step in range(K):
        w[:, step, :] = field.eval_node(K - step, flow_index, flow.particle_paths[:, step, :])
    w[:, K, :] = cs.W0(flow.particle_paths[:, K, :], flow.cloud(K))

    rows = []
    for step in range(K):
        x = flow.particle_paths[:, step, :]
        g = cs.G(x, flow.cloud(step), w[:, step, :])
        r = w[:, step + 1, :] - w[:, step, :] + g * scenario.dt
        means = r.mean(axis=0)
        errors = r.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(d)
        c = int(np.argmax(np.abs(means)))
        rows.append(
            ResidualRow(interval=step, s=float(flow.times[step]), mean_residual=float(means[c]), std_error=float(errors[c]))
        )
    return FBSDEPaths(flow, w, rows)
