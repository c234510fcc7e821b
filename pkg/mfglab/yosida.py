"""
Lipschitz regularization of L2-monotone maps F(x, mu).

The resolvent inverts X -> X + eps F(X, L(X)) on lifted clouds; the law of
the result is h_eps(mu), and the regularized map is F(g_eps(x, mu), h_eps(mu))
where g_eps inverts x -> x + eps F(x, h_eps(mu)) with the law frozen.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from mfglab.coefficients import BaseMap, StateMap, state_pair, STATE_KINDS
from mfglab.errors import ConfigError, ResolventError
from mfglab.measures import EmpiricalMeasure, lifted_norm, moment, sample_cloud
from mfglab.models import SamplerSpec, SweepRow
from mfglab.streams import derive_seed, substream

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
MAX_HALVINGS = 30
NEWTON_ITER = 100


def _scale(x: np.ndarray) -> float:
    return max(1.0, float(np.max(np.abs(x))))


def _atom_residuals(base: StateMap, epsilon: float, y: np.ndarray, law: EmpiricalMeasure, x: np.ndarray) -> np.ndarray:
    return y + epsilon * base(y, law) - x


def _newton_frozen(
    base: StateMap,
    epsilon: float,
    x: np.ndarray,
    law: EmpiricalMeasure,
    y0: np.ndarray,
    tol: float,
) -> tuple[np.ndarray, float]:
    """Solve y + eps F(y, law) = x atom by atom with the law held fixed."""
    n, d = x.shape
    y = y0.copy()
    scale = _scale(x)
    res = _atom_residuals(base, epsilon, y, law, x)
    norms = np.linalg.norm(res, axis=1)
    for _ in range(NEWTON_ITER):
        if norms.max() <= tol * scale:
            break
        jac = np.empty((n, d, d))
        for j in range(d):
            h = FD_STEP * np.maximum(1.0, np.abs(y[:, j]))
            bump = np.zeros_like(y)
            bump[:, j] = h
            up = _atom_residuals(base, epsilon, y + bump, law, x)
            down = _atom_residuals(base, epsilon, y - bump, law, x)
            jac[:, :, j] = (up - down) / (2.0 * h[:, None])
        try:
            step = np.linalg.solve(jac, -res[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            raise ResolventError("singular Jacobian in the atom solve", float(norms.max()) / scale, 0) from None

        # per-atom backtracking on the residual norm
        t = np.ones(n)
        trial = y + step
        trial_norms = np.linalg.norm(_atom_residuals(base, epsilon, trial, law, x), axis=1)
        for _ in range(MAX_HALVINGS):
            bad = trial_norms > (1.0 - 1e-4 * t) * norms
            if not bad.any():
                break
            t[bad] *= 0.5
            trial = y + t[:, None] * step
            trial_norms = np.linalg.norm(_atom_residuals(base, epsilon, trial, law, x), axis=1)
        y = trial
        res = _atom_residuals(base, epsilon, y, law, x)
        norms = np.linalg.norm(res, axis=1)
    return y, float(norms.max()) / scale


def resolvent_residual(base: StateMap, epsilon: float, x_cloud: EmpiricalMeasure, y_cloud: EmpiricalMeasure) -> float:
    """sup over atoms of |y + eps F(y, L(Y)) - x|, relative to max(1, |X|_inf)."""
    res = _atom_residuals(base, epsilon, y_cloud.points, y_cloud, x_cloud.points)
    return float(np.max(np.linalg.norm(res, axis=1))) / _scale(x_cloud.points)


def resolvent(
    base: StateMap,
    epsilon: float,
    x_cloud: EmpiricalMeasure,
    solver_tol: float = 1e-10,
    max_iter: int = 10_000,
) -> EmpiricalMeasure:
    """
    Cloud Y with Y + eps F(Y, L(Y)) = X atomwise.

    Damped fixed-point sweeps Y <- X - eps F(Y, L(Y)) are used while they
    contract. Otherwise the law is frozen, atoms are solved by Newton, and
    the law is updated until it stops moving.
    """
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    x = x_cloud.points
    w = x_cloud.weights
    scale = _scale(x)

    y = x.copy()
    residual = resolvent_residual(base, epsilon, x_cloud, EmpiricalMeasure(y, w))
    sweeps = 0
    while residual > solver_tol and sweeps < max_iter:
        candidate = x - epsilon * base(y, EmpiricalMeasure(y, w))
        candidate_residual = resolvent_residual(base, epsilon, x_cloud, EmpiricalMeasure(candidate, w))
        sweeps += 1
        if not np.all(np.isfinite(candidate)) or candidate_residual >= residual:
            break
        y, residual = candidate, candidate_residual
    if residual <= solver_tol:
        return EmpiricalMeasure(y, w)

    logger.debug("fixed-point sweeps stalled at residual %.3e, switching to frozen-law Newton", residual)
    y = x.copy()
    for outer in range(max_iter):
        law = EmpiricalMeasure(y, w)
        y_new, _ = _newton_frozen(base, epsilon, x, law, y, solver_tol)
        increment = lifted_norm(y_new, y, w) / scale
        y = y_new
        if not np.all(np.isfinite(y)):
            break
        if increment < solver_tol:
            out = EmpiricalMeasure(y, w)
            residual = resolvent_residual(base, epsilon, x_cloud, out)
            if residual <= solver_tol:
                return out
            break
    else:
        outer = max_iter

    if np.all(np.isfinite(y)):
        residual = resolvent_residual(base, epsilon, x_cloud, EmpiricalMeasure(y, w))
    else:
        residual = math.inf
    raise ResolventError("resolvent did not converge", residual, sweeps + outer)


@dataclass
class RegularizedCoefficient:
    base: StateMap
    epsilon: float
    solver_tol: float = 1e-10
    max_iter: int = 10_000
    growth_constant: Optional[float] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.growth_constant is not None and self.epsilon * self.growth_constant >= 1.0:
            raise ConfigError(
                f"epsilon {self.epsilon} violates epsilon < 1/C_F = {1.0 / self.growth_constant:.6g}"
            )

    def measure_map(self, mu: EmpiricalMeasure) -> EmpiricalMeasure:
        return resolvent(self.base, self.epsilon, mu, self.solver_tol, self.max_iter)

    def g(self, x: np.ndarray, law: EmpiricalMeasure) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y, residual = _newton_frozen(self.base, self.epsilon, x, law, x.copy(), self.solver_tol)
        if residual > self.solver_tol:
            raise ResolventError("pointwise inverse did not converge", residual, NEWTON_ITER)
        return y

    def __call__(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        law = self.measure_map(mu)
        return self.base(self.g(x, law), law)

    def lifted(self, x_cloud: EmpiricalMeasure) -> np.ndarray:
        """F_eps evaluated on the atoms of x_cloud, with the cloud as its own law."""
        y = self.measure_map(x_cloud)
        return self.base(y.points, y)

    def growth_bound(self) -> Optional[float]:
        if self.growth_constant is None:
            return None
        return (1.0 + self.growth_constant) / (1.0 - self.growth_constant * self.epsilon)


def regularize(
    base: StateMap,
    epsilon: float,
    solver_tol: float = 1e-10,
    max_iter: int = 10_000,
    growth_constant: Optional[float] = None,
) -> RegularizedCoefficient:
    if growth_constant is None and isinstance(base, BaseMap):
        growth_constant = base.growth_constant
    return RegularizedCoefficient(base, epsilon, solver_tol, max_iter, growth_constant)


def measure_map(reg: RegularizedCoefficient, mu: EmpiricalMeasure) -> EmpiricalMeasure:
    return reg.measure_map(mu)


def shifted(base: StateMap, C: float) -> BaseMap:
    """(x, mu) -> F(x, mu) + C x, for maps that are only monotone up to C."""
    inner_growth = base.growth_constant if isinstance(base, BaseMap) else None
    name = base.name if isinstance(base, BaseMap) else "custom"
    growth = None if inner_growth is None else inner_growth + abs(C)
    return BaseMap(lambda x, mu: base(x, mu) + C * np.asarray(x, dtype=float), growth, f"{name}+shift")


def lifted_growth_ratio(values: np.ndarray, x_cloud: EmpiricalMeasure) -> float:
    spread = math.sqrt(moment(x_cloud, 2))
    bound = 1.0 + np.linalg.norm(x_cloud.points, axis=1) + spread
    return float(np.max(np.linalg.norm(values, axis=1) / bound))


def convergence_sweep(
    base: StateMap,
    epsilons: list[float],
    compact_spec: SamplerSpec,
    dim: int = 1,
    n_pairs: int = 200,
    seed: int = 0,
    solver_tol: float = 1e-10,
    max_iter: int = 10_000,
) -> list[SweepRow]:
    """One row per epsilon: sup error on the compact, lifted Lipschitz quotient, growth ratio."""
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ConfigError("epsilons must be strictly decreasing")
    compact = sample_cloud(compact_spec, dim, substream(seed, "compact"))
    exact = base(compact.points, compact)
    pairs = [
        state_pair(compact_spec, dim, derive_seed(seed, "sweep-pair", i), STATE_KINDS[i % len(STATE_KINDS)])
        for i in range(n_pairs)
    ]

    rows = []
    for eps in epsilons:
        reg = RegularizedCoefficient(base, eps, solver_tol, max_iter)
        sup_error = float(np.max(np.linalg.norm(reg(compact.points, compact) - exact, axis=1)))
        quotient, growth = 0.0, lifted_growth_ratio(reg.lifted(compact), compact)
        for x, y in pairs:
            fx, fy = reg.lifted(x), reg.lifted(y)
            quotient = max(quotient, lifted_norm(fx, fy, x.weights) / lifted_norm(x.points, y.points, x.weights))
            growth = max(growth, lifted_growth_ratio(fx, x), lifted_growth_ratio(fy, y))
        row = SweepRow(epsilon=eps, sup_error=sup_error, lipschitz_quotient=quotient, growth_ratio=growth)
        logger.info("eps=%g sup_error=%.3e lipschitz=%.4f growth=%.4f", eps, sup_error, quotient, growth)
        rows.append(row)
    return rows
