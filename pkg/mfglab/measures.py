"""
Empirical probability measures on R^d.
Particle clouds with moments, Wasserstein-2 distances, pushforwards and
kernel estimators of entropy and Fisher information.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import ot
from scipy import linalg
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from mfglab.errors import DimensionError, MeasureError
from mfglab.models import SamplerSpec

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12
COUPLING_TOL = 1e-10
ASSIGNMENT_LIMIT = 64
EXACT_LP_LIMIT = 2_000
SINKHORN_LIMIT = 5_000
KDE_CHUNK = 512
POINT_MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] == 0 or points.shape[1] == 0:
            raise MeasureError("a measure needs at least one point of positive dimension")
        if not np.all(np.isfinite(points)):
            raise MeasureError("measure points must be finite")
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != points.shape[0]:
            raise MeasureError(f"{weights.shape[0]} weights for {points.shape[0]} points")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise MeasureError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise MeasureError(f"weights sum to {weights.sum():.15g}, not 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        n = points.shape[0]
        if n == 0:
            raise MeasureError("a measure needs at least one point")
        return cls(points, np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, x) -> "EmpiricalMeasure":
        return cls.uniform(np.atleast_1d(np.asarray(x, dtype=float))[None, :])

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        centered = self.points - self.mean()
        return (centered * self.weights[:, None]).T @ centered


@dataclass(frozen=True)
class W2Result:
    value: float
    exact: bool
    method: str

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True, eq=False)
class Coupling:
    left: EmpiricalMeasure
    right: EmpiricalMeasure
    plan: np.ndarray

    def __post_init__(self):
        plan = np.asarray(self.plan, dtype=float)
        if plan.shape != (self.left.size, self.right.size):
            raise MeasureError("plan shape does not match the marginals")
        if np.any(plan < -COUPLING_TOL):
            raise MeasureError("transport plan has negative mass")
        if np.max(np.abs(plan.sum(axis=1) - self.left.weights)) > COUPLING_TOL:
            raise MeasureError("plan row sums differ from the left weights")
        if np.max(np.abs(plan.sum(axis=0) - self.right.weights)) > COUPLING_TOL:
            raise MeasureError("plan column sums differ from the right weights")
        object.__setattr__(self, "plan", plan)

    def cost(self) -> float:
        return float(np.sum(self.plan * ot.dist(self.left.points, self.right.points)))


def _check_same_dim(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.dim != nu.dim:
        raise DimensionError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _equal_uniform(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> bool:
    return mu.size == nu.size and mu.is_uniform and nu.is_uniform


def moment(mu: EmpiricalMeasure, q: float) -> float:
    if q < 0:
        raise MeasureError(f"moment order must be nonnegative, got {q}")
    norms = np.linalg.norm(mu.points, axis=1)
    return float(mu.weights @ norms**q)


def lifted_norm(x: np.ndarray, y: np.ndarray, weights: np.ndarray) -> float:
    """L2 norm of X - Y for atom-paired clouds."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if diff.ndim == 1:
        diff = diff[:, None]
    return float(np.sqrt(weights @ np.sum(diff**2, axis=1)))


def wasserstein2(mu: EmpiricalMeasure, nu: EmpiricalMeasure, seed: int = 0) -> W2Result:
    _check_same_dim(mu, nu)
    if mu.dim == 1:
        if _equal_uniform(mu, nu):
            x = np.sort(mu.points[:, 0])
            y = np.sort(nu.points[:, 0])
            return W2Result(float(np.sqrt(np.mean((x - y) ** 2))), True, "sorted")
        value = ot.lp.emd2_1d(mu.points[:, 0], nu.points[:, 0], mu.weights, nu.weights, metric="sqeuclidean")
        return W2Result(math.sqrt(max(float(value), 0.0)), True, "quantile")

    if _equal_uniform(mu, nu) and mu.size <= ASSIGNMENT_LIMIT:
        cost = ot.dist(mu.points, nu.points)
        rows, cols = linear_sum_assignment(cost)
        return W2Result(math.sqrt(cost[rows, cols].sum() / mu.size), True, "assignment")

    if max(mu.size, nu.size) <= EXACT_LP_LIMIT:
        cost = ot.dist(mu.points, nu.points)
        value = ot.emd2(mu.weights, nu.weights, cost)
        return W2Result(math.sqrt(max(float(value), 0.0)), True, "network_simplex")

    if max(mu.size, nu.size) <= SINKHORN_LIMIT:
        cost = ot.dist(mu.points, nu.points)
        reg = 1e-3 * max(float(cost.max()), 1e-12)
        value = ot.sinkhorn2(mu.weights, nu.weights, cost, reg, method="sinkhorn_log")
        logger.warning("W2 between %d and %d atoms uses the entropic approximation", mu.size, nu.size)
        return W2Result(math.sqrt(max(float(value), 0.0)), False, "sinkhorn")

    value = ot.sliced_wasserstein_distance(
        mu.points, nu.points, mu.weights, nu.weights, n_projections=256, seed=seed
    )
    logger.warning("W2 between %d and %d atoms uses the sliced approximation", mu.size, nu.size)
    return W2Result(float(value), False, "sliced")


def optimal_coupling(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> Coupling:
    _check_same_dim(mu, nu)
    cost = ot.dist(mu.points, nu.points)
    if _equal_uniform(mu, nu) and mu.size <= ASSIGNMENT_LIMIT:
        rows, cols = linear_sum_assignment(cost)
        plan = np.zeros_like(cost)
        plan[rows, cols] = mu.weights[rows]
        return Coupling(mu, nu, plan)
    if max(mu.size, nu.size) > EXACT_LP_LIMIT:
        raise MeasureError(f"exact coupling limited to {EXACT_LP_LIMIT} atoms per side")
    return Coupling(mu, nu, ot.emd(mu.weights, nu.weights, cost))


def gaussian_w2(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """W2 between the Gaussians with the same first two moments (Bures formula)."""
    _check_same_dim(mu, nu)
    s1, s2 = mu.covariance(), nu.covariance()
    root2 = linalg.sqrtm(s2)
    cross = linalg.sqrtm(root2 @ s1 @ root2)
    bures = np.trace(s1 + s2 - 2.0 * np.real(cross))
    shift = np.sum((mu.mean() - nu.mean()) ** 2)
    return math.sqrt(max(float(shift + bures), 0.0))


def pushforward_shift(mu: EmpiricalMeasure, theta) -> EmpiricalMeasure:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != mu.dim:
        raise DimensionError(f"shift of length {theta.shape[0]} for a measure on R^{mu.dim}")
    return EmpiricalMeasure(mu.points + theta, mu.weights)


def marginal(m: EmpiricalMeasure, which: Literal["first", "second"]) -> EmpiricalMeasure:
    if m.dim % 2:
        raise DimensionError(f"marginals need an even dimension, got {m.dim}")
    half = m.dim // 2
    if which == "first":
        return EmpiricalMeasure(m.points[:, :half], m.weights)
    if which == "second":
        return EmpiricalMeasure(m.points[:, half:], m.weights)
    raise MeasureError(f"unknown marginal {which!r}")


def silverman_bandwidth(mu: EmpiricalMeasure) -> float:
    n_eff = 1.0 / float(np.sum(mu.weights**2))
    spread = math.sqrt(float(np.mean(np.diag(mu.covariance()))))
    if spread == 0.0:
        raise MeasureError("degenerate cloud: pass an explicit bandwidth")
    d = mu.dim
    return (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n_eff ** (-1.0 / (d + 4)) * spread


def _loo_log_kernels(mu: EmpiricalMeasure, bandwidth: float):
    """Yield (row slice, leave-one-out log kernel weights) in row chunks."""
    if mu.size < 2:
        raise MeasureError("kernel estimators need at least 2 points")
    if bandwidth <= 0:
        raise MeasureError(f"bandwidth must be positive, got {bandwidth}")
    with np.errstate(divide="ignore"):
        log_w = np.log(mu.weights)
    for start in range(0, mu.size, KDE_CHUNK):
        stop = min(start + KDE_CHUNK, mu.size)
        sq = cdist(mu.points[start:stop], mu.points, "sqeuclidean")
        logk = -sq / (2.0 * bandwidth**2) + log_w[None, :]
        logk[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        yield slice(start, stop), logk


def entropy_kde(mu: EmpiricalMeasure, bandwidth: Optional[float] = None) -> float:
    """Plug-in estimate of the integral of mu log mu (the negative differential entropy)."""
    if mu.size >= 2 and float(mu.weights.max()) >= 1.0 - POINT_MASS_TOL:
        # all the mass sits on one atom, which has no density
        return math.inf
    h = silverman_bandwidth(mu) if bandwidth is None else bandwidth
    log_gauss = -0.5 * mu.dim * math.log(2.0 * math.pi * h * h)
    total = 0.0
    for rows, logk in _loo_log_kernels(mu, h):
        with np.errstate(divide="ignore"):
            log_mass = np.log1p(-mu.weights[rows])
        log_density = logsumexp(logk, axis=1) - log_mass + log_gauss
        total += float(mu.weights[rows] @ log_density)
    return total


def fisher_kde(mu: EmpiricalMeasure, bandwidth: Optional[float] = None) -> float:
    h = silverman_bandwidth(mu) if bandwidth is None else bandwidth
    total = 0.0
    for rows, logk in _loo_log_kernels(mu, h):
        resp = np.exp(logk - logsumexp(logk, axis=1, keepdims=True))
        score = (resp @ mu.points - mu.points[rows]) / (h * h)
        total += float(mu.weights[rows] @ np.sum(score**2, axis=1))
    return total


def sample_cloud(spec: SamplerSpec, dim: int, rng: np.random.Generator, n_atoms: Optional[int] = None) -> EmpiricalMeasure:
    n = spec.n_atoms if n_atoms is None else n_atoms
    k = len(spec.components)
    if k == 1:
        labels = np.zeros(n, dtype=int)
    else:
        mix = np.ones(k) if spec.mixture_weights is None else np.asarray(spec.mixture_weights, dtype=float)
        labels = rng.choice(k, size=n, p=mix / mix.sum())
    out = np.empty((n, dim))
    for c, comp in enumerate(spec.components):
        idx = labels == c
        count = int(idx.sum())
        try:
            center = np.broadcast_to(np.asarray(comp.mean, dtype=float), (dim,))
        except ValueError as exc:
            raise DimensionError(f"component mean {comp.mean} does not fit dimension {dim}") from exc
        if comp.kind == "uniform":
            draws = rng.uniform(-1.0, 1.0, (count, dim))
        elif spec.heavy_tail_df is not None:
            draws = rng.standard_t(spec.heavy_tail_df, (count, dim))
        else:
            draws = rng.standard_normal((count, dim))
        out[idx] = center + comp.scale * draws
    return EmpiricalMeasure.uniform(out)


def particles_from(mu: EmpiricalMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    """n equally weighted particles representing mu (the atoms themselves when they already are)."""
    if mu.is_uniform and mu.size == n:
        return mu.points.copy()
    # systematic resampling
    positions = (rng.uniform() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(mu.weights), positions, side="right")
    return mu.points[np.minimum(idx, mu.size - 1)].copy()
