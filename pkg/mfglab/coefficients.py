"""
Coefficient triples (F, G, W0) and randomized certification of the
monotonicity and growth hypotheses they are supposed to satisfy.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy.optimize import linprog

from mfglab.errors import ConfigError, UnknownFamilyError
from mfglab.measures import EmpiricalMeasure, lifted_norm, moment, sample_cloud
from mfglab.models import (
    CoefficientSpec,
    GrowthCertificate,
    MonotonicityReport,
    RegimeKind,
    SamplerSpec,
    WeakStrongFit,
)
from mfglab.streams import derive_seed, ordered_map, substream

logger = logging.getLogger(__name__)

# F(x, mu, u) and G(x, mu, u) act on all atoms at once: x, u are (n, d) arrays
DriftMap = Callable[[np.ndarray, EmpiricalMeasure, np.ndarray], np.ndarray]
# W0(x, mu) and the maps regularized by the yosida module
StateMap = Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]

DEGENERATE_NORM = 1e-12
MAX_RESAMPLE = 8


@dataclass
class Regime:
    kind: RegimeKind = "joint_monotone"
    alpha: Optional[float] = None
    L: Optional[float] = None
    a0: Optional[float] = None

    def __post_init__(self):
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError(f"regime alpha must be positive, got {self.alpha}")
        if self.L is not None and self.L < 0:
            raise ConfigError(f"regime L must be nonnegative, got {self.L}")


@dataclass
class CoefficientSet:
    F: DriftMap
    G: DriftMap
    W0: StateMap
    growth_constant: float
    regime: Regime = field(default_factory=Regime)
    gamma: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.growth_constant <= 0:
            raise ConfigError("growth constant must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass
class LiftedSample:
    x_cloud: EmpiricalMeasure
    u_values: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_values, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if u.shape != self.x_cloud.points.shape:
            raise ConfigError("u_values must align with the atoms of x_cloud")
        self.u_values = u


def _mean_term(mu: EmpiricalMeasure, n: int) -> np.ndarray:
    return np.broadcast_to(mu.mean(), (n, mu.dim))


# --- Coefficient families ---

FAMILIES: dict[str, Callable[..., CoefficientSet]] = {}


def register_family(name: str):
    def decorator(constructor: Callable[..., CoefficientSet]):
        FAMILIES[name] = constructor
        return constructor
    return decorator


@register_family("lq")
def lq_family(p: float = 1.0, p_bar: float = 0.0, q: float = 1.0, q_bar: float = 0.0, gamma: float = 1.0) -> CoefficientSet:
    """F = u, G = q x + q_bar mean(mu), W0 = p x + p_bar mean(mu)."""
    def F(x, mu, u):
        return np.array(u, dtype=float, copy=True)

    def G(x, mu, u):
        return q * x + q_bar * _mean_term(mu, x.shape[0])

    def W0(x, mu):
        return p * x + p_bar * _mean_term(mu, x.shape[0])

    alpha_x = min(q, q + q_bar)
    regime = Regime("weak_strong_in_x", alpha=alpha_x, L=0.0) if alpha_x > 0 else Regime("joint_monotone")
    growth = 1.0 + max(abs(q) + abs(q_bar), abs(p) + abs(p_bar))
    params = {"p": p, "p_bar": p_bar, "q": q, "q_bar": q_bar}
    return CoefficientSet(F, G, W0, growth, regime, gamma, "lq", params)


@register_family("holder")
def holder_family(p_bar: float = 0.0, q: float = 1.0, q_bar: float = 0.0, gamma: float = 0.5) -> CoefficientSet:
    """LQ dynamics with the Holder terminal map W0(x, mu) = sign(x)|x|^gamma + p_bar mean(mu)."""
    def F(x, mu, u):
        return np.array(u, dtype=float, copy=True)

    def G(x, mu, u):
        return q * x + q_bar * _mean_term(mu, x.shape[0])

    def W0(x, mu):
        return np.sign(x) * np.abs(x) ** gamma + p_bar * _mean_term(mu, x.shape[0])

    regime = Regime("weak_strong_in_w", alpha=1.0, L=max(0.0, -min(q, q + q_bar)))
    growth = 1.0 + max(abs(q) + abs(q_bar), 1.0 + abs(p_bar))
    return CoefficientSet(F, G, W0, growth, regime, gamma, "holder", {"p_bar": p_bar, "q": q, "q_bar": q_bar})


@register_family("zero")
def zero_family(gamma: float = 1.0) -> CoefficientSet:
    def F(x, mu, u):
        return np.zeros_like(x, dtype=float)

    def W0(x, mu):
        return np.zeros_like(x, dtype=float)

    return CoefficientSet(F, F, W0, 1.0, Regime(), gamma, "zero", {})


@register_family("constant_driver")
def constant_driver_family(c: float = 1.0, p: float = 1.0, gamma: float = 1.0) -> CoefficientSet:
    """F = 0, G = c, W0 = p x."""
    def F(x, mu, u):
        return np.zeros_like(x, dtype=float)

    def G(x, mu, u):
        return np.full_like(x, c, dtype=float)

    def W0(x, mu):
        return p * np.asarray(x, dtype=float)

    return CoefficientSet(F, G, W0, max(1.0, abs(c), abs(p)), Regime(), gamma, "constant_driver", {"c": c, "p": p})


@register_family("linear_drift")
def linear_drift_family(k: float = 1.0, p: float = 1.0, gamma: float = 1.0) -> CoefficientSet:
    """F = k x whatever the control, G = 0, W0 = p x."""
    def F(x, mu, u):
        return k * np.asarray(x, dtype=float)

    def G(x, mu, u):
        return np.zeros_like(x, dtype=float)

    def W0(x, mu):
        return p * np.asarray(x, dtype=float)

    return CoefficientSet(F, G, W0, max(1.0, abs(k), abs(p)), Regime(), gamma, "linear_drift", {"k": k, "p": p})


def build_coefficients(spec: CoefficientSpec) -> CoefficientSet:
    try:
        constructor = FAMILIES[spec.family]
    except KeyError:
        raise UnknownFamilyError(f"unknown coefficient family {spec.family!r}; known: {sorted(FAMILIES)}") from None
    try:
        cs = constructor(gamma=spec.gamma, **spec.params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for family {spec.family!r}: {exc}") from exc
    if spec.regime is not None:
        cs.regime = Regime(**spec.regime.model_dump())
    if spec.growth_constant is not None:
        cs.growth_constant = spec.growth_constant
    return cs


# --- Base maps for regularization ---

@dataclass
class BaseMap:
    fn: StateMap
    growth_constant: Optional[float]
    name: str

    def __call__(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        return self.fn(x, mu)


def clipped_cubic(x: np.ndarray, clip: float) -> np.ndarray:
    """x^3 on [-clip, clip], continued with slope 3 clip^2 outside."""
    x = np.asarray(x, dtype=float)
    inner = x**3
    outer = np.sign(x) * (clip**3 + 3.0 * clip**2 * (np.abs(x) - clip))
    return np.where(np.abs(x) <= clip, inner, outer)


def linear_base(k: float = 1.0) -> BaseMap:
    return BaseMap(lambda x, mu: k * np.asarray(x, dtype=float), abs(k) if k else None, "linear")


def cubic_base(clip: float = 10.0) -> BaseMap:
    return BaseMap(lambda x, mu: clipped_cubic(x, clip), 3.0 * clip**2, "cubic")


def mean_field_linear_base(k: float = 1.0) -> BaseMap:
    return BaseMap(lambda x, mu: x + k * _mean_term(mu, x.shape[0]), max(1.0, abs(k)), "mean_field_linear")


BASE_MAPS: dict[str, Callable[..., BaseMap]] = {
    "linear": linear_base,
    "cubic": cubic_base,
    "mean_field_linear": mean_field_linear_base,
}


def build_base_map(name: str, params: dict) -> BaseMap:
    try:
        constructor = BASE_MAPS[name]
    except KeyError:
        raise UnknownFamilyError(f"unknown base map {name!r}; known: {sorted(BASE_MAPS)}") from None
    try:
        return constructor(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for base map {name!r}: {exc}") from exc


# --- Probe pairs ---

STATE_KINDS = ("independent", "rigid_shift", "centered", "local")
JOINT_KINDS = ("independent", "state_only", "control_only", "centered", "rigid_shift")


def _perturb(points: np.ndarray, kind: str, rng: np.random.Generator, weights: np.ndarray) -> np.ndarray:
    n, d = points.shape
    if kind == "rigid_shift":
        return points + rng.standard_normal(d)
    z = rng.standard_normal((n, d))
    if kind == "centered":
        return points + z - weights @ z
    if kind == "local":
        return points + 0.1 * z + rng.uniform() * rng.standard_normal(d)
    raise ConfigError(f"unknown perturbation kind {kind!r}")


def state_pair(sampler: SamplerSpec, dim: int, pair_seed: int, kind: str) -> tuple[EmpiricalMeasure, EmpiricalMeasure]:
    """The (X, Y) clouds of one probe pair; resamples degenerate pairs."""
    for attempt in range(MAX_RESAMPLE):
        rng = substream(pair_seed, "state-pair", attempt)
        x = sample_cloud(sampler, dim, rng)
        current = kind if attempt == 0 else "independent"
        if current == "independent":
            y = sample_cloud(sampler, dim, rng, n_atoms=x.size)
        else:
            y = EmpiricalMeasure(_perturb(x.points, current, rng, x.weights), x.weights)
        if lifted_norm(x.points, y.points, x.weights) >= DEGENERATE_NORM:
            return x, y
    raise ConfigError(f"could not draw a non-degenerate pair from seed {pair_seed}")


def joint_pair(sampler: SamplerSpec, dim: int, pair_seed: int, kind: str) -> tuple[LiftedSample, LiftedSample]:
    for attempt in range(MAX_RESAMPLE):
        rng = substream(pair_seed, "joint-pair", attempt)
        x = sample_cloud(sampler, dim, rng)
        u = sample_cloud(sampler, dim, rng, n_atoms=x.size).points
        current = kind if attempt == 0 else "independent"
        if current == "independent":
            y = sample_cloud(sampler, dim, rng, n_atoms=x.size).points
            v = sample_cloud(sampler, dim, rng, n_atoms=x.size).points
        elif current == "state_only":
            y, v = _perturb(x.points, "local", rng, x.weights), u.copy()
        elif current == "control_only":
            y, v = x.points.copy(), _perturb(u, "local", rng, x.weights)
        else:
            y = _perturb(x.points, current, rng, x.weights)
            v = _perturb(u, current, rng, x.weights)
        size = lifted_norm(x.points, y, x.weights) ** 2 + lifted_norm(u, v, x.weights) ** 2
        if math.sqrt(size) >= DEGENERATE_NORM:
            y_cloud = EmpiricalMeasure(y, x.weights)
            return LiftedSample(x, u), LiftedSample(y_cloud, v)
    raise ConfigError(f"could not draw a non-degenerate pair from seed {pair_seed}")


def _inner(a: np.ndarray, b: np.ndarray, weights: np.ndarray) -> float:
    return float(weights @ np.sum(a * b, axis=1))


def joint_products(F: DriftMap, G: DriftMap, first: LiftedSample, second: LiftedSample) -> tuple[float, float, float]:
    """(E[dF.dU + dG.dX], ||dX||^2, ||dU||^2) for one pair."""
    w = first.x_cloud.weights
    x, mu, u = first.x_cloud.points, first.x_cloud, first.u_values
    y, nu, v = second.x_cloud.points, second.x_cloud, second.u_values
    d_f = F(x, mu, u) - F(y, nu, v)
    d_g = G(x, mu, u) - G(y, nu, v)
    joint = _inner(d_f, u - v, w) + _inner(d_g, x - y, w)
    return joint, _inner(x - y, x - y, w), _inner(u - v, u - v, w)


def _report(quotients: list[float], seeds: list[int], tolerance: float) -> MonotonicityReport:
    worst = int(np.argmin(quotients))
    return MonotonicityReport(
        min_quotient=float(quotients[worst]),
        n_pairs=len(quotients),
        worst_pair_seed=seeds[worst],
        worst_pair_index=worst,
        tolerance=tolerance,
    )


def probe_l2_monotone(
    W0map: StateMap,
    sampler: SamplerSpec,
    n_pairs: int,
    seed: int,
    dim: int = 1,
    tolerance: float = 1e-9,
    threads: int = 1,
) -> MonotonicityReport:
    if n_pairs < 1:
        raise ConfigError("n_pairs must be at least 1")
    seeds = [derive_seed(seed, "l2-probe", i) for i in range(n_pairs)]

    def quotient(i: int) -> float:
        x, y = state_pair(sampler, dim, seeds[i], STATE_KINDS[i % len(STATE_KINDS)])
        w = x.weights
        diff = W0map(x.points, x) - W0map(y.points, y)
        return _inner(diff, x.points - y.points, w) / _inner(x.points - y.points, x.points - y.points, w)

    report = _report(ordered_map(quotient, range(n_pairs), threads), seeds, tolerance)
    logger.debug("L2 probe: min quotient %.6g over %d pairs", report.min_quotient, n_pairs)
    return report


def _joint_samples(F, G, sampler, n_pairs, seed, dim, threads) -> tuple[np.ndarray, list[int]]:
    seeds = [derive_seed(seed, "joint-probe", i) for i in range(n_pairs)]

    def products(i: int) -> tuple[float, float, float]:
        first, second = joint_pair(sampler, dim, seeds[i], JOINT_KINDS[i % len(JOINT_KINDS)])
        return joint_products(F, G, first, second)

    return np.asarray(ordered_map(products, range(n_pairs), threads)), seeds


def probe_joint_monotone(
    F: DriftMap,
    G: DriftMap,
    sampler: SamplerSpec,
    n_pairs: int,
    seed: int,
    dim: int = 1,
    tolerance: float = 1e-9,
    threads: int = 1,
) -> MonotonicityReport:
    if n_pairs < 1:
        raise ConfigError("n_pairs must be at least 1")
    table, seeds = _joint_samples(F, G, sampler, n_pairs, seed, dim, threads)
    quotients = table[:, 0] / (table[:, 1] + table[:, 2])
    return _report(quotients.tolist(), seeds, tolerance)


def fit_weak_strong(
    F: DriftMap,
    G: DriftMap,
    sampler: SamplerSpec,
    n_pairs: int,
    seed: int,
    direction: Literal["in_X", "in_W"] = "in_X",
    dim: int = 1,
    threads: int = 1,
) -> WeakStrongFit:
    """
    Lower envelope joint >= alpha*||dX||^2 - L*||dU||^2 (roles swapped for in_W),
    solved as the linear program max alpha - L over alpha, L >= 0.
    """
    if n_pairs < 10:
        raise ConfigError("fit_weak_strong needs at least 10 pairs")
    table, _ = _joint_samples(F, G, sampler, n_pairs, seed, dim, threads)
    joint, norm_x, norm_u = table[:, 0], table[:, 1], table[:, 2]
    coercive, penalty = (norm_x, norm_u) if direction == "in_X" else (norm_u, norm_x)
    scale = coercive + penalty
    result = linprog(
        c=[-1.0, 1.0],
        A_ub=np.column_stack([coercive / scale, -penalty / scale]),
        b_ub=joint / scale,
        bounds=[(0.0, None), (0.0, None)],
        method="highs",
    )
    if result.status == 0:
        alpha_hat, l_hat = (float(v) for v in result.x)
        return WeakStrongFit(direction=direction, alpha_hat=alpha_hat, L_hat=l_hat, n_pairs=n_pairs, feasible=True)

    # infeasible: no coercivity at all, report the penalty needed with alpha = 0
    needed = 0.0
    for j, p in zip(joint, penalty):
        if j < 0:
            needed = max(needed, -j / p) if p > 0 else math.inf
    logger.info("weak-strong fit %s infeasible (status %d)", direction, result.status)
    return WeakStrongFit(direction=direction, alpha_hat=0.0, L_hat=needed, n_pairs=n_pairs, feasible=False)


def fit_a0(W0map: StateMap, sampler: SamplerSpec, n_pairs: int, seed: int, dim: int = 1) -> float:
    """min E[dW0.dX] / ||dW0||^2 over sampled pairs (the W0 coercivity constant a0)."""
    best = math.inf
    for i in range(n_pairs):
        pair_seed = derive_seed(seed, "a0-probe", i)
        x, y = state_pair(sampler, dim, pair_seed, STATE_KINDS[i % len(STATE_KINDS)])
        diff = W0map(x.points, x) - W0map(y.points, y)
        size = _inner(diff, diff, x.weights)
        if size < DEGENERATE_NORM**2:
            continue
        best = min(best, _inner(diff, x.points - y.points, x.weights) / size)
    return best


def holder_norm_gamma(a: float, gamma: float) -> float:
    if a < 0:
        raise ConfigError(f"holder norm needs a >= 0, got {a}")
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma}")
    return max(a, a**gamma)


def predicted_exponent(kind: RegimeKind, gamma: float) -> Optional[float]:
    if kind == "weak_strong_in_x":
        return 1.0
    if kind in ("strong_in_x", "weak_strong_in_w"):
        return gamma / (2.0 - gamma)
    if kind == "strong_in_w":
        return gamma**2 / (2.0 - gamma**2)
    return None


def growth_ratio(cs: CoefficientSet, sampler: SamplerSpec, n_samples: int, seed: int, dim: int = 1) -> float:
    worst = 0.0
    for i in range(n_samples):
        rng = substream(seed, "growth", i)
        mu = sample_cloud(sampler, dim, rng)
        x = mu.points
        u = sample_cloud(sampler, dim, rng, n_atoms=mu.size).points
        spread = math.sqrt(moment(mu, 2))
        nx = np.linalg.norm(x, axis=1)
        full = 1.0 + nx + np.linalg.norm(u, axis=1) + spread
        state = 1.0 + nx + spread
        for values, bound in ((cs.F(x, mu, u), full), (cs.G(x, mu, u), full), (cs.W0(x, mu), state)):
            worst = max(worst, float(np.max(np.linalg.norm(values, axis=1) / bound)))
    return worst


def certify_growth(cs: CoefficientSet, sampler: SamplerSpec, n_samples: int, seed: int, dim: int = 1) -> bool:
    return growth_certificate(cs, sampler, n_samples, seed, dim).passed


def growth_certificate(cs: CoefficientSet, sampler: SamplerSpec, n_samples: int, seed: int, dim: int = 1) -> GrowthCertificate:
    ratio = growth_ratio(cs, sampler, n_samples, seed, dim)
    return GrowthCertificate(growth_constant=cs.growth_constant, max_ratio=ratio, n_samples=n_samples)
