"""
Forward particle dynamics: McKean-Vlasov characteristics, the common noise
theta process and the change of variables that absorbs a common shift.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from mfglab.coefficients import CoefficientSet
from mfglab.errors import ConfigError, DimensionError, SimulationError, UnknownFamilyError
from mfglab.measures import EmpiricalMeasure, lifted_norm, moment, particles_from, pushforward_shift
from mfglab.streams import step_normals, substream

logger = logging.getLogger(__name__)

# W(t, x, mu) with t the time to go, x an (n, d) array of states
FieldClosure = Callable[[float, np.ndarray, EmpiricalMeasure], np.ndarray]
GRID_TOL = 1e-12


def time_grid(T: float, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    steps = round(T / dt)
    if abs(steps * dt - T) > GRID_TOL:
        raise ConfigError(f"dt={dt} does not divide T={T}")
    return dt * np.arange(steps + 1)


@dataclass
class MeasureFlow:
    times: np.ndarray
    particle_paths: np.ndarray  # (N, K+1, d)
    seed: int
    common_path: Optional[np.ndarray] = None  # (K+1, d) cumulative shared shift

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("flow times must be strictly increasing")
        if self.particle_paths.shape[1] != len(self.times):
            raise ConfigError("particle paths do not match the time grid")

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def cloud(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.uniform(self.particle_paths[:, k, :])

    @property
    def measures(self) -> list[EmpiricalMeasure]:
        return [self.cloud(k) for k in range(len(self.times))]


def _first_bad_particle(values: np.ndarray) -> Optional[int]:
    bad = ~np.all(np.isfinite(values), axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def euler_maruyama(
    cs: CoefficientSet,
    W: FieldClosure,
    x0: np.ndarray,
    times: np.ndarray,
    sigma_x: float,
    seed: int,
    beta: float = 0.0,
    measures: Optional[Sequence[EmpiricalMeasure]] = None,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Particle paths of dX = -F(X, m_s, W(T - s, X, m_s)) ds + sqrt(2 sigma_x) dB
    (+ sqrt(2 beta) dB^0 shared by all particles).

    m_s is the running empirical law of the particles unless a frozen flow
    of measures is supplied, one per grid node.
    """
    n, d = x0.shape
    T = float(times[-1])
    paths = np.empty((n, len(times), d))
    paths[:, 0, :] = x0
    common = np.zeros((len(times), d)) if beta > 0 else None
    x = x0.copy()
    for k in range(len(times) - 1):
        s, dt = float(times[k]), float(times[k + 1] - times[k])
        law = EmpiricalMeasure.uniform(x) if measures is None else measures[k]
        u = W(T - s, x, law)
        drift = cs.F(x, law, u)
        bad = _first_bad_particle(drift)
        if bad is not None:
            raise SimulationError(s, bad)
        x = x - drift * dt
        if sigma_x > 0:
            x = x + math.sqrt(2.0 * sigma_x * dt) * step_normals(seed, "idiosyncratic", k, (n, d))
        if beta > 0:
            shock = math.sqrt(2.0 * beta * dt) * step_normals(seed, "common", k, (d,))
            x = x + shock
            common[k + 1] = common[k] + shock
        paths[:, k + 1, :] = x
    return paths, common


def _initial_particles(mu0: EmpiricalMeasure, N: int, seed: int) -> np.ndarray:
    if N < 2:
        raise ConfigError(f"need at least 2 particles, got N={N}")
    return particles_from(mu0, N, substream(seed, "initial"))


def simulate_mckean(
    cs: CoefficientSet,
    W: FieldClosure,
    mu0: EmpiricalMeasure,
    T: float,
    dt: float,
    N: int,
    sigma_x: float,
    seed: int,
) -> MeasureFlow:
    times = time_grid(T, dt)
    paths, _ = euler_maruyama(cs, W, _initial_particles(mu0, N, seed), times, sigma_x, seed)
    return MeasureFlow(times, paths, seed)


def simulate_conditional_common_noise(
    cs: CoefficientSet,
    W: FieldClosure,
    mu0: EmpiricalMeasure,
    T: float,
    dt: float,
    N: int,
    sigma_x: float,
    beta: float,
    seed: int,
) -> MeasureFlow:
    """The cloud is the law conditional on the shared path; beta = 0 reproduces simulate_mckean."""
    if beta < 0:
        raise ConfigError(f"beta must be nonnegative, got {beta}")
    times = time_grid(T, dt)
    paths, common = euler_maruyama(cs, W, _initial_particles(mu0, N, seed), times, sigma_x, seed, beta=beta)
    return MeasureFlow(times, paths, seed, common)


def simulate_in_flow(
    cs: CoefficientSet,
    W: FieldClosure,
    x0: np.ndarray,
    measures: Sequence[EmpiricalMeasure],
    T: float,
    dt: float,
    sigma_x: float,
    seed: int,
) -> MeasureFlow:
    """Particles driven along a prescribed flow of measures instead of their own law."""
    times = time_grid(T, dt)
    if len(measures) != len(times):
        raise ConfigError(f"{len(measures)} measures for {len(times)} grid nodes")
    paths, _ = euler_maruyama(cs, W, np.asarray(x0, dtype=float), times, sigma_x, seed, measures=measures)
    return MeasureFlow(times, paths, seed)


# --- theta process ---

@dataclass
class ThetaPath:
    times: np.ndarray
    values: np.ndarray  # (K+1, n)
    drift_name: str
    diffusion_name: str


THETA_DRIFTS: dict[str, Callable[[float], Callable[[np.ndarray], np.ndarray]]] = {
    "zero": lambda rate: (lambda theta: np.zeros_like(theta)),
    "linear": lambda rate: (lambda theta: rate * theta),
}

THETA_DIFFUSIONS: dict[str, Callable[[float], Callable[[np.ndarray], np.ndarray]]] = {
    "zero": lambda scale: (lambda theta: np.zeros((theta.size, theta.size))),
    "identity": lambda scale: (lambda theta: np.eye(theta.size)),
    "scaled": lambda scale: (lambda theta: scale * np.eye(theta.size)),
}


def simulate_theta(
    b_name: str,
    sigma_name: str,
    theta0,
    T: float,
    dt: float,
    seed: int,
    drift_rate: float = 1.0,
    diffusion_scale: float = 1.0,
) -> ThetaPath:
    """Euler-Maruyama path of d theta = -b(theta) ds + Sigma(theta) dB."""
    if b_name not in THETA_DRIFTS:
        raise UnknownFamilyError(f"unknown theta drift {b_name!r}; known: {sorted(THETA_DRIFTS)}")
    if sigma_name not in THETA_DIFFUSIONS:
        raise UnknownFamilyError(f"unknown theta diffusion {sigma_name!r}; known: {sorted(THETA_DIFFUSIONS)}")
    b = THETA_DRIFTS[b_name](drift_rate)
    sigma = THETA_DIFFUSIONS[sigma_name](diffusion_scale)

    times = time_grid(T, dt)
    theta = np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
    values = np.empty((len(times), theta.size))
    values[0] = theta
    for k in range(len(times) - 1):
        noise = step_normals(seed, "theta", k, (theta.size,))
        theta = theta - b(theta) * dt + sigma(theta) @ (math.sqrt(dt) * noise)
        values[k + 1] = theta
    return ThetaPath(times, values, b_name, sigma_name)


def common_noise_wrap(W: FieldClosure) -> Callable[[float, np.ndarray, np.ndarray, EmpiricalMeasure], np.ndarray]:
    """(t, x, theta, mu) -> W(t, x + theta, (id + theta)# mu)."""
    def wrapped(t: float, x: np.ndarray, theta, mu: EmpiricalMeasure) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape[0] != x.shape[1]:
            raise DimensionError(f"theta of length {theta.shape[0]} for states in R^{x.shape[1]}")
        return W(t, x + theta, pushforward_shift(mu, theta))
    return wrapped


# --- flow statistics ---

def second_moment_growth(flow: MeasureFlow, mu0: Optional[EmpiricalMeasure] = None) -> float:
    """sup_s E2(m_s) / (1 + E2(mu0))."""
    base = flow.cloud(0) if mu0 is None else mu0
    second = np.mean(np.sum(flow.particle_paths**2, axis=2), axis=0)
    return float(second.max() / (1.0 + moment(base, 2)))


def time_continuity_ratio(flow: MeasureFlow) -> float:
    """max over grid pairs s < t of ||X_t - X_s|| / (sqrt(t - s) (1 + ||X_0||))."""
    paths = flow.particle_paths
    n = paths.shape[0]
    weights = np.full(n, 1.0 / n)
    start = 1.0 + lifted_norm(paths[:, 0, :], np.zeros_like(paths[:, 0, :]), weights)
    worst = 0.0
    for i in range(flow.n_steps):
        gaps = paths[:, i + 1 :, :] - paths[:, i : i + 1, :]
        norms = np.sqrt(np.mean(np.sum(gaps**2, axis=2), axis=0))
        spans = np.sqrt(flow.times[i + 1 :] - flow.times[i])
        worst = max(worst, float(np.max(norms / spans)))
    return worst / start
