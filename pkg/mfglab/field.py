"""
Tabulated decoupling field W(t, x, mu).

The table is indexed by time-to-go node k, reference flow j and a spatial
stencil around the node measure. Node k of flow j carries the cloud reached
by the reference characteristics after T - t_k units of forward time, so a
characteristic launched from a node visits exactly the nodes k, k-1, ..., 0
of the same flow.
"""
import logging
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RBFInterpolator, interp1d

from mfglab.errors import ConfigError, DimensionError
from mfglab.measures import EmpiricalMeasure, gaussian_w2, wasserstein2

logger = logging.getLogger(__name__)

STENCIL_WIDTH = 3.0
MIN_SPREAD = 1e-8


def build_stencil(cloud: np.ndarray, size: int) -> np.ndarray:
    """Points mean +- 3 std, size per axis, along each coordinate axis through the mean."""
    center = cloud.mean(axis=0)
    spread = cloud.std(axis=0)
    spread = np.where(spread < MIN_SPREAD, 1.0, spread)
    offsets = np.linspace(-STENCIL_WIDTH, STENCIL_WIDTH, size)
    d = cloud.shape[1]
    if d == 1:
        return center + spread * offsets[:, None]
    points = [center]
    for axis in range(d):
        for o in offsets:
            if o == 0.0:
                continue
            p = center.copy()
            p[axis] += o * spread[axis]
            points.append(p)
    return np.asarray(points)


@dataclass
class FlowTable:
    clouds: np.ndarray  # (K+1, N, d), clouds[k] at time to go t_k
    stencils: np.ndarray  # (K+1, S, d)
    values: np.ndarray  # (K+1, S, d)
    std_errors: np.ndarray  # (K+1, S)
    # satellite flows start from reference flow `base` shifted by `shift`
    base: Optional[int] = None
    shift: Optional[np.ndarray] = None

    @property
    def is_reference(self) -> bool:
        return self.base is None

    def node_cloud(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.uniform(self.clouds[k])


def satellite_shifts(dim: int, size: float) -> list[np.ndarray]:
    """+- size along each coordinate axis."""
    shifts = []
    for axis in range(dim):
        for sign in (1.0, -1.0):
            s = np.zeros(dim)
            s[axis] = sign * size
            shifts.append(s)
    return shifts


@dataclass
class DecouplingField:
    """
    Between reference flows the field is read from the nearest one; the
    satellites of that flow supply a first-order correction in the mean of
    the measure argument. Node 0 is the terminal condition itself when it
    is known.
    """
    horizon: float
    dt: float
    flows: list[FlowTable]
    config_hash: str = ""
    iteration_count: int = 0
    final_increment: float = 0.0
    converged: bool = False
    increment_history: list[float] = dc_field(default_factory=list)
    effective_tol: Optional[float] = None
    terminal: Optional[Callable[[np.ndarray, EmpiricalMeasure], np.ndarray]] = None

    def __post_init__(self):
        if not self.flows:
            raise ConfigError("a field needs at least one reference flow")
        self.references = [j for j, f in enumerate(self.flows) if f.is_reference]
        if not self.references:
            raise ConfigError("a field needs at least one reference flow")
        self.satellites: dict[int, list[int]] = {j: [] for j in self.references}
        for i, f in enumerate(self.flows):
            if not f.is_reference:
                if f.base not in self.satellites:
                    raise ConfigError(f"satellite flow {i} points at {f.base}, which is not a reference flow")
                self.satellites[f.base].append(i)
        self._means = [f.clouds.mean(axis=1) for f in self.flows]
        self._interpolators: dict[tuple[int, int], object] = {}

    @property
    def n_steps(self) -> int:
        return self.flows[0].values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.flows[0].values.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def max_std_error(self) -> float:
        return max(float(f.std_errors.max()) for f in self.flows)

    def _interpolator(self, k: int, j: int):
        key = (k, j)
        interp = self._interpolators.get(key)
        if interp is None:
            table = self.flows[j]
            if self.dim == 1:
                interp = interp1d(
                    table.stencils[k, :, 0],
                    table.values[k],
                    axis=0,
                    kind="linear",
                    fill_value="extrapolate",
                    assume_sorted=True,
                )
            else:
                interp = RBFInterpolator(table.stencils[k], table.values[k], kernel="thin_plate_spline", degree=1)
            self._interpolators[key] = interp
        return interp

    def eval_node(self, k: int, j: int, x: np.ndarray) -> np.ndarray:
        """Spatial interpolation of the node (k, j) table at states x of shape (n, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise DimensionError(f"states in R^{x.shape[1]} for a field on R^{self.dim}")
        interp = self._interpolator(k, j)
        return interp(x[:, 0]) if self.dim == 1 else interp(x)

    def nearest_flow(self, k: int, mu: EmpiricalMeasure) -> int:
        """Index of the reference flow whose node-k cloud is closest to mu."""
        if len(self.references) == 1:
            return self.references[0]
        if self.dim == 1:
            dists = [wasserstein2(mu, self.flows[j].node_cloud(k)).value for j in self.references]
        else:
            dists = [gaussian_w2(mu, self.flows[j].node_cloud(k)) for j in self.references]
        return self.references[int(np.argmin(dists))]

    def mean_sensitivity(self, k: int, j: int, x: np.ndarray) -> Optional[np.ndarray]:
        """
        Least-squares slope of the node values in the mean of the measure,
        shape (d, n, d), from the satellites of reference flow j. None when
        the flow has no usable satellites.
        """
        sats = self.satellites.get(j, [])
        if not sats:
            return None
        center = self._means[j][k]
        dm = np.stack([self._means[i][k] - center for i in sats])
        if np.max(np.abs(dm)) < MIN_SPREAD:
            return None
        base = self.eval_node(k, j, x)
        dv = np.stack([self.eval_node(k, i, x) - base for i in sats])
        coef, *_ = np.linalg.lstsq(dm, dv.reshape(len(sats), -1), rcond=None)
        return coef.reshape((self.dim,) + base.shape)

    def _node_value(self, k: int, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        if k == 0 and self.terminal is not None:
            return np.asarray(self.terminal(np.atleast_2d(np.asarray(x, dtype=float)), mu), dtype=float)
        j = self.nearest_flow(k, mu)
        value = self.eval_node(k, j, x)
        slope = self.mean_sensitivity(k, j, x)
        if slope is None:
            return value
        offset = np.asarray(mu.mean(), dtype=float) - self._means[j][k]
        return value + np.tensordot(offset, slope, axes=1)

    def pinned(self, j: int):
        """Closure (t, x, mu) -> node value of flow j, ignoring mu."""
        def closure(t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
            return self.eval_node(self._node_index(t), j, x)
        return closure

    def _node_index(self, t: float) -> int:
        return min(max(int(round(t / self.dt)), 0), self.n_steps) if self.dt > 0 else 0

    def __call__(self, t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        if t < -1e-12 or t > self.horizon + 1e-12:
            raise ConfigError(f"t={t} outside [0, {self.horizon}]")
        if self.n_steps == 0:
            return self._node_value(0, x, mu)
        pos = min(max(t / self.dt, 0.0), float(self.n_steps))
        k = min(int(np.floor(pos)), self.n_steps - 1)
        lam = pos - k
        lower = self._node_value(k, x, mu)
        if lam == 0.0:
            return lower
        upper = self._node_value(k + 1, x, mu)
        return (1.0 - lam) * lower + lam * upper
