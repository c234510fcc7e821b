"""
Closed-form field for the scalar linear-quadratic family

    F(x, mu, u) = u,  G(x, mu, u) = q x + q_bar mean(mu),  W0(x, mu) = p x + p_bar mean(mu).

Substituting W(t, x, mu) = a(t) x + b(t) mean(mu) into the master equation
gives the Riccati system a' = q - a^2, b' = q_bar - 2ab - b^2 with
a(0) = p, b(0) = p_bar.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import solve_ivp

from mfglab.coefficients import CoefficientSet
from mfglab.dynamics import FieldClosure, time_grid
from mfglab.errors import RiccatiBlowUpError, UnsupportedFamilyError
from mfglab.measures import EmpiricalMeasure

logger = logging.getLogger(__name__)

BLOW_UP = 1e8
FD_STEP = 5e-4


class LQParams(BaseModel):
    p: float = 1.0
    p_bar: float = 0.0
    q: float = 1.0
    q_bar: float = 0.0
    T: float = Field(1.0, ge=0.0)

    model_config = ConfigDict(allow_inf_nan=False)

    @property
    def monotone(self) -> bool:
        return monotone_flag(self)

    @classmethod
    def from_coefficients(cls, cs: CoefficientSet, T: float) -> "LQParams":
        if cs.name != "lq":
            raise UnsupportedFamilyError(f"the Riccati oracle only covers the lq family, not {cs.name!r}")
        return cls(T=T, **cs.params)


def monotone_flag(params: LQParams) -> bool:
    """W0 is L2-monotone and (F, G) jointly monotone."""
    return params.p >= 0 and params.p + params.p_bar >= 0 and params.q >= 0 and params.q + params.q_bar >= 0


def _rhs(t: float, y: np.ndarray, q: float, q_bar: float) -> list[float]:
    a, b = y
    return [q - a * a, q_bar - 2.0 * a * b - b * b]


def _blow_up(t: float, y: np.ndarray, q: float, q_bar: float) -> float:
    return BLOW_UP - max(abs(y[0]), abs(y[1]))


_blow_up.terminal = True


def _time_difference(fn, t: float, T: float, h: float = FD_STEP):
    """Second-order difference of fn at t: central inside, one-sided at the ends."""
    if T < 2.0 * h:
        return 0.0 * fn(t)
    if t - h < 0.0:
        nodes, coef = (t, t + h, t + 2.0 * h), (-1.5, 2.0, -0.5)
    elif t + h > T:
        nodes, coef = (t, t - h, t - 2.0 * h), (1.5, -2.0, 0.5)
    else:
        nodes, coef = (t - h, t + h), (-0.5, 0.5)
    return sum(c * fn(s) for c, s in zip(coef, nodes)) / h


@dataclass
class RiccatiPath:
    times: np.ndarray
    a: np.ndarray
    b: np.ndarray
    solution: Optional[object] = None  # scipy dense output

    def at(self, t: float) -> tuple[float, float]:
        if self.solution is None:
            return float(self.a[0]), float(self.b[0])
        a, b = self.solution(t)
        return float(a), float(b)

    @property
    def monotone(self) -> bool:
        return bool(np.all(self.a >= -1e-12) and np.all(self.a + self.b >= -1e-12))


def riccati_solve(params: LQParams, dt: float) -> RiccatiPath:
    grid = time_grid(params.T, dt)
    y0 = [params.p, params.p_bar]
    if params.T == 0:
        return RiccatiPath(grid, np.array([params.p]), np.array([params.p_bar]))
    sol = solve_ivp(
        _rhs,
        (0.0, params.T),
        y0,
        method="DOP853",
        t_eval=grid,
        dense_output=True,
        events=_blow_up,
        args=(params.q, params.q_bar),
        rtol=1e-10,
        atol=1e-12,
        max_step=dt,
    )
    if sol.status == 1:
        t_hit = float(sol.t_events[0][0])
        raise RiccatiBlowUpError(t_hit, BLOW_UP)
    if not sol.success:
        raise RiccatiBlowUpError(float(sol.t[-1]), BLOW_UP)
    logger.debug("Riccati solved on %d nodes: a(T)=%.6g b(T)=%.6g", len(grid), sol.y[0, -1], sol.y[1, -1])
    return RiccatiPath(grid, sol.y[0], sol.y[1], sol.sol)


def oracle_field(params: LQParams, path: Optional[RiccatiPath] = None, dt: float = 1e-3) -> FieldClosure:
    """W(t, x, mu) = a(t) x + b(t) mean(mu)."""
    path = riccati_solve(params, dt) if path is None else path

    def W(t: float, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        a, b = path.at(t)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return a * x + b * mu.mean()

    return W


def pde_residual(
    params: LQParams,
    path: RiccatiPath,
    xs: np.ndarray,
    means: np.ndarray,
    times: Optional[np.ndarray] = None,
    sigma_x: float = 0.0,
    field: Optional[FieldClosure] = None,
    h: float = FD_STEP,
) -> float:
    """
    max over the (t, x, mean) grid of
    |dW/dt + W dW/dx + W(t, m, m) dW/dm - sigma_x d2W/dx2 - (q x + q_bar m)|
    at Dirac measures, where dW/dm is the derivative along a rigid shift of
    the measure. Every derivative is a finite difference of `field`, the
    oracle by default.
    """
    field = oracle_field(params, path) if field is None else field
    times = path.times if times is None else times
    T = float(path.times[-1])
    x = np.asarray(xs, dtype=float)[:, None]

    def W(t: float, states: np.ndarray, m: float) -> np.ndarray:
        return np.asarray(field(t, states, EmpiricalMeasure.uniform([[m]])), dtype=float)

    worst = 0.0
    for t in times:
        t = float(t)
        for m in np.asarray(means, dtype=float):
            value = W(t, x, m)
            w_t = _time_difference(lambda s: W(s, x, m), t, T, h)
            w_x = (W(t, x + h, m) - W(t, x - h, m)) / (2.0 * h)
            w_xx = (W(t, x + h, m) - 2.0 * value + W(t, x - h, m)) / h**2
            w_m = (W(t, x, m + h) - W(t, x, m - h)) / (2.0 * h)
            mean_drift = W(t, np.array([[m]]), m)[0, 0]
            residual = (
                w_t + value * w_x + mean_drift * w_m - sigma_x * w_xx
                - (params.q * x + params.q_bar * m)
            )
            worst = max(worst, float(np.max(np.abs(residual))))
    return worst
