"""
Exception hierarchy for mfglab.
Every error carries the exit code the CLI reports for it.
"""
from typing import Optional


class MfgLabError(Exception):
    exit_code = 1

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "message": str(self),
            "exit_code": self.exit_code,
        }


class ConfigError(MfgLabError):
    exit_code = 2


class UnknownFamilyError(ConfigError):
    pass


class MonotonicityGateError(MfgLabError):
    exit_code = 3


class MissingFieldError(MfgLabError):
    exit_code = 4


class UnsupportedFamilyError(MfgLabError):
    exit_code = 5


class MeasureError(MfgLabError, ValueError):
    pass


class DimensionError(MeasureError):
    pass


class ResolventError(MfgLabError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} sweeps)")
        self.residual = residual
        self.iterations = iterations

    def to_dict(self) -> dict:
        data = super().to_dict()
        data["residual"] = self.residual
        return data


class SimulationError(MfgLabError):
    def __init__(self, s: float, particle: int, message: str = "non-finite drift"):
        super().__init__(f"{message} at s={s:.6g}, particle {particle}")
        self.s = s
        self.particle = particle

    def to_dict(self) -> dict:
        data = super().to_dict()
        data.update({"s": self.s, "particle": self.particle})
        return data


class RiccatiBlowUpError(MfgLabError):
    def __init__(self, time: float, bound: float):
        super().__init__(f"Riccati solution exceeded {bound:.0e} at t={time:.6g}")
        self.time = time


class FieldNotConvergedError(MfgLabError):
    def __init__(self, increment: Optional[float] = None):
        detail = "" if increment is None else f" (last increment {increment:.3e})"
        super().__init__("decoupling field is not converged" + detail)
