from typing import Literal, Optional
from pydantic import BaseModel, Field, computed_field, field_validator, model_validator


# --- Scenario configuration ---

class Component(BaseModel):
    kind: Literal["gaussian", "uniform"] = "gaussian"
    mean: list[float] | float = 0.0
    scale: float = Field(1.0, ge=0.0)  # std for gaussian, half-width for uniform


class SamplerSpec(BaseModel):
    components: list[Component] = Field(default_factory=lambda: [Component()])
    mixture_weights: Optional[list[float]] = None
    heavy_tail_df: Optional[float] = Field(None, gt=0.0)  # Student-t tails when set
    n_atoms: int = Field(64, ge=1)

    @model_validator(mode="after")
    def check_mixture(self):
        if not self.components:
            raise ValueError("sampler needs at least one component")
        if self.mixture_weights is not None:
            if len(self.mixture_weights) != len(self.components):
                raise ValueError("mixture_weights must match components")
            if any(w < 0 for w in self.mixture_weights) or sum(self.mixture_weights) <= 0:
                raise ValueError("mixture_weights must be nonnegative with positive sum")
        return self


RegimeKind = Literal[
    "joint_monotone",
    "weak_strong_in_x",
    "strong_in_x",
    "weak_strong_in_w",
    "strong_in_w",
]


class RegimeSpec(BaseModel):
    kind: RegimeKind = "joint_monotone"
    alpha: Optional[float] = Field(None, gt=0.0)
    L: Optional[float] = Field(None, ge=0.0)
    a0: Optional[float] = None


class CoefficientSpec(BaseModel):
    family: str = "lq"
    params: dict[str, float] = Field(default_factory=dict)
    regime: Optional[RegimeSpec] = None
    gamma: float = Field(1.0, gt=0.0, le=1.0)
    growth_constant: Optional[float] = Field(None, gt=0.0)


class ThetaSpec(BaseModel):
    drift: str = "zero"
    drift_rate: float = 1.0
    diffusion: str = "zero"
    diffusion_scale: float = 1.0
    theta0: list[float] = Field(default_factory=lambda: [0.0])


class PicardSpec(BaseModel):
    tol: float = Field(1e-6, gt=0.0)
    max_iter: int = Field(50, ge=1)


class ProbeSpec(BaseModel):
    sampler: SamplerSpec = Field(default_factory=SamplerSpec)
    n_pairs: int = Field(200, ge=1)
    tolerance: float = Field(1e-9, ge=0.0)
    n_growth_samples: int = Field(200, ge=1)


class EstimatesSpec(BaseModel):
    perturbation_sizes: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3])
    delta_mus: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])
    slack: float = Field(0.2, ge=0.0)
    flow_index: int = Field(0, ge=0)

    @field_validator("perturbation_sizes")
    @classmethod
    def positive_sizes(cls, sizes: list[float]) -> list[float]:
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ValueError("need at least two positive perturbation sizes")
        return sizes

    @field_validator("delta_mus")
    @classmethod
    def nonnegative_deltas(cls, deltas: list[float]) -> list[float]:
        if any(d < 0 for d in deltas):
            raise ValueError("delta_mus must be nonnegative")
        return deltas


class RegularizeSpec(BaseModel):
    base: str = "cubic"
    params: dict[str, float] = Field(default_factory=dict)
    epsilons: list[float] = Field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    growth_constant: Optional[float] = Field(None, gt=0.0)
    shift: float = 0.0
    compact: SamplerSpec = Field(
        default_factory=lambda: SamplerSpec(components=[Component(kind="uniform", scale=1.0)], n_atoms=64)
    )
    n_pairs: int = Field(200, ge=1)
    solver_tol: float = Field(1e-10, gt=0.0)
    max_iter: int = Field(10_000, ge=1)

    @model_validator(mode="after")
    def check_epsilons(self):
        eps = self.epsilons
        if not eps or any(e <= 0 for e in eps):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.growth_constant is not None and eps[0] >= 1.0 / self.growth_constant:
            raise ValueError(
                f"epsilon {eps[0]} violates epsilon < 1/C_F = {1.0 / self.growth_constant:.6g}"
            )
        return self


class OracleGridSpec(BaseModel):
    dts: list[float] = Field(default_factory=lambda: [0.02, 0.01])
    particles: list[int] = Field(default_factory=lambda: [2_500, 10_000])
    replicas: list[int] = Field(default_factory=lambda: [1_000])


class ScenarioConfig(BaseModel):
    name: str = "scenario"
    dim: int = Field(1, ge=1)
    T: float = Field(1.0, ge=0.0)
    dt: float = Field(0.01, gt=0.0)
    N: int = Field(10_000, ge=1)
    M: int = Field(1_000, ge=1)
    sigma_x: float = Field(0.0, ge=0.0)
    beta: float = Field(0.0, ge=0.0)
    stencil_size: int = Field(9, ge=3)
    # offset of the satellite flows used for the measure derivative; 0 disables them
    measure_shift: float = Field(0.25, ge=0.0)
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    coefficients: CoefficientSpec = Field(default_factory=CoefficientSpec)
    theta: ThetaSpec = Field(default_factory=ThetaSpec)
    initial_measures: list[SamplerSpec] = Field(default_factory=lambda: [SamplerSpec()])
    picard: PicardSpec = Field(default_factory=PicardSpec)
    probe: ProbeSpec = Field(default_factory=ProbeSpec)
    estimates: EstimatesSpec = Field(default_factory=EstimatesSpec)
    regularize: RegularizeSpec = Field(default_factory=RegularizeSpec)
    oracle_compare: OracleGridSpec = Field(default_factory=OracleGridSpec)

    @model_validator(mode="after")
    def check_grid(self):
        steps = round(self.T / self.dt)
        if abs(steps * self.dt - self.T) > 1e-12:
            raise ValueError(f"dt={self.dt} does not divide T={self.T}")
        if not self.initial_measures:
            raise ValueError("at least one initial measure is required")
        if len(self.theta.theta0) not in (1, self.dim):
            raise ValueError("theta0 must have length 1 or dim")
        if self.stencil_size % 2 == 0:
            raise ValueError("stencil_size must be odd so the stencil contains the node center")
        return self

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)


# --- Reports ---

class MonotonicityReport(BaseModel):
    min_quotient: float
    n_pairs: int
    worst_pair_seed: int
    worst_pair_index: int
    tolerance: float

    @computed_field
    @property
    def passed(self) -> bool:
        return self.min_quotient >= -self.tolerance


class WeakStrongFit(BaseModel):
    direction: Literal["in_X", "in_W"]
    alpha_hat: float
    L_hat: float
    n_pairs: int
    feasible: bool


class GrowthCertificate(BaseModel):
    growth_constant: float
    max_ratio: float
    n_samples: int

    @computed_field
    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.growth_constant


class ProbeReport(BaseModel):
    w0: MonotonicityReport
    joint: MonotonicityReport
    fit_in_x: Optional[WeakStrongFit] = None
    fit_in_w: Optional[WeakStrongFit] = None
    a0: Optional[float] = None
    growth: GrowthCertificate

    @computed_field
    @property
    def passed(self) -> bool:
        return self.w0.passed and self.joint.passed and self.growth.passed


class FlowStatistics(BaseModel):
    second_moment_growth: float
    time_continuity_ratio: float
    dt: float
    N: int


class ZRow(BaseModel):
    t: float
    min_value: float
    min_quotient: float
    argmin_pair_seed: int


class ZReport(BaseModel):
    min_value: float
    min_quotient: float
    argmin_time: float
    argmin_pair_seed: int
    n_samples: int
    tolerance_used: float
    coupling: Literal["index", "optimal"] = "index"
    rows: list[ZRow] = Field(default_factory=list)

    @computed_field
    @property
    def passed(self) -> bool:
        return self.min_value >= -self.tolerance_used


class EstimateRow(BaseModel):
    perturbation_size: float
    diff_W: float
    diff_X: Optional[float] = None
    ratio_W: float
    ratio_X: Optional[float] = None


class EstimateReport(BaseModel):
    harness: Literal["state", "measure"]
    regime: str
    gamma: float
    predicted_exponent: float
    fitted_exponent: float
    ratio_spread: float
    # rise of diff / size^predicted as the perturbation shrinks
    ratio_growth: float
    slack: float
    rows: list[EstimateRow]

    @computed_field
    @property
    def passed(self) -> bool:
        return self.fitted_exponent >= self.predicted_exponent - self.slack and self.ratio_growth <= self.slack


class ResidualRow(BaseModel):
    interval: int
    s: float
    mean_residual: float
    std_error: float


class LipschitzRow(BaseModel):
    t: float
    quotient: float


class SweepRow(BaseModel):
    epsilon: float
    sup_error: float
    lipschitz_quotient: float
    growth_ratio: float


class RegularizationCertificate(BaseModel):
    base: str
    growth_constant: Optional[float]
    rows: list[SweepRow]
    lipschitz_ok: list[bool]
    growth_bounds: list[Optional[float]]
    growth_ok: list[Optional[bool]]
    sup_error_decreasing: bool


class OracleCompareRow(BaseModel):
    dt: float
    N: int
    M: int
    sup_error: float
    iterations: int
    converged: bool


class Manifest(BaseModel):
    tool: str = "mfglab"
    version: str
    command: str
    config_hash: str
    seed: int
    config: dict
