from enum import Enum
from typing import ClassVar, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .trajectories import CostateTrajectory, FluidTrajectory


class CodeVariant(str, Enum):
    MBR = "MBR"
    MSR = "MSR"


class RestorationMode(str, Enum):
    STATE_LOST = "state_lost"
    FULL_RESTORATION_ONLY = "full_restoration_only"
    REGENERATION = "regeneration"

    @property
    def rank(self) -> int:
        """Position in the order StateLost < FullRestorationOnly < Regeneration"""
        return list(RestorationMode).index(self)


class Binding(str, Enum):
    TERMINAL = "terminal_constraint"
    PATH = "path_constraint"
    NONE = "none"


class ExtremaKind(str, Enum):
    EMPTY = "empty"
    MAX_ONLY = "max_only"
    MIN_ONLY = "min_only"  # c2 = 0 with an interior minimum
    MIN_MAX = "min_max"


class CodeSpec(BaseModel):
    """Repairing code triple (n, k, d) with state size and chunk sizes in gigabytes"""

    model_config = ConfigDict(frozen=True)

    variant: CodeVariant
    n: int
    k: int
    d: int
    B: float = Field(..., description="State size in gigabytes")
    alpha: float = Field(..., description="Per-server stored chunk size in gigabytes")
    beta: float = Field(..., description="Per-repair transfer size in gigabytes")

    @model_validator(mode="after")
    def check_sizes(self) -> "CodeSpec":
        if not self.n > self.d > self.k > 0:
            raise ValueError(f"code triple must satisfy n > d > k > 0, got {self.triple}")
        if self.alpha <= 0 or self.beta <= 0 or self.beta > self.alpha * (1 + 1e-12):
            raise ValueError(
                f"chunk sizes must satisfy 0 < beta <= alpha, got alpha={self.alpha}, beta={self.beta}"
            )
        return self

    @property
    def triple(self) -> Tuple[int, int, int]:
        return self.n, self.k, self.d


class SystemParams(BaseModel):
    """Rates, costs, deadline and initial condition of a regeneration instance"""

    model_config = ConfigDict(frozen=True)

    mu: float = Field(..., ge=0, description="Repair-server failure rate (1/s)")
    lam: float = Field(..., gt=0, description="Chunk transfer completion rate (1/s)")
    zeta: float = Field(..., ge=0, description="Maximum activation rate (servers/s)")
    c1: float = Field(default=0.0, ge=0, description="Activation cost (dollars/server)")
    c2: float = Field(default=0.0, ge=0, description="Transfer cost (dollars/gigabyte)")
    T: float = Field(..., gt=0, description="Deadline (s)")
    x_d0: float = Field(..., ge=0, description="Operational repair servers at t=0")
    eps1: float = Field(default=0.0, ge=0, description="Relative margin on d")
    eps2: float = Field(default=0.0, ge=0, description="Relative margin on n")

    def with_changes(self, **changes) -> "SystemParams":
        """Copy with fields replaced, re-running validation"""
        return SystemParams(**{**self.model_dump(), **changes})


class ThresholdPolicy(BaseModel):
    """Bang-bang activation: u = 1 on (t_on, t_off), 0 elsewhere"""

    model_config = ConfigDict(frozen=True)
    piecewise_constant: ClassVar[bool] = True

    t_on: float = Field(default=0.0, ge=0)
    t_off: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def check_order(self) -> "ThresholdPolicy":
        if self.t_on > self.t_off:
            raise ValueError(f"t_on={self.t_on} exceeds t_off={self.t_off}")
        return self

    @classmethod
    def null(cls) -> "ThresholdPolicy":
        return cls(t_on=0.0, t_off=0.0)

    @property
    def is_null(self) -> bool:
        return self.t_on == self.t_off

    @property
    def duration(self) -> float:
        return self.t_off - self.t_on

    @property
    def switch_epochs(self) -> Tuple[float, ...]:
        return () if self.is_null else (self.t_on, self.t_off)

    def __call__(self, t: float) -> float:
        return 1.0 if self.t_on < t < self.t_off else 0.0


class FeasibilityReport(BaseModel):
    feasible: bool
    x_d_terminal: float
    x_d_min: float
    mu_bar: float = Field(..., description="min(mu_bar_terminal, mu_bar_path)")
    mu_bar_terminal: float
    mu_bar_path: float
    binding: Binding
    n_tight: float
    d_tight: float
    x_d_terminal_closed_form: float
    closed_form_feasible: bool


class ExtremaSet(BaseModel):
    kind: ExtremaKind
    t_m: Optional[float] = None
    m: Optional[float] = None
    t_M: Optional[float] = None
    M: Optional[float] = None


class PureActivationDiagnostics(BaseModel):
    mu_crit: float
    case: int = Field(..., description="1, 2 or 3: which branch of the analytic solution applied")
    t_min: Optional[float] = Field(None, description="Argmin of p0 over the real line; None when mu = 0")
    m_value: float
    z_on: Optional[float] = None
    z_off: Optional[float] = None


class SolveResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    gamma_star: float
    policy: ThresholdPolicy
    cost: float
    relaxed_cost: float
    x_d_terminal: float
    iterations: int
    converged: bool
    path_constraint_ok: bool
    n_tight: float
    d_tight: float
    gamma_left: float
    gamma_right: float
    feasibility: FeasibilityReport
    trajectory: FluidTrajectory = Field(..., exclude=True)
    costate: Optional[CostateTrajectory] = Field(default=None, exclude=True)


class DimensionResult(BaseModel):
    target: str
    value: float
    lower: float
    upper: float
    evaluations: int
    mu_bar: float
    report: FeasibilityReport


class SweepCell(BaseModel):
    c1: float
    c2: float
    J_star: Optional[float] = None
    gamma_star: Optional[float] = None
    t_on: Optional[float] = None
    t_off: Optional[float] = None
    iterations: Optional[int] = None
    converged: bool = False
    error: Optional[str] = None


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int = Field(..., ge=0, lt=2**64)
    runs: int = Field(..., ge=1)
    record_grid: Tuple[float, ...] = ()
    operational_failures: bool = False
    scale: int = Field(default=1, ge=1)


class Estimate(BaseModel):
    """Sample mean with its uncertainty"""

    value: float
    std_error: float
    half_width: float = Field(..., description="95% normal-approximation half-width")


class SimStats(BaseModel):
    runs: int
    p_terminal_success: Estimate
    p_path_violation: Estimate
    mean_cost: Estimate
    mean_terminal_xd: Estimate
    absorbed_fraction: float
    mean_activations: float
    mean_failures: float
    mean_acquisitions: float
    record_grid: List[float]
    mean_trajectory: List[List[float]]
