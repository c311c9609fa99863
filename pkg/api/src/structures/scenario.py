"""JSON scenario files read by the command line"""

from typing import Callable, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..services.coding import check_initial_condition, make_code
from .schemas import CodeSpec, CodeVariant, SimConfig, SystemParams

BITS_PER_GIGABYTE = 8e9
GBIT_PER_GIGABYTE = 8.0

DimensionTarget = Literal["T", "lambda", "d"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CodeSection(_Section):
    variant: CodeVariant = CodeVariant.MBR
    n: int
    k: int
    d: int
    B_gigabytes: float


class RatesSection(_Section):
    mu_per_s: float = Field(..., ge=0)
    zeta_per_s: float = Field(..., ge=0)
    lambda_per_s: Optional[float] = Field(default=None, gt=0)
    throughput_gbit_per_s: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def one_transfer_rate(self) -> "RatesSection":
        if (self.lambda_per_s is None) == (self.throughput_gbit_per_s is None):
            raise ValueError("give exactly one of lambda_per_s or throughput_gbit_per_s")
        return self

    def transfer_rate(self, beta_gigabytes: float) -> float:
        """Chunk transfer completion rate: one transfer moves beta at the given throughput"""
        if self.lambda_per_s is not None:
            return self.lambda_per_s
        return self.throughput_gbit_per_s / (GBIT_PER_GIGABYTE * beta_gigabytes)


class CostsSection(_Section):
    c1_dollars: float = Field(default=0.0, ge=0)
    c2_dollars_per_gigabyte: Optional[float] = Field(default=None, ge=0)
    c2_dollars_per_bit: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def one_transfer_cost(self) -> "CostsSection":
        if self.c2_dollars_per_gigabyte is not None and self.c2_dollars_per_bit is not None:
            raise ValueError("give at most one of c2_dollars_per_gigabyte or c2_dollars_per_bit")
        return self

    @property
    def c2_per_gigabyte(self) -> float:
        if self.c2_dollars_per_bit is not None:
            return self.c2_dollars_per_bit * BITS_PER_GIGABYTE
        return self.c2_dollars_per_gigabyte or 0.0


class MarginsSection(_Section):
    eps1: float = Field(default=0.0, ge=0)
    eps2: float = Field(default=0.0, ge=0)


class SolverSection(_Section):
    epsilon: Optional[float] = Field(default=None, gt=0)
    step_fraction: Optional[float] = Field(default=None, gt=0, le=1)


class SimSection(_Section):
    seed: Optional[int] = Field(default=None, ge=0, lt=2**64)
    runs: Optional[int] = Field(default=None, ge=1)
    operational_failures: bool = False
    scale: int = Field(default=1, ge=1)


class ScenarioConfig(_Section):
    """One regeneration instance: code, rates, costs, deadline and fault size"""

    code: CodeSection
    rates: RatesSection
    costs: CostsSection = CostsSection()
    horizon_s: float = Field(..., gt=0)
    failed_servers: int = Field(..., gt=0)
    margins: MarginsSection = MarginsSection()
    solver: SolverSection = SolverSection()
    sim: SimSection = SimSection()

    @model_validator(mode="after")
    def check_fault_size(self) -> "ScenarioConfig":
        limit = self.code.n - self.code.d
        if self.failed_servers > limit:
            raise ValueError(
                f"failed_servers={self.failed_servers} exceeds n - d = {limit}; regeneration impossible"
            )
        return self

    def build_code(self) -> CodeSpec:
        return make_code(self.code.variant, self.code.n, self.code.k, self.code.d, self.code.B_gigabytes)

    def build(self) -> Tuple[SystemParams, CodeSpec]:
        code = self.build_code()
        params = SystemParams(
            mu=self.rates.mu_per_s,
            lam=self.rates.transfer_rate(code.beta),
            zeta=self.rates.zeta_per_s,
            c1=self.costs.c1_dollars,
            c2=self.costs.c2_per_gigabyte,
            T=self.horizon_s,
            x_d0=float(self.code.n - self.failed_servers),
            eps1=self.margins.eps1,
            eps2=self.margins.eps2,
        )
        check_initial_condition(params, code)
        return params, code

    def step(self) -> Optional[float]:
        if self.solver.step_fraction is None:
            return None
        return self.solver.step_fraction * self.horizon_s

    def sim_config(
        self,
        seed: Optional[int] = None,
        runs: Optional[int] = None,
        operational_failures: Optional[bool] = None,
        scale: Optional[int] = None,
        default_seed: int = 0,
        default_runs: int = 1,
    ) -> SimConfig:
        """Merge command-line overrides, scenario values and process defaults"""

        def pick(*values):
            return next(v for v in values if v is not None)

        return SimConfig(
            seed=pick(seed, self.sim.seed, default_seed),
            runs=pick(runs, self.sim.runs, default_runs),
            operational_failures=pick(operational_failures, self.sim.operational_failures),
            scale=pick(scale, self.sim.scale),
        )

    def dimension_builder(self, target: DimensionTarget) -> Callable[[float], Tuple[SystemParams, CodeSpec]]:
        """Map a candidate value of the target to the rebuilt instance, others held fixed"""
        if target == "T":
            return lambda value: self.model_copy(update={"horizon_s": value}).build()
        if target == "lambda":

            def with_rate(value: float) -> Tuple[SystemParams, CodeSpec]:
                params, code = self.build()
                return params.with_changes(lam=value), code

            return with_rate
        if target == "d":

            def with_degree(value: float) -> Tuple[SystemParams, CodeSpec]:
                code = self.code.model_copy(update={"d": int(value)})
                return self.model_copy(update={"code": code}).build()

            return with_degree
        raise ValueError(f"Unknown dimension target {target!r}")
