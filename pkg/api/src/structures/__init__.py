from .schemas import (
    CodeSpec,
    CodeVariant,
    RestorationMode,
    SimConfig,
    SolveResult,
    SystemParams,
    ThresholdPolicy,
)
from .trajectories import CostateTrajectory, FluidState, FluidTrajectory

__all__ = [
    "CodeSpec",
    "CodeVariant",
    "CostateTrajectory",
    "FluidState",
    "FluidTrajectory",
    "RestorationMode",
    "SimConfig",
    "SolveResult",
    "SystemParams",
    "ThresholdPolicy",
]
