"""Array-valued results of the fluid and costate integrations"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FluidState:
    """x[k] is the (real-valued) number of repair nodes holding k chunks"""

    x: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError(f"state must be a vector of d+1 >= 2 counts, got shape {x.shape}")
        if not np.all(np.isfinite(x)) or np.any(x < 0):
            raise ValueError(f"state counts must be finite and nonnegative, got {x}")
        object.__setattr__(self, "x", x)

    @classmethod
    def initial(cls, d: int, x_d0: float) -> "FluidState":
        """All mass in the operational compartment, as right after a correlated fault"""
        x = np.zeros(d + 1)
        x[d] = x_d0
        return cls(x=x, time=0.0)

    @property
    def d(self) -> int:
        return self.x.size - 1

    @property
    def x_d(self) -> float:
        return float(self.x[-1])


@dataclass(frozen=True)
class FluidTrajectory:
    grid: np.ndarray  # (N+1,) strictly increasing, 0 .. T
    states: np.ndarray  # (N+1, d+1)
    control: np.ndarray  # (N,) mean control value on each grid interval
    unclamped_min: float = 0.0  # smallest state entry before clamping at zero

    @property
    def x_d(self) -> np.ndarray:
        return self.states[:, -1]

    @property
    def x_d_terminal(self) -> float:
        return float(self.states[-1, -1])

    @property
    def x_d_min(self) -> float:
        return float(self.states[:, -1].min())

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def state(self, i: int) -> FluidState:
        return FluidState(x=self.states[i], time=float(self.grid[i]))

    def state_at(self, t: float) -> FluidState:
        """Linear interpolation of the state between grid points"""
        x = np.array([np.interp(t, self.grid, col) for col in self.states.T])
        return FluidState(x=np.maximum(x, 0.0), time=float(t))


@dataclass(frozen=True)
class CostateTrajectory:
    grid: np.ndarray  # (N+1,) increasing, 0 .. T
    p: np.ndarray  # (N+1, d+1)
    dp: np.ndarray  # (N+1, d+1) time derivative of p on the grid
    gamma: float

    @property
    def p0(self) -> np.ndarray:
        return self.p[:, 0]

    @property
    def dp0(self) -> np.ndarray:
        return self.dp[:, 0]
