"""Exceptions raised by the regeneration solver and simulator"""


class RegenerationError(Exception):
    """Base class for all solver and simulator errors"""


class InvalidTriple(RegenerationError, ValueError):
    """Code triple violates n > d > k > 0"""


class NonPositiveSize(RegenerationError, ValueError):
    """State size B must be positive"""


class IndexOutOfRange(RegenerationError, ValueError):
    """Compartment index outside the admissible range"""


class ControlOutOfRange(RegenerationError, ValueError):
    """Activation control outside [0, 1]"""


class StepTooLarge(RegenerationError, ValueError):
    """Integration step exceeds the horizon"""


class DimensionMismatch(RegenerationError, ValueError):
    """State and costate vectors do not match the code's repair degree"""


class GridMismatch(RegenerationError, ValueError):
    """Trajectory grid does not span [0, T] for the given parameters"""


class NotPureActivation(RegenerationError, ValueError):
    """Analytic solution requested with a nonzero transfer cost"""


class NonFiniteState(RegenerationError, RuntimeError):
    """Integration produced NaN or infinite values"""


class MultipleIntervals(RegenerationError, RuntimeError):
    """Switching function crosses the threshold on more than one interval"""


class Infeasible(RegenerationError, RuntimeError):
    """No admissible control meets the path and terminal constraints"""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class GammaDiscoveryFailed(RegenerationError, RuntimeError):
    """Doubling search did not find a multiplier reaching the target"""


class NoConvergence(RegenerationError, RuntimeError):
    """Multiplier bisection hit its iteration cap"""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class ExtremaOutOfOrder(RegenerationError, RuntimeError):
    """Interior maximum of the switching function precedes its minimum"""
