from .coding import apply_margins, make_code, mu_rate, restoration_mode
from .fluid import feasibility_check, integrate
from .mdp_sim import monte_carlo, simulate_path
from .optimizer import RegenerationOptimizer, minimal_feasible, solve, sweep
from .pontryagin import adjoint_backward, extract_policy, p0_closed_form, pure_activation_solve

__all__ = [
    "RegenerationOptimizer",
    "adjoint_backward",
    "apply_margins",
    "extract_policy",
    "feasibility_check",
    "integrate",
    "make_code",
    "minimal_feasible",
    "monte_carlo",
    "mu_rate",
    "p0_closed_form",
    "pure_activation_solve",
    "restoration_mode",
    "simulate_path",
    "solve",
    "sweep",
]
