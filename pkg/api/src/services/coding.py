"""Code parameterization, constraint margins and restoration-mode classification"""

from typing import Tuple

import numpy as np
from loguru import logger

from ..core.errors import IndexOutOfRange, InvalidTriple, NonPositiveSize
from ..structures.schemas import CodeSpec, CodeVariant, RestorationMode, SystemParams


def make_code(variant: CodeVariant, n: int, k: int, d: int, B: float) -> CodeSpec:
    """Build a repairing code with MBR or MSR chunk sizes

    Args:
        variant: MBR or MSR operating point
        n, k, d: Code triple, n > d > k > 0
        B: State size in gigabytes

    Returns:
        CodeSpec with alpha (stored chunk) and beta (repair transfer) in gigabytes
    """
    variant = CodeVariant(variant)
    if not n > d > k > 0:
        raise InvalidTriple(f"Code triple must satisfy n > d > k > 0, got (n={n}, k={k}, d={d})")
    if B <= 0:
        raise NonPositiveSize(f"State size must be positive, got B={B}")

    if variant is CodeVariant.MBR:
        # beta = 2B / (k(2d - k + 1)), alpha = d * beta
        beta = 2.0 * B / (k * (2 * d - k + 1))
        alpha = d * beta
    else:
        alpha = B / k
        beta = alpha / (d - k + 1)

    logger.debug(f"{variant.value} code (n={n}, k={k}, d={d}): alpha={alpha:.6g} GB, beta={beta:.6g} GB")
    return CodeSpec(variant=variant, n=n, k=k, d=d, B=B, alpha=alpha, beta=beta)


def restoration_mode(x_d: float, code: CodeSpec) -> RestorationMode:
    """Classify what can still be done with x_d operational repair servers"""
    if x_d >= code.d:
        return RestorationMode.REGENERATION
    if x_d >= code.k:
        return RestorationMode.FULL_RESTORATION_ONLY
    return RestorationMode.STATE_LOST


def apply_margins(n: float, d: float, eps1: float, eps2: float) -> Tuple[float, float]:
    """Tightened targets (n_tight, d_tight) = ((1 + eps2) n, (1 + eps1) d)"""
    return (1.0 + eps2) * n, (1.0 + eps1) * d


def tightened(params: SystemParams, code: CodeSpec) -> Tuple[float, float]:
    return apply_margins(code.n, code.d, params.eps1, params.eps2)


def mu_rate(k_index: int, params: SystemParams, code: CodeSpec) -> float:
    """Rate mu_k = mu + lambda (d - k) at which nodes leave compartment k"""
    if not 0 <= k_index <= code.d:
        raise IndexOutOfRange(f"Compartment index {k_index} outside [0, {code.d}]")
    return params.mu + params.lam * (code.d - k_index)


def mu_rates(params: SystemParams, code: CodeSpec) -> np.ndarray:
    """Vector (mu_0, ..., mu_d)"""
    return params.mu + params.lam * (code.d - np.arange(code.d + 1, dtype=float))


def check_initial_condition(params: SystemParams, code: CodeSpec) -> None:
    """d <= X_d(0) <= n"""
    if not code.d <= params.x_d0 <= code.n:
        raise ValueError(
            f"Initial operational servers must satisfy d <= x_d0 <= n, "
            f"got x_d0={params.x_d0} with d={code.d}, n={code.n}"
        )
