# earlystop/app/complexity.py
import logging
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, DegenerateKernelError, NumericalError
from .kernels import DecayKind, EigendecayModel, EmpiricalKernel
from .schemas import CriticalRadius, FrozenModel
from .settings import get_settings

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# scipy stops on rtol alone; radii can sit far below any absolute tolerance
_XTOL = float(np.finfo(float).tiny)


class EmpiricalComplexity(FrozenModel):
    eigenvalues: np.ndarray
    n: int

    @classmethod
    def from_kernel(cls, K: EmpiricalKernel) -> "EmpiricalComplexity":
        return cls(eigenvalues=K.eigenvalues, n=K.n)

    @property
    def degenerate(self) -> bool:
        return not np.any(self.eigenvalues > 0)


class PopulationComplexity(FrozenModel):
    decay: EigendecayModel
    n: int
    truncation: int = 100_000


def _as_output(values: np.ndarray, scalar: bool) -> ArrayLike:
    return float(values) if scalar else values


def empirical_complexity(ec: EmpiricalComplexity, eps: ArrayLike) -> ArrayLike:
    """sqrt((1/n) sum_i min{lambda_i, eps^2}); vectorized over eps."""
    e = np.asarray(eps, dtype=float)
    if np.any(e < 0):
        raise ConfigurationError("Complexity radius must be nonnegative")
    sq = np.minimum(ec.eigenvalues, (e ** 2)[..., None]).sum(axis=-1) / ec.n
    return _as_output(np.sqrt(sq), e.ndim == 0)


def scaled_complexity(ec: EmpiricalComplexity, eta: ArrayLike) -> ArrayLike:
    """h(eta) = eta * R(1/sqrt(eta)) = sqrt((1/n) sum_i min{eta^2 lambda_i, eta}); h(0) = 0."""
    e = np.asarray(eta, dtype=float)
    sq = np.minimum(ec.eigenvalues * (e ** 2)[..., None], e[..., None]).sum(axis=-1) / ec.n
    return _as_output(np.sqrt(sq), e.ndim == 0)


@lru_cache(maxsize=32)
def _decay_table(decay: EigendecayModel, truncation: int) -> np.ndarray:
    count = truncation if decay.rank is None else min(truncation, decay.rank)
    return decay.eigenvalues(count)


def _polynomial_tail(decay: EigendecayModel, truncation: int, eps_sq: float) -> float:
    """Integral bound on sum_{j > J} min{C j^(-2nu), eps^2}."""
    C, p = decay.C, 2.0 * decay.nu
    J = float(truncation)
    if C * J ** (-p) <= eps_sq:
        return C * J ** (1.0 - p) / (p - 1.0)
    j0 = (C / eps_sq) ** (1.0 / p)
    return eps_sq * (j0 - J) + C * j0 ** (1.0 - p) / (p - 1.0)


def population_complexity(pc: PopulationComplexity, eps: float) -> float:
    decay = pc.decay
    if decay.kind == DecayKind.POLYNOMIAL and decay.nu <= 0.5:
        raise ConfigurationError("Polynomial decay with nu <= 1/2 is not summable", nu=decay.nu)
    if eps < 0:
        raise ConfigurationError("Complexity radius must be nonnegative")
    eps_sq = float(eps) ** 2
    total = float(np.minimum(_decay_table(decay, pc.truncation), eps_sq).sum())
    if decay.kind == DecayKind.POLYNOMIAL and eps_sq > 0:
        total += _polynomial_tail(decay, pc.truncation, eps_sq)
    return float(np.sqrt(total / pc.n))


# ---------------- ROOT FINDING ---------------- #

def bisect_crossing(g: Callable[[float], float], start: float, lower: float = 1e-12,
                    max_iter: Optional[int] = None) -> Tuple[float, int]:
    """Locate the single sign change of g from negative to positive on (0, inf).

    The upper end of the bracket doubles from `start` until g turns positive and the
    lower end halves from `lower` until g turns negative; scipy halves the bracket.
    Returns (root, iterations used).
    """
    max_iter = max_iter or get_settings().solver.bisection_max_iter
    hi = start
    grow = 0
    while g(hi) <= 0:
        hi *= 2.0
        grow += 1
        if grow > 2000:
            raise NumericalError("Could not bracket the crossing", upper=hi)

    lo = min(lower, 0.5 * hi)
    shrink = 0
    while g(lo) >= 0:
        lo *= 0.5
        shrink += 1
        if lo == 0.0 or shrink > 2000:
            raise NumericalError("Could not bracket the crossing from below", lower=lo)

    root, result = optimize.bisect(g, lo, hi, xtol=_XTOL, maxiter=max_iter, full_output=True, disp=False)
    return float(root), int(result.iterations)


def _solve_radius(g: Callable[[float], float], scale: Callable[[float], float], start: float,
                  what: str) -> CriticalRadius:
    """Residual is reported relative to the quadratic side of the fixed-point equation."""
    tol_root = get_settings().tolerances.root
    value, iterations = bisect_crossing(g, start)
    residual = abs(g(value)) / scale(value)
    if residual > tol_root:
        raise NumericalError(f"{what} residual above tolerance", residual=residual, iterations=iterations)
    logger.debug("%s = %.12g after %d bisection steps (residual %.3g)", what, value, iterations, residual)
    return CriticalRadius(value=value, residual=residual, solver_iterations=iterations)


def critical_empirical_radius(ec: EmpiricalComplexity, sigma: float,
                              prefactor: Optional[float] = None) -> CriticalRadius:
    """Unique eps > 0 with R(eps) = eps^2 / (2 e sigma)."""
    if not sigma > 0:
        raise ConfigurationError("Noise level sigma must be positive", sigma=sigma)
    if ec.degenerate:
        raise DegenerateKernelError("All empirical eigenvalues vanish; no critical radius exists")
    c = prefactor or get_settings().constants.empirical_prefactor

    def g(eps: float) -> float:
        return eps * eps / (c * sigma) - empirical_complexity(ec, eps)

    return _solve_radius(g, lambda eps: eps * eps / (c * sigma), float(np.sqrt(ec.eigenvalues[0])) + 1.0,
                         "critical empirical radius")


def critical_population_radius(pc: PopulationComplexity, sigma: float,
                               prefactor: Optional[float] = None) -> CriticalRadius:
    """Unique eps > 0 with 40 R(eps) = eps^2 / sigma."""
    if not sigma > 0:
        raise ConfigurationError("Noise level sigma must be positive", sigma=sigma)
    lam1 = float(pc.decay.eigenvalues(1)[0])
    if lam1 <= 0:
        raise DegenerateKernelError("Population eigenvalues vanish; no critical radius exists")
    c = prefactor or get_settings().constants.population_prefactor

    def g(eps: float) -> float:
        return eps * eps / sigma - c * population_complexity(pc, eps)

    return _solve_radius(g, lambda eps: eps * eps / sigma, float(np.sqrt(lam1)) + 1.0,
                         "critical population radius")


def predicted_rate(decay: EigendecayModel, sigma: float, n: int) -> float:
    """Minimax order of the squared error: (sigma^2/n)^(2nu/(2nu+1)) or sigma^2 m / n."""
    if decay.kind == DecayKind.POLYNOMIAL:
        p = 2.0 * decay.nu
        return (sigma ** 2 / n) ** (p / (p + 1.0))
    m = sum(1 for v in decay.values if v > 0)
    return sigma ** 2 * m / n
