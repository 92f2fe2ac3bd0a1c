# earlystop/app/ridge.py
import logging
from typing import Optional, Sequence

import numpy as np

from .complexity import EmpiricalComplexity, bisect_crossing, scaled_complexity
from .errors import ConfigurationError, DegenerateKernelError, NumericalError
from .kernels import EmpiricalKernel
from .schemas import RidgePath, RidgeShrinkage
from .settings import get_settings

logger = logging.getLogger(__name__)


def ridge_diagonal(eigenvalues: np.ndarray, nu: float) -> np.ndarray:
    if not nu > 0:
        raise ConfigurationError("Inverse regularization nu must be positive", nu=nu)
    return 1.0 / (1.0 + nu * np.asarray(eigenvalues, dtype=float))


def ridge_shrinkage(K: EmpiricalKernel, nu: float) -> RidgeShrinkage:
    """R^nu_jj = (1 + nu lambda_j)^-1 over the nonzero eigenvalues."""
    return RidgeShrinkage(nu=float(nu), diag=ridge_diagonal(K.eigenvalues[: K.rank], nu))


def solve_krr(K: EmpiricalKernel, y: np.ndarray, nu: float) -> np.ndarray:
    """Design-point values U (I - R^nu) U^T y of the kernel ridge estimate."""
    if not nu > 0:
        raise ConfigurationError("Inverse regularization nu must be positive", nu=nu)
    U = K.eigenvectors
    lam = K.eigenvalues
    y = np.asarray(y, dtype=float)
    keep = nu * lam / (1.0 + nu * lam)
    fvals = U @ (keep * (U.T @ y))
    residual = stationarity_residual(K, y, nu, fvals)
    scale = max(1.0, float(np.max(np.abs(K.matrix @ y))))
    if residual > get_settings().tolerances.solve * scale:
        raise NumericalError("Ridge solution misses the stationarity equation", nu=nu, residual=residual)
    return fvals


def stationarity_residual(K: EmpiricalKernel, y: np.ndarray, nu: float, fvals: np.ndarray) -> float:
    """max |(K + I/nu) f - K y|."""
    return float(np.max(np.abs(K.matrix @ fvals + fvals / nu - K.matrix @ np.asarray(y, dtype=float))))


def choose_nu(ec: EmpiricalComplexity, sigma: float, prefactor: Optional[float] = None) -> float:
    """Smallest nu with (4 sigma nu)^-1 < R(1/sqrt(nu))."""
    if not sigma > 0:
        raise ConfigurationError("Noise level sigma must be positive", sigma=sigma)
    if ec.degenerate:
        raise DegenerateKernelError("All empirical eigenvalues vanish; no regularization level satisfies the rule")
    c = prefactor or get_settings().constants.ridge_prefactor
    target = 1.0 / (c * sigma)

    def g(nu: float) -> float:
        return scaled_complexity(ec, nu) - target

    nu, iterations = bisect_crossing(g, 1.0)
    residual = abs(g(nu)) / target
    if residual > get_settings().tolerances.root:
        raise NumericalError("Ridge parameter residual above tolerance", residual=residual, iterations=iterations)
    return nu


def krr_path(K: EmpiricalKernel, y: np.ndarray, nu_grid: Sequence[float],
             fstar_vals: Optional[np.ndarray] = None) -> RidgePath:
    nus = np.asarray(nu_grid, dtype=float)
    if nus.ndim != 1 or nus.shape[0] == 0:
        raise ConfigurationError("Ridge grid must be a nonempty list")
    if np.any(nus <= 0) or np.any(np.diff(nus) < 0):
        raise ConfigurationError("Ridge grid must be positive and ascending")

    U = K.eigenvectors
    z = U.T @ np.asarray(y, dtype=float)
    keep = nus[:, None] * K.eigenvalues[None, :]
    keep = keep / (1.0 + keep)
    fvals = (keep * z) @ U.T
    errors = None
    if fstar_vals is not None:
        errors = np.mean((fvals - np.asarray(fstar_vals, dtype=float)[None, :]) ** 2, axis=1)
    logger.debug("Ridge path over %d values of nu in [%g, %g]", nus.shape[0], nus[0], nus[-1])
    return RidgePath(nus=nus, fvals_per_nu=fvals, errors=errors)
