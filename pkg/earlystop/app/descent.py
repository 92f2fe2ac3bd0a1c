# earlystop/app/descent.py
import logging
import math
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, InvalidStepError
from .kernels import EmpiricalKernel, gram
from .schemas import BiasVarianceSplit, FrozenModel, ShrinkageDiagnostics
from .settings import get_settings

logger = logging.getLogger(__name__)


# ---------------- STEP SCHEDULES ---------------- #

class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    CUSTOM = "custom"


class StepSchedule(FrozenModel):
    kind: ScheduleKind
    alpha: float = 0.25
    # custom lists continue with their last entry
    steps: Tuple[float, ...] = ()

    @property
    def first(self) -> float:
        return self.alpha if self.kind == ScheduleKind.CONSTANT else self.steps[0]

    def alphas(self, count: int) -> np.ndarray:
        """alpha_0, ..., alpha_{count-1}."""
        if self.kind == ScheduleKind.CONSTANT:
            return np.full(count, self.alpha)
        head = np.asarray(self.steps[:count], dtype=float)
        if head.shape[0] == count:
            return head
        return np.concatenate([head, np.full(count - head.shape[0], self.steps[-1])])

    def etas(self, count: int) -> np.ndarray:
        """eta_0 = 0, ..., eta_count."""
        return np.concatenate([[0.0], np.cumsum(self.alphas(count))])

    def step_bound(self, K: EmpiricalKernel) -> float:
        lam1 = K.lambda_max
        return 1.0 if lam1 <= 1.0 else 1.0 / lam1

    def validate_for(self, K: EmpiricalKernel) -> None:
        bound = self.step_bound(K)
        if self.first > bound * (1.0 + 1e-12):
            raise InvalidStepError("Step size exceeds min{1, 1/lambda_1}", alpha=self.first, bound=bound)


def constant_schedule(alpha: float) -> StepSchedule:
    if not alpha > 0:
        raise ConfigurationError("Constant step must be positive so that eta_t diverges", alpha=alpha)
    return StepSchedule(kind=ScheduleKind.CONSTANT, alpha=float(alpha))


def custom_schedule(steps: Sequence[float]) -> StepSchedule:
    vals = tuple(float(s) for s in steps)
    if not vals:
        raise ConfigurationError("Custom schedule needs at least one step")
    if any(s < 0 for s in vals) or any(b > a for a, b in zip(vals, vals[1:])):
        raise ConfigurationError("Custom steps must be nonnegative and non-increasing")
    if vals[-1] <= 0:
        raise ConfigurationError("Last custom step must be positive so that eta_t diverges")
    return StepSchedule(kind=ScheduleKind.CUSTOM, steps=vals)


def default_cap(n: int) -> int:
    return get_settings().constants.max_iter_factor * n


# ---------------- SINGLE STEPS ---------------- #

class DescentState(FrozenModel):
    t: int
    fvals: np.ndarray
    omega: np.ndarray
    eta: float


def initial_state(n: int) -> DescentState:
    return DescentState(t=0, fvals=np.zeros(n), omega=np.zeros(n), eta=0.0)


def descend_step(state: DescentState, K: EmpiricalKernel, y: np.ndarray, alpha: float) -> DescentState:
    """One gradient step; y is in sorted design order.

    omega <- omega - alpha (K omega - y / sqrt(n)),  f <- f - alpha K (f - y),
    which keeps f = sqrt(n) K omega.
    """
    bound = 1.0 if K.lambda_max <= 1.0 else 1.0 / K.lambda_max
    if alpha < 0 or alpha > bound * (1.0 + 1e-12):
        raise InvalidStepError("Step size outside [0, min{1, 1/lambda_1}]", alpha=alpha, bound=bound)
    y = np.asarray(y, dtype=float)
    omega = state.omega - alpha * (K.matrix @ state.omega - y / math.sqrt(K.n))
    fvals = state.fvals - alpha * (K.matrix @ (state.fvals - y))
    return DescentState(t=state.t + 1, fvals=fvals, omega=omega, eta=state.eta + alpha)


# ---------------- SHRINKAGE ---------------- #

def shrink_table(schedule: StepSchedule, eigenvalues: np.ndarray, iters: int) -> np.ndarray:
    """Rows t = 0..iters of S^t_jj = prod_{tau<t} (1 - alpha_tau lambda_j)."""
    factors = 1.0 - schedule.alphas(iters)[:, None] * eigenvalues[None, :]
    return np.vstack([np.ones((1, eigenvalues.shape[0])), np.cumprod(factors, axis=0)])


def _shrink_at(schedule: StepSchedule, eigenvalues: np.ndarray, t: int) -> np.ndarray:
    if t == 0:
        return np.ones_like(eigenvalues)
    return np.prod(1.0 - schedule.alphas(t)[:, None] * eigenvalues[None, :], axis=0)


def shrinkage_diagonal(schedule: StepSchedule, K: EmpiricalKernel, t: int) -> ShrinkageDiagnostics:
    if t < 0:
        raise ConfigurationError("Iteration must be nonnegative", t=t)
    lam = K.eigenvalues[: K.rank]
    return ShrinkageDiagnostics(t=t, diag=_shrink_at(schedule, lam, t))


# ---------------- ERRORS ---------------- #

def empirical_norm_error(fvals: np.ndarray, fstar_vals: np.ndarray) -> float:
    fvals = np.asarray(fvals, dtype=float)
    fstar_vals = np.asarray(fstar_vals, dtype=float)
    if fvals.shape != fstar_vals.shape:
        raise ConfigurationError("Vectors differ in length", left=fvals.shape, right=fstar_vals.shape)
    return float(np.mean((fvals - fstar_vals) ** 2))


def quadrature_grid(grid: Union[int, np.ndarray, None] = None) -> np.ndarray:
    if grid is None:
        grid = get_settings().quadrature_points
    if isinstance(grid, (int, np.integer)):
        grid = np.linspace(0.0, 1.0, int(grid)) if grid >= 2 else np.empty(0)
    grid = np.asarray(grid, dtype=float)
    if grid.shape[0] < 2:
        raise ConfigurationError("Quadrature grid needs at least two points")
    return grid


def predict(K: EmpiricalKernel, omega: np.ndarray, x: np.ndarray, cross: Optional[np.ndarray] = None) -> np.ndarray:
    """f(x) = (1/sqrt(n)) sum_i omega_i K(x, x_i); omega in sorted design order."""
    if cross is None:
        cross = gram(K.kernel, x, K.design)
    return cross @ omega / math.sqrt(K.n)


def population_norm_error(K: EmpiricalKernel, omega: np.ndarray, fstar: Callable[[np.ndarray], np.ndarray],
                          grid: Union[int, np.ndarray, None] = None,
                          cross: Optional[np.ndarray] = None) -> float:
    """Trapezoid approximation of E[(f(X) - f*(X))^2] for X uniform on the grid's span."""
    xs = quadrature_grid(grid)
    resid = predict(K, omega, xs, cross) - fstar(xs)
    return float(np.trapezoid(resid ** 2, xs) / (xs[-1] - xs[0]))


def bias_variance_split(schedule: StepSchedule, K: EmpiricalKernel, t: int,
                        fstar_vals: np.ndarray, noise: np.ndarray) -> BiasVarianceSplit:
    S = _shrink_at(schedule, K.eigenvalues, t)
    U = K.eigenvectors
    a = U.T @ np.asarray(fstar_vals, dtype=float)
    b = U.T @ np.asarray(noise, dtype=float)
    n = K.n
    return BiasVarianceSplit(
        squared_bias=float(2.0 / n * np.sum(S ** 2 * a ** 2)),
        variance=float(2.0 / n * np.sum((1.0 - S) ** 2 * b ** 2)),
    )


# ---------------- HILBERT NORM ---------------- #

def hilbert_norm_sq(K: EmpiricalKernel, fvals: np.ndarray) -> float:
    """(1/n) f^T K^+ f, with K^+ restricted to eigenvalues above the rank threshold."""
    r = K.rank
    coords = K.eigenvectors[:, :r].T @ np.asarray(fvals, dtype=float)
    return float(np.sum(coords ** 2 / K.eigenvalues[:r]) / K.n)


def unit_norm_target(K: EmpiricalKernel, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Random f* = (1/sqrt(n)) sum_i omega*_i K(., x_i) scaled to unit Hilbert norm.

    Returns (f* at the design points, omega*).
    """
    omega = rng.standard_normal(K.n)
    fvals = math.sqrt(K.n) * (K.matrix @ omega)
    norm = math.sqrt(float(omega @ K.matrix @ omega))
    if norm == 0.0:
        raise ConfigurationError("Kernel matrix annihilates the random coefficients")
    return fvals / norm, omega / norm


# ---------------- FULL PATHS ---------------- #

class DescentPath(FrozenModel):
    """Spectral record of t = 0..iters gradient steps on one dataset."""
    kernel: EmpiricalKernel
    schedule: StepSchedule
    etas: np.ndarray
    shrink: np.ndarray              # (iters + 1, n)
    response_coords: np.ndarray     # U^T y
    emp_error: Optional[np.ndarray] = None
    bias_sq: Optional[np.ndarray] = None
    variance: Optional[np.ndarray] = None
    sure_risk: Optional[np.ndarray] = None

    @property
    def iters(self) -> int:
        return int(self.etas.shape[0] - 1)

    def fvals(self, t: int) -> np.ndarray:
        """U (I - S^t) U^T y."""
        return self.kernel.eigenvectors @ ((1.0 - self.shrink[t]) * self.response_coords)

    def omega(self, t: int) -> np.ndarray:
        """omega^t in sorted design order, null directions dropped."""
        K = self.kernel
        r = K.rank
        lam = K.eigenvalues[:r]
        gain = np.zeros(r)
        for alpha in self.schedule.alphas(t):
            gain = gain + alpha * (1.0 - lam * gain)
        coords = gain * self.response_coords[:r] / math.sqrt(K.n)
        return K.eigenvectors[:, :r] @ coords


def descent_path(K: EmpiricalKernel, y: np.ndarray, schedule: StepSchedule, iters: int,
                 fstar_vals: Optional[np.ndarray] = None, noise: Optional[np.ndarray] = None,
                 sigma: Optional[float] = None) -> DescentPath:
    """Run `iters` steps spectrally and record the risk traces whose inputs were supplied."""
    schedule.validate_for(K)
    n = K.n
    U = K.eigenvectors
    S = shrink_table(schedule, K.eigenvalues, iters)
    z = U.T @ np.asarray(y, dtype=float)
    traces = {}
    if fstar_vals is not None:
        a = U.T @ np.asarray(fstar_vals, dtype=float)
        traces["emp_error"] = np.mean(((1.0 - S) * z - a) ** 2, axis=1)
        traces["bias_sq"] = 2.0 / n * np.sum(S ** 2 * a ** 2, axis=1)
    if noise is not None:
        b = U.T @ np.asarray(noise, dtype=float)
        traces["variance"] = 2.0 / n * np.sum((1.0 - S) ** 2 * b ** 2, axis=1)
    if sigma is not None:
        traces["sure_risk"] = sure_trace(S, z, sigma)
    return DescentPath(kernel=K, schedule=schedule, etas=schedule.etas(iters), shrink=S,
                       response_coords=z, **traces)


def sure_trace(S: np.ndarray, z: np.ndarray, sigma: float) -> np.ndarray:
    """(1/n){n sigma^2 + sum_j S_j^2 z_j^2 - 2 sigma^2 sum_j S_j} for each row of S."""
    n = z.shape[0]
    s2 = sigma ** 2
    return (n * s2 + np.sum(S ** 2 * z ** 2, axis=-1) - 2.0 * s2 * np.sum(S, axis=-1)) / n
