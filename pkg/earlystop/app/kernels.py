# earlystop/app/kernels.py
import logging
import math
from enum import Enum
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, EigensolverError, PSDViolationError
from .schemas import FrozenModel
from .settings import get_settings

logger = logging.getLogger(__name__)


# ---------------- EIGENDECAY MODELS ---------------- #

class DecayKind(str, Enum):
    POLYNOMIAL = "polynomial"
    FINITE_RANK = "finite_rank"
    EXPLICIT = "explicit"


class EigendecayModel(FrozenModel):
    """Population eigenvalues λ_1 ≥ λ_2 ≥ ... of a kernel operator."""
    kind: DecayKind
    C: float = 1.0
    nu: float = 1.0
    values: Tuple[float, ...] = ()

    @property
    def rank(self) -> Optional[int]:
        if self.kind == DecayKind.POLYNOMIAL:
            return None
        return len(self.values)

    def eigenvalues(self, count: int) -> np.ndarray:
        if self.kind == DecayKind.POLYNOMIAL:
            k = np.arange(1, count + 1, dtype=float)
            return self.C * k ** (-2.0 * self.nu)
        out = np.zeros(count)
        vals = np.asarray(self.values[:count], dtype=float)
        out[: vals.shape[0]] = vals
        return out


def polynomial_decay(C: float, nu: float) -> EigendecayModel:
    if C <= 0 or nu <= 0:
        raise ConfigurationError("Polynomial decay needs C > 0 and nu > 0", C=C, nu=nu)
    return EigendecayModel(kind=DecayKind.POLYNOMIAL, C=float(C), nu=float(nu))


def finite_rank(m: int, values: Optional[Sequence[float]] = None) -> EigendecayModel:
    if m < 1:
        raise ConfigurationError("Finite-rank model needs m >= 1", m=m)
    vals = tuple(float(v) for v in (values if values is not None else [1.0] * m))
    if len(vals) != m or any(v <= 0 for v in vals):
        raise ConfigurationError("Finite-rank model needs m positive values", m=m)
    return EigendecayModel(kind=DecayKind.FINITE_RANK, values=tuple(sorted(vals, reverse=True)))


def explicit_decay(values: Sequence[float]) -> EigendecayModel:
    vals = tuple(float(v) for v in values)
    if any(v < 0 for v in vals) or any(a < b for a, b in zip(vals, vals[1:])):
        raise ConfigurationError("Explicit eigenvalues must be nonnegative and nonincreasing")
    return EigendecayModel(kind=DecayKind.EXPLICIT, values=vals)


@lru_cache(maxsize=16)
def _polynomial_spectrum(degree: int) -> Tuple[float, ...]:
    """Spectrum of (1 + x x')^d as an operator on L2(Uniform[0,1])."""
    k = np.arange(degree + 1)
    binom = np.array([math.comb(degree, int(j)) for j in k], dtype=float)
    # Gram matrix of the monomials 1, x, ..., x^d in L2[0,1]
    moments = 1.0 / (k[:, None] + k[None, :] + 1.0)
    root = np.sqrt(binom)
    vals = np.linalg.eigvalsh(root[:, None] * moments * root[None, :])
    return tuple(float(v) for v in sorted(np.clip(vals, 0.0, None), reverse=True) if v > 0)


# ---------------- KERNELS ---------------- #

class KernelFamily(str, Enum):
    SOBOLEV = "sobolev1"
    GAUSSIAN = "gaussian"
    POLYNOMIAL = "poly"
    CUSTOM = "custom"


class Kernel(FrozenModel):
    family: KernelFamily
    bandwidth: Optional[float] = None
    degree: Optional[int] = None
    evaluator: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    name: Optional[str] = None
    population_decay: Optional[EigendecayModel] = None

    @property
    def label(self) -> str:
        if self.family == KernelFamily.GAUSSIAN:
            return f"gaussian:{self.bandwidth:g}"
        if self.family == KernelFamily.POLYNOMIAL:
            return f"poly:{self.degree}"
        if self.family == KernelFamily.CUSTOM:
            return self.name or "custom"
        return self.family.value

    @property
    def bound(self) -> Optional[float]:
        """B with sup_x K(x, x) <= B on [0, 1]."""
        if self.family in (KernelFamily.SOBOLEV, KernelFamily.GAUSSIAN):
            return 1.0
        if self.family == KernelFamily.POLYNOMIAL:
            return float(2 ** self.degree)
        return None

    def __call__(self, x, z) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.family == KernelFamily.SOBOLEV:
            if np.any(x < 0) or np.any(z < 0):
                raise ConfigurationError("Sobolev kernel min{x, x'} is defined on [0, inf)")
            return np.minimum(x, z)
        if self.family == KernelFamily.GAUSSIAN:
            return np.exp(-((x - z) ** 2) / (2.0 * self.bandwidth ** 2))
        if self.family == KernelFamily.POLYNOMIAL:
            return (1.0 + x * z) ** self.degree
        return np.asarray(self.evaluator(x, z), dtype=float)


def sobolev_kernel() -> Kernel:
    return Kernel(family=KernelFamily.SOBOLEV, population_decay=polynomial_decay(1.0 / math.pi ** 2, 1.0))


def gaussian_kernel(bandwidth: float = 1.0, population_decay: Optional[EigendecayModel] = None) -> Kernel:
    if not bandwidth > 0:
        raise ConfigurationError("Gaussian bandwidth must be positive", bandwidth=bandwidth)
    return Kernel(family=KernelFamily.GAUSSIAN, bandwidth=float(bandwidth), population_decay=population_decay)


def polynomial_kernel(degree: int) -> Kernel:
    if int(degree) != degree or degree < 1:
        raise ConfigurationError("Polynomial degree must be a positive integer", degree=degree)
    spectrum = _polynomial_spectrum(int(degree))
    return Kernel(
        family=KernelFamily.POLYNOMIAL,
        degree=int(degree),
        population_decay=EigendecayModel(kind=DecayKind.FINITE_RANK, values=spectrum),
    )


def custom_kernel(evaluator: Callable, name: str = "custom",
                  population_decay: Optional[EigendecayModel] = None) -> Kernel:
    return Kernel(family=KernelFamily.CUSTOM, evaluator=evaluator, name=name, population_decay=population_decay)


def evaluate_kernel(kernel: Kernel, x: float, x_prime: float) -> float:
    return float(kernel(x, x_prime))


def gram(kernel: Kernel, xs: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Raw kernel values K(xs_i, zs_j), no 1/n scaling."""
    xs = np.asarray(xs, dtype=float)
    zs = np.asarray(zs, dtype=float)
    return kernel(xs[:, None], zs[None, :])


# ---------------- EIGENSOLVER ---------------- #

@lru_cache(maxsize=64)
def _round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Circle-method schedule: n - 1 (or n) rounds of disjoint (p, q) pairs covering every pair once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        top = np.array(players[: m // 2])
        bottom = np.array(players[m // 2:][::-1])
        keep = (top < n) & (bottom < n)
        rounds.append((np.minimum(top, bottom)[keep], np.maximum(top, bottom)[keep]))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(matrix: np.ndarray, max_sweeps: int = 100, tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray, int]:
    """Cyclic Jacobi for a symmetric matrix.

    Each round of the circle schedule rotates n/2 disjoint index pairs at once; a sweep
    visits every off-diagonal pair exactly once. Converged when the off-diagonal Frobenius
    norm drops below tol * ||A||_F.

    Returns (eigenvalues, eigenvectors as columns, sweeps used), unsorted.
    """
    a = np.array(matrix, dtype=float, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0 or n == 1:
        return np.diag(a).copy(), v, 0

    rounds = _round_robin(n)
    for sweep in range(max_sweeps + 1):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < tol * scale:
            return np.diag(a).copy(), v, sweep
        if sweep == max_sweeps:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            # a subnormal a_pq sends theta to inf, which yields t = 0
            with np.errstate(over="ignore", divide="ignore"):
                theta = (a[q, q] - a[p, p]) / (2.0 * np.where(active, apq, 1.0))
                t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c

            ap, aq = a[:, p], a[:, q]
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :], a[q, :]
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq

    raise EigensolverError("Jacobi sweeps did not converge", sweeps=max_sweeps, n=n)


# ---------------- EMPIRICAL KERNEL ---------------- #

class EmpiricalKernel(FrozenModel):
    kernel: Kernel
    design: np.ndarray          # sorted ascending
    order: np.ndarray           # design == raw_design[order]
    matrix: np.ndarray          # K_ij = kernel(x_i, x_j) / n
    eigenvalues: np.ndarray     # nonincreasing, clamped to 0 below the rank threshold
    eigenvectors: np.ndarray    # columns of U
    rank: int
    sweeps: int = 0

    @property
    def n(self) -> int:
        return int(self.design.shape[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[0])

    def sort(self, values: np.ndarray) -> np.ndarray:
        """Reorder a vector given in raw design order into sorted design order."""
        return np.asarray(values, dtype=float)[self.order]


def build_empirical_kernel(kernel: Kernel, design: Sequence[float], solver: Optional[str] = None) -> EmpiricalKernel:
    settings = get_settings()
    tol = settings.tolerances
    raw = np.asarray(design, dtype=float)
    n = raw.shape[0]
    if raw.ndim != 1 or n < 2:
        raise ConfigurationError("Empirical kernel needs at least two scalar design points", n=n)

    order = np.argsort(raw, kind="stable")
    xs = raw[order]
    matrix = gram(kernel, xs, xs) / n
    matrix = 0.5 * (matrix + matrix.T)

    solver = solver or settings.solver.eigensolver
    if solver == "lapack":
        vals, vecs = np.linalg.eigh(matrix)
        sweeps = 0
    else:
        vals, vecs, sweeps = jacobi_eigh(matrix, settings.solver.jacobi_max_sweeps, settings.solver.jacobi_tol)

    idx = np.argsort(vals, kind="stable")[::-1]
    vals = vals[idx].copy()
    vecs = vecs[:, idx].copy()

    recon = float(np.max(np.abs(vecs @ (vals[:, None] * vecs.T) - matrix)))
    ortho = float(np.max(np.abs(vecs.T @ vecs - np.eye(n))))
    if recon > tol.recon or ortho > tol.ortho:
        raise EigensolverError("Eigendecomposition failed its accuracy checks", sweeps=sweeps,
                               reconstruction=recon, orthogonality=ortho)

    lam1 = max(float(vals[0]), 0.0)
    if vals[-1] < -tol.psd * lam1:
        raise PSDViolationError(kernel.label, float(vals[-1]))
    above = vals > tol.rank * lam1
    rank = int(np.count_nonzero(above))
    vals[~above] = 0.0

    logger.debug("Empirical kernel %s n=%d rank=%d sweeps=%d lambda1=%.6g", kernel.label, n, rank, sweeps, lam1)
    return EmpiricalKernel(
        kernel=kernel, design=xs, order=order, matrix=matrix,
        eigenvalues=vals, eigenvectors=vecs, rank=rank, sweeps=sweeps,
    )
