# earlystop/app/verify.py
"""Property checks over randomly drawn instances.

Every check returns a PropertyReport and never raises on a violated inequality;
margins are absolute (bound minus value), so a negative margin beyond the slack is a violation.
"""
import logging
import math
from typing import Callable, Dict, List, Optional

import numpy as np
from joblib import Parallel, delayed

from .complexity import EmpiricalComplexity, critical_empirical_radius, empirical_complexity
from .descent import (
    StepSchedule,
    constant_schedule,
    custom_schedule,
    descend_step,
    descent_path,
    initial_state,
    shrink_table,
    unit_norm_target,
)
from .kernels import EmpiricalKernel, Kernel, build_empirical_kernel, gaussian_kernel, polynomial_kernel, sobolev_kernel
from .ridge import ridge_diagonal
from .schemas import PropertyReport
from .settings import get_settings
from .stopping import stop_data_dependent

logger = logging.getLogger(__name__)


# ---------------- RANDOM INSTANCES ---------------- #

def _rng(seed: int, check: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, check])))


def _random_kernel(rng: np.random.Generator) -> Kernel:
    pick = rng.integers(3)
    if pick == 0:
        return sobolev_kernel()
    if pick == 1:
        return gaussian_kernel(float(rng.uniform(0.1, 1.0)))
    return polynomial_kernel(int(rng.integers(1, 4)))


def _random_instance(rng: np.random.Generator, low: int = 5, high: int = 30) -> EmpiricalKernel:
    n = int(rng.integers(low, high + 1))
    return build_empirical_kernel(_random_kernel(rng), rng.uniform(0.0, 1.0, n))


def _random_schedule(rng: np.random.Generator, bound: float, length: int) -> StepSchedule:
    if rng.random() < 0.5:
        return constant_schedule(bound * float(rng.uniform(0.05, 1.0)))
    steps = np.sort(rng.uniform(0.05, 1.0, length))[::-1] * bound
    return custom_schedule(steps.tolist())


# ---------------- SHRINKAGE ---------------- #

def check_shrinkage_bounds(samples: int = 1000, seed: int = 0) -> PropertyReport:
    """Upper and lower shrinkage inequalities for gradient and ridge shrinkage."""
    rng = _rng(seed, 0)
    slack = get_settings().tolerances.shrink_slack
    report = PropertyReport(name="shrinkage_bounds")
    for i in range(samples):
        lam = rng.uniform(1e-3, 1.0, int(rng.integers(1, 20)))
        t = int(rng.integers(1, 101))
        schedule = _random_schedule(rng, 1.0, t)
        S = shrink_table(schedule, lam, t)
        eta = schedule.etas(t)[-1]
        cur = S[-1]

        monotone = np.min(S[:-1] - S[1:])
        upper_bias = np.min(1.0 / (2.0 * math.e * eta * lam) - cur ** 2)
        lower_fit = np.min((1.0 - cur) - 0.5 * np.minimum(1.0, eta * lam))
        upper_fit = np.min(np.minimum(1.0, eta * lam) - (1.0 - cur))
        in_range = min(np.min(S), np.min(1.0 - S))

        nu = float(np.exp(rng.uniform(-3.0, 5.0)))
        R = ridge_diagonal(lam, nu)
        x = nu * lam
        ridge_bias = np.min(1.0 / (4.0 * x) - R ** 2)
        ridge_lower = np.min((1.0 - R) - 0.5 * np.minimum(1.0, x))
        ridge_upper = np.min(np.minimum(1.0, x) - (1.0 - R))

        margins = {
            "monotone": monotone, "upper_bias": upper_bias, "lower_fit": lower_fit, "upper_fit": upper_fit,
            "range": in_range, "ridge_bias": ridge_bias, "ridge_lower": ridge_lower, "ridge_upper": ridge_upper,
        }
        name, worst = min(margins.items(), key=lambda kv: kv[1])
        report.record(float(worst), slack=slack, note=f"instance {i}: {name} margin {worst:.3g}")
    return report


# ---------------- BIAS / VARIANCE ---------------- #

def check_decomposition(samples: int = 50, seed: int = 0, draws: int = 500,
                        slack: float = 0.1) -> PropertyReport:
    """Per-realization upper bound, expectation lower bound and unit-norm bias bound."""
    rng = _rng(seed, 1)
    tol = get_settings().tolerances.shrink_slack
    report = PropertyReport(name="decomposition")
    for i in range(samples):
        K = _random_instance(rng)
        n = K.n
        iters = int(rng.integers(1, 101))
        schedule = _random_schedule(rng, 1.0 if K.lambda_max <= 1.0 else 1.0 / K.lambda_max, iters)
        fstar_vals, _ = unit_norm_target(K, rng)
        sigma = float(rng.uniform(0.1, 1.0))

        noise = sigma * rng.standard_normal(n)
        path = descent_path(K, fstar_vals + noise, schedule, iters, fstar_vals=fstar_vals, noise=noise)
        upper = np.min(path.bias_sq + path.variance - path.emp_error)
        report.record(float(upper), slack=tol, note=f"instance {i}: upper bound margin {upper:.3g}")

        etas = path.etas[1:]
        bias = np.min(1.0 / (math.e * etas) - path.bias_sq[1:])
        report.record(float(bias), slack=tol, note=f"instance {i}: bias bound margin {bias:.3g}")

        # expectation over fresh noise, all draws at once in the eigenbasis
        S = path.shrink
        a = K.eigenvectors.T @ fstar_vals
        b = sigma * rng.standard_normal((draws, n))
        fit = 1.0 - S
        err = np.mean((fit[None, :, :] * (a[None, None, :] + b[:, None, :]) - a[None, None, :]) ** 2, axis=(0, 2))
        var = 2.0 / n * np.mean(np.sum(fit[None, :, :] ** 2 * b[:, None, :] ** 2, axis=2), axis=0)
        lower = np.min(err - (1.0 - slack) * 0.5 * var)
        report.record(float(lower), slack=tol, note=f"instance {i}: lower bound margin {lower:.3g}")
    return report


# ---------------- RECURSIONS ---------------- #

def check_recursion_equivalence(samples: int = 20, seed: int = 0, steps: int = 200,
                                tol: float = 1e-8) -> PropertyReport:
    """omega-iteration, direct f-recursion and spectral form agree at every step."""
    rng = _rng(seed, 2)
    report = PropertyReport(name="recursion_equivalence")
    for i in range(samples):
        K = _random_instance(rng, high=25)
        bound = 1.0 if K.lambda_max <= 1.0 else 1.0 / K.lambda_max
        schedule = _random_schedule(rng, bound, steps)
        y = rng.standard_normal(K.n)
        path = descent_path(K, y, schedule, steps)
        state = initial_state(K.n)
        worst = 0.0
        for t, alpha in enumerate(schedule.alphas(steps), start=1):
            state = descend_step(state, K, y, float(alpha))
            via_omega = math.sqrt(K.n) * (K.matrix @ state.omega)
            spectral = path.fvals(t)
            worst = max(worst, float(np.max(np.abs(via_omega - state.fvals))),
                        float(np.max(np.abs(spectral - state.fvals))))
        report.record(tol - worst, note=f"instance {i} ({K.kernel.label}, n={K.n}): max gap {worst:.3g}")
    return report


# ---------------- CRITICAL RADIUS ---------------- #

def _scan_crossing(g: Callable[[np.ndarray], np.ndarray], upper: float, points: int = 10_001) -> float:
    lo, hi = 0.0, upper
    for _ in range(2):
        grid = np.linspace(lo, hi, points)
        vals = g(grid)
        k = int(np.flatnonzero(vals > 0)[0])
        lo, hi = grid[max(k - 1, 0)], grid[k]
    return 0.5 * (lo + hi)


def check_critical_radius(samples: int = 200, seed: int = 0, agreement: float = 1e-5) -> PropertyReport:
    """Fixed-point residual, agreement with a grid scan and monotonicity in sigma."""
    rng = _rng(seed, 3)
    tol_root = get_settings().tolerances.root
    c = get_settings().constants.empirical_prefactor
    report = PropertyReport(name="critical_radius")
    for i in range(samples):
        K = _random_instance(rng)
        ec = EmpiricalComplexity.from_kernel(K)
        sigma = float(np.exp(rng.uniform(-4.0, 1.0)))
        radius = critical_empirical_radius(ec, sigma)
        report.record(tol_root - radius.residual, note=f"instance {i}: residual {radius.residual:.3g}")

        scanned = _scan_crossing(lambda e: e ** 2 / (c * sigma) - empirical_complexity(ec, e), 2.0 * radius.value)
        gap = abs(scanned - radius.value)
        report.record(agreement - gap, note=f"instance {i}: grid scan off by {gap:.3g}")

        wider = critical_empirical_radius(ec, 2.0 * sigma)
        report.record(wider.value - radius.value, slack=tol_root,
                      note=f"instance {i}: radius fell from {radius.value:.6g} to {wider.value:.6g}")
    return report


def check_stopping_sandwich(samples: int = 1000, seed: int = 0, slack: float = 1e-8) -> PropertyReport:
    """1/eta_{T+1} <= eps^2 <= 1/eta_T, and eta_{T+1} <= 2 eta_T for constant steps."""
    rng = _rng(seed, 4)
    report = PropertyReport(name="stopping_sandwich")
    for i in range(samples):
        K = _random_instance(rng)
        ec = EmpiricalComplexity.from_kernel(K)
        sigma = float(np.exp(rng.uniform(-3.0, 1.0)))
        bound = 1.0 if K.lambda_max <= 1.0 else 1.0 / K.lambda_max
        schedule = constant_schedule(bound * float(rng.uniform(0.2, 1.0)))
        eps_sq = critical_empirical_radius(ec, sigma).value ** 2
        # the rule fires once eta_t > 1 / eps^2
        cap = int(1.0 / (schedule.alpha * eps_sq)) + 2
        record = stop_data_dependent(schedule, ec, sigma, cap)
        etas = schedule.etas(record.T + 1)
        T = record.T
        low = eps_sq - 1.0 / etas[T + 1]
        high = (1.0 / etas[T] - eps_sq) if T > 0 else math.inf
        doubling = (2.0 * etas[T] - etas[T + 1]) if T > 0 else math.inf
        # eta_{T+1} = 2 eta_T exactly at T = 1 under constant steps; it counts only when broken
        worst = min(low, high) if doubling >= -slack else min(low, high, doubling)
        report.record(float(worst), slack=slack,
                      note=f"instance {i}: T={T} eps^2={eps_sq:.6g} margins {low:.3g}/{high:.3g}/{doubling:.3g}")
    return report


# ---------------- SUITE ---------------- #

CHECKS: Dict[str, Callable[..., PropertyReport]] = {
    "shrinkage_bounds": check_shrinkage_bounds,
    "decomposition": check_decomposition,
    "recursion_equivalence": check_recursion_equivalence,
    "critical_radius": check_critical_radius,
    "stopping_sandwich": check_stopping_sandwich,
}


def run_suite(seed: int = 0, samples: Optional[int] = None, threads: Optional[int] = None,
              only: Optional[List[str]] = None) -> List[PropertyReport]:
    names = only or list(CHECKS)
    threads = threads or get_settings().threads
    kwargs = {"seed": seed} if samples is None else {"seed": seed, "samples": samples}
    reports = Parallel(n_jobs=threads, prefer="threads")(delayed(CHECKS[name])(**kwargs) for name in names)
    for r in reports:
        level = logging.INFO if r.passed else logging.ERROR
        logger.log(level, "%s: %d instances, %d violations, worst margin %.3g",
                   r.name, r.instances, r.violations, r.worst_margin)
    return reports
