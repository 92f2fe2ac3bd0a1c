# earlystop/app/experiments.py
import logging
import math
from enum import Enum, IntEnum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from pydantic import Field
from scipy import stats
from tqdm import tqdm

from .complexity import EmpiricalComplexity, critical_empirical_radius
from .descent import (
    StepSchedule,
    constant_schedule,
    default_cap,
    descent_path,
    population_norm_error,
    predict,
    quadrature_grid,
)
from .errors import ConfigurationError, EarlyStopError, TrialError
from .kernels import EmpiricalKernel, Kernel, build_empirical_kernel, gram, sobolev_kernel
from .ridge import choose_nu, krr_path, solve_krr
from .schemas import (
    FrozenModel,
    PropertyReport,
    RateFit,
    RateRow,
    RateTable,
    RuleOutcome,
    RuleSummary,
    Sample,
    StoppingRule,
    TrialResult,
)
from .settings import get_settings
from .stopping import fit_holdout, stop_data_dependent, stop_holdout, stop_oracle, stop_sure

logger = logging.getLogger(__name__)

ALL_RULES: Tuple[StoppingRule, ...] = (
    StoppingRule.DATA_DEPENDENT,
    StoppingRule.HOLDOUT,
    StoppingRule.SURE,
    StoppingRule.ORACLE,
)


# ---------------- CONFIG ---------------- #

class DesignKind(str, Enum):
    FIXED = "fixed"
    UNIFORM = "uniform"


class TargetKind(str, Enum):
    ABS_SHIFT = "abs_shift"
    PARABOLA = "parabola"
    CUSTOM = "custom"


class SigmaSource(str, Enum):
    KNOWN = "known"
    ESTIMATED = "estimated"


class Stream(IntEnum):
    DESIGN = 0
    NOISE = 1
    SPLIT = 2


class ExperimentConfig(FrozenModel):
    n: int = Field(ge=4)
    design: DesignKind = DesignKind.FIXED
    target: TargetKind = TargetKind.ABS_SHIFT
    target_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    sigma_true: float = Field(default=1.0, ge=0.0)
    kernel: Kernel = Field(default_factory=sobolev_kernel)
    schedule: StepSchedule = Field(default_factory=lambda: constant_schedule(0.25))
    trials: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    sigma_source: SigmaSource = SigmaSource.ESTIMATED
    # overrides both the known and the estimated noise level
    sigma_override: Optional[float] = None
    cap: Optional[int] = None
    rules: Tuple[StoppingRule, ...] = ALL_RULES
    # 0 skips the population-norm error
    quadrature_points: int = 0

    @property
    def iteration_cap(self) -> int:
        return self.cap if self.cap is not None else default_cap(self.n)

    def with_n(self, n: int) -> "ExperimentConfig":
        if n < 4:
            raise ConfigurationError("Sample size must be at least 4", n=n)
        return self.model_copy(update={"n": int(n)})


class TrialData(FrozenModel):
    design: np.ndarray      # sorted ascending
    responses: np.ndarray
    fstar_vals: np.ndarray
    noise: np.ndarray

    @property
    def sample(self) -> Sample:
        return Sample(design=self.design, responses=self.responses)


# ---------------- DATA ---------------- #

def trial_rng(seed: int, trial_id: int, stream: Stream) -> np.random.Generator:
    """Counter-based generator owned by one (trial, stream) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, trial_id, int(stream)])))


def abs_shift(x: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(x, dtype=float) - 0.5) - 0.5


def parabola(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=float) - 0.5) ** 2 - 0.25


def target_function(config: ExperimentConfig) -> Callable[[np.ndarray], np.ndarray]:
    if config.target == TargetKind.ABS_SHIFT:
        return abs_shift
    if config.target == TargetKind.PARABOLA:
        return parabola
    if config.target_fn is None:
        raise ConfigurationError("Custom target needs a callable")
    return lambda x: np.asarray(config.target_fn(np.asarray(x, dtype=float)), dtype=float)


def design_points(config: ExperimentConfig, trial_id: int) -> np.ndarray:
    if config.design == DesignKind.FIXED:
        return np.arange(1, config.n + 1, dtype=float) / config.n
    rng = trial_rng(config.seed, trial_id, Stream.DESIGN)
    return np.sort(rng.uniform(0.0, 1.0, config.n))


def generate_data(config: ExperimentConfig, trial_id: int) -> TrialData:
    x = design_points(config, trial_id)
    fstar_vals = target_function(config)(x)
    noise = config.sigma_true * trial_rng(config.seed, trial_id, Stream.NOISE).standard_normal(config.n)
    return TrialData(design=x, responses=fstar_vals + noise, fstar_vals=fstar_vals, noise=noise)


def estimate_noise_variance(responses: Sequence[float]) -> float:
    """First-difference estimate sum (y_i - y_{i-1})^2 / (2 (n - 1)); responses in design order."""
    y = np.asarray(responses, dtype=float)
    if y.shape[0] < 4:
        raise ConfigurationError("Noise-variance estimate needs at least 4 responses", n=y.shape[0])
    return float(np.sum(np.diff(y) ** 2) / (2.0 * (y.shape[0] - 1)))


def resolve_sigma(config: ExperimentConfig, responses: np.ndarray) -> Tuple[float, float]:
    """(sigma used by the rules, difference-based estimate)."""
    sigma_hat = math.sqrt(estimate_noise_variance(responses))
    if config.sigma_override is not None:
        sigma = config.sigma_override
    elif config.sigma_source == SigmaSource.KNOWN:
        sigma = config.sigma_true
    else:
        sigma = sigma_hat
    return max(sigma, get_settings().sigma_floor), sigma_hat


# ---------------- KERNEL CACHE ---------------- #

@lru_cache(maxsize=32)
def _cached_kernel(kernel: Kernel, design_key: bytes, solver: str) -> EmpiricalKernel:
    return build_empirical_kernel(kernel, np.frombuffer(design_key, dtype=float), solver)


@lru_cache(maxsize=8)
def _cached_cross(kernel: Kernel, design_key: bytes, points: int) -> np.ndarray:
    return gram(kernel, quadrature_grid(points), np.frombuffer(design_key, dtype=float))


def empirical_kernel_for(config: ExperimentConfig, design: np.ndarray) -> EmpiricalKernel:
    if config.design == DesignKind.FIXED:
        return _cached_kernel(config.kernel, design.tobytes(), get_settings().solver.eigensolver)
    return build_empirical_kernel(config.kernel, design)


def _cross_for(config: ExperimentConfig, K: EmpiricalKernel) -> Optional[np.ndarray]:
    if config.design == DesignKind.FIXED:
        return _cached_cross(config.kernel, K.design.tobytes(), config.quadrature_points)
    return None


# ---------------- TRIALS ---------------- #

def holdout_split(data: TrialData, seed: int, trial_id: int) -> Tuple[Sample, Sample]:
    n = data.design.shape[0]
    perm = trial_rng(seed, trial_id, Stream.SPLIT).permutation(n)
    train = np.sort(perm[: n // 2])
    test = np.sort(perm[n // 2:])
    return (
        Sample(design=data.design[train], responses=data.responses[train]),
        Sample(design=data.design[test], responses=data.responses[test]),
    )


def _run_trial(config: ExperimentConfig, trial_id: int) -> TrialResult:
    data = generate_data(config, trial_id)
    K = empirical_kernel_for(config, data.design)
    y = K.sort(data.responses)
    fstar_vals = K.sort(data.fstar_vals)
    sigma, sigma_hat = resolve_sigma(config, y)
    ec = EmpiricalComplexity.from_kernel(K)
    eps = critical_empirical_radius(ec, sigma)
    cap = config.iteration_cap
    schedule = config.schedule
    path = descent_path(K, y, schedule, cap, fstar_vals=fstar_vals, sigma=sigma)

    fstar = target_function(config)
    use_pop = config.quadrature_points >= 2
    cross = _cross_for(config, K) if use_pop else None

    outcomes: Dict[StoppingRule, RuleOutcome] = {}
    for rule in config.rules:
        if rule == StoppingRule.HOLDOUT:
            train, test = holdout_split(data, config.seed, trial_id)
            fit = fit_holdout(train, config.kernel, schedule, cap)
            record = stop_holdout(train, test, config.kernel, schedule, cap, fit=fit)
            omega = fit.omega(record.T)
            emp = float(np.mean((predict(fit.kernel, omega, K.design) - fstar_vals) ** 2))
            pop = population_norm_error(fit.kernel, omega, fstar, config.quadrature_points) if use_pop else None
        else:
            if rule == StoppingRule.DATA_DEPENDENT:
                record = stop_data_dependent(schedule, ec, sigma, cap)
            elif rule == StoppingRule.SURE:
                record = stop_sure(schedule, K, y, sigma, cap, path=path)
            else:
                record = stop_oracle(schedule, K, y, fstar_vals, cap, path=path)
            emp = float(path.emp_error[record.T])
            pop = None
            if use_pop:
                pop = population_norm_error(K, path.omega(record.T), fstar, config.quadrature_points, cross)
        outcomes[rule] = RuleOutcome(record=record, emp_error=emp, pop_error=pop)

    return TrialResult(trial_id=trial_id, outcomes=outcomes, eps_hat=eps.value, sigma_hat=sigma_hat)


def run_trial(config: ExperimentConfig, trial_id: int) -> TrialResult:
    try:
        return _run_trial(config, trial_id)
    except TrialError:
        raise
    except EarlyStopError as exc:
        raise TrialError(trial_id, exc) from exc


def _fan_out(fn: Callable[[ExperimentConfig, int], object], config: ExperimentConfig,
             threads: Optional[int], progress: bool, desc: str) -> list:
    threads = threads or get_settings().threads
    ids = range(config.trials)
    if progress:
        ids = tqdm(ids, desc=desc, leave=False)
    # results come back in trial order whatever the worker count
    return Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(config, i) for i in ids)


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None,
                   progress: bool = False) -> List[TrialResult]:
    logger.info("Running %d trials at n=%d (%s kernel)", config.trials, config.n, config.kernel.label)
    return _fan_out(run_trial, config, threads, progress, f"n={config.n}")


def _rule_errors(results: List[TrialResult], rule: StoppingRule, norm: str = "empirical") -> np.ndarray:
    if norm == "population":
        vals = [r.outcomes[rule].pop_error for r in results]
        if any(v is None for v in vals):
            raise ConfigurationError("Population errors were not computed; set quadrature_points")
        return np.asarray(vals, dtype=float)
    return np.asarray([r.outcomes[rule].emp_error for r in results], dtype=float)


def summarize(results: List[TrialResult], n: int, rules: Optional[Sequence[StoppingRule]] = None) -> List[RuleSummary]:
    if not results:
        return []
    rules = rules or list(results[0].outcomes)
    rows = []
    for rule in rules:
        errs = _rule_errors(results, rule)
        stops = np.asarray([r.outcomes[rule].record.T for r in results], dtype=float)
        pops = [r.outcomes[rule].pop_error for r in results]
        rows.append(RuleSummary(
            n=n,
            rule=rule,
            mean_mse=float(errs.mean()),
            stderr_mse=float(errs.std(ddof=1) / math.sqrt(errs.shape[0])) if errs.shape[0] > 1 else None,
            mean_T=float(stops.mean()),
            mean_pop_mse=None if any(p is None for p in pops) else float(np.mean(pops)),
        ))
    return rows


# ---------------- RATE LAWS ---------------- #

def rate_sweep(template: ExperimentConfig, n_values: Sequence[int],
               rule: StoppingRule = StoppingRule.DATA_DEPENDENT, norm: str = "empirical",
               threads: Optional[int] = None, progress: bool = False) -> RateTable:
    """Mean squared error at the stopping time per n, and a line fit of MSE^(-3/2) on n."""
    ns = [int(v) for v in n_values]
    if not ns:
        raise ConfigurationError("Rate sweep needs at least one sample size")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigurationError("Sample sizes must be strictly ascending", n_values=ns)
    if norm not in ("empirical", "population"):
        raise ConfigurationError("Norm must be 'empirical' or 'population'", norm=norm)
    if norm == "population" and template.quadrature_points < 2:
        template = template.model_copy(update={"quadrature_points": get_settings().quadrature_points})

    base = template.model_copy(update={"rules": (rule,)})
    rows = []
    for n in ns:
        results = run_experiment(base.with_n(n), threads=threads, progress=progress)
        mse = float(_rule_errors(results, rule, norm).mean())
        rows.append(RateRow(n=n, mean_mse=mse, inv_mse_32=mse ** -1.5 if mse > 0 else math.inf,
                            scaled_mse=n * mse))
        logger.info("n=%d mean MSE %.6g", n, mse)

    if len(rows) < 2:
        logger.warning("Rate sweep over a single sample size; no fit")
        return RateTable(rows=rows, degenerate=True)
    fit = stats.linregress([r.n for r in rows], [r.inv_mse_32 for r in rows])
    return RateTable(rows=rows, fit=RateFit(slope=float(fit.slope), intercept=float(fit.intercept),
                                            r2=float(fit.rvalue ** 2)))


# ---------------- TRACES AND BOUNDS ---------------- #

def _trace_trial(config: ExperimentConfig, trial_id: int, iters: int) -> Dict[str, np.ndarray]:
    data = generate_data(config, trial_id)
    K = empirical_kernel_for(config, data.design)
    y = K.sort(data.responses)
    sigma, _ = resolve_sigma(config, y)
    path = descent_path(K, y, config.schedule, iters, fstar_vals=K.sort(data.fstar_vals),
                        noise=K.sort(data.noise), sigma=sigma)
    return {"emp_error": path.emp_error, "bias_sq": path.bias_sq,
            "variance": path.variance, "sure_risk": path.sure_risk}


def mean_error_trace(config: ExperimentConfig, iters: int, threads: Optional[int] = None,
                     progress: bool = False) -> Dict[str, np.ndarray]:
    """Trial-averaged traces for t = 0..iters, plus eta_t."""
    if iters < 0:
        raise ConfigurationError("Iteration count must be nonnegative", iters=iters)
    per_trial = _fan_out(lambda c, i: _trace_trial(c, i, iters), config, threads, progress, "traces")
    out = {key: np.mean([tr[key] for tr in per_trial], axis=0) for key in per_trial[0]}
    out["eta"] = config.schedule.etas(iters)
    return out


def bound_coverage(results: List[TrialResult], constant: Optional[float] = None) -> float:
    """Fraction of trials with ||f^T - f*||_n^2 <= c eps_hat^2 at the data-dependent stop."""
    c = constant or get_settings().constants.bound_constant
    hits = [r.outcomes[StoppingRule.DATA_DEPENDENT].emp_error <= c * r.eps_hat ** 2 for r in results]
    return float(np.mean(hits))


def _early_trace(config: ExperimentConfig, trial_id: int) -> Tuple[int, np.ndarray]:
    data = generate_data(config, trial_id)
    K = empirical_kernel_for(config, data.design)
    y = K.sort(data.responses)
    sigma, _ = resolve_sigma(config, y)
    record = stop_data_dependent(config.schedule, EmpiricalComplexity.from_kernel(K), sigma, config.iteration_cap)
    path = descent_path(K, y, config.schedule, record.T, fstar_vals=K.sort(data.fstar_vals))
    return record.T, path.emp_error


def early_descent_bound(config: ExperimentConfig, slack: float = 0.2,
                        threads: Optional[int] = None) -> PropertyReport:
    """Trial mean of ||f^t - f*||_n^2 against 4/(e eta_t) for 1 <= t <= T of each trial."""
    traces = _fan_out(_early_trace, config, threads, False, "early")
    longest = max(T for T, _ in traces)
    report = PropertyReport(name="early_descent_bound")
    if longest == 0:
        return report
    sums = np.zeros(longest + 1)
    counts = np.zeros(longest + 1)
    for T, trace in traces:
        sums[: T + 1] += trace[: T + 1]
        counts[: T + 1] += 1
    etas = config.schedule.etas(longest)
    for t in range(1, longest + 1):
        mean = sums[t] / counts[t]
        bound = 4.0 / (math.e * etas[t])
        report.record(bound * (1.0 + slack) - mean, note=f"t={t} mean={mean:.6g} bound={bound:.6g}")
    return report


# ---------------- RIDGE COMPARISON ---------------- #

class RidgeComparison(FrozenModel):
    nus: np.ndarray
    krr_error: np.ndarray
    etas: np.ndarray
    descent_error: np.ndarray
    rank_correlation: float
    nu_hat: float


def _ridge_trial(config: ExperimentConfig, trial_id: int, nu_grid: np.ndarray,
                 iters: int) -> Tuple[np.ndarray, np.ndarray, float]:
    data = generate_data(config, trial_id)
    K = empirical_kernel_for(config, data.design)
    y = K.sort(data.responses)
    fstar_vals = K.sort(data.fstar_vals)
    sigma, _ = resolve_sigma(config, y)
    ridge = krr_path(K, y, nu_grid, fstar_vals)
    path = descent_path(K, y, config.schedule, iters, fstar_vals=fstar_vals)
    nu_hat = choose_nu(EmpiricalComplexity.from_kernel(K), sigma)
    return ridge.errors, path.emp_error[1:], nu_hat


def compare_ridge_path(config: ExperimentConfig, nu_grid: Sequence[float], iters: int,
                       threads: Optional[int] = None) -> RidgeComparison:
    """Trial-averaged KRR error over nu next to the descent error over t = 1..iters."""
    nus = np.asarray(nu_grid, dtype=float)
    if iters < 1:
        raise ConfigurationError("Descent comparison needs at least one iteration", iters=iters)
    per_trial = _fan_out(lambda c, i: _ridge_trial(c, i, nus, iters), config, threads, False, "krr")
    krr = np.mean([p[0] for p in per_trial], axis=0)
    desc = np.mean([p[1] for p in per_trial], axis=0)
    if krr.shape[0] > 1 and krr.shape[0] == desc.shape[0]:
        rho = float(stats.spearmanr(krr, desc).correlation)
    else:
        rho = float("nan")
    return RidgeComparison(nus=nus, krr_error=krr, etas=config.schedule.etas(iters)[1:], descent_error=desc,
                           rank_correlation=rho, nu_hat=float(np.mean([p[2] for p in per_trial])))


def ridge_bound_coverage(config: ExperimentConfig, constant: Optional[float] = None,
                         threads: Optional[int] = None) -> Tuple[float, float]:
    """Fractions of trials with the KRR error at nu_hat below c eps_hat^2, and below 2/nu for nu <= nu_hat."""
    c = constant or get_settings().constants.bound_constant

    def one(cfg: ExperimentConfig, trial_id: int) -> Tuple[bool, bool]:
        data = generate_data(cfg, trial_id)
        K = empirical_kernel_for(cfg, data.design)
        y = K.sort(data.responses)
        fstar_vals = K.sort(data.fstar_vals)
        sigma, _ = resolve_sigma(cfg, y)
        ec = EmpiricalComplexity.from_kernel(K)
        eps = critical_empirical_radius(ec, sigma).value
        nu_hat = choose_nu(ec, sigma)
        at_hat = float(np.mean((solve_krr(K, y, nu_hat) - fstar_vals) ** 2)) <= c * eps ** 2
        grid = nu_hat * np.logspace(-2, 0, 10)
        below = krr_path(K, y, grid, fstar_vals).errors <= 2.0 / grid
        return at_hat, bool(np.all(below))

    hits = _fan_out(one, config, threads, False, "ridge")
    return float(np.mean([h[0] for h in hits])), float(np.mean([h[1] for h in hits]))
