# earlystop/app/main.py
import functools
import logging
import math
import sys
import time
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import coloredlogs
import numpy as np
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from .. import __version__
from .artifacts import line_plot, read_manifest, write_csv, write_manifest
from .complexity import (
    EmpiricalComplexity,
    PopulationComplexity,
    critical_empirical_radius,
    critical_population_radius,
    predicted_rate,
)
from .descent import default_cap
from .errors import AcceptanceError, ConfigurationError, EarlyStopError
from .experiments import (
    DesignKind,
    ExperimentConfig,
    SigmaSource,
    TargetKind,
    bound_coverage,
    compare_ridge_path,
    design_points,
    early_descent_bound,
    mean_error_trace,
    rate_sweep,
    ridge_bound_coverage,
    run_experiment,
    summarize,
)
from .kernels import DecayKind, KernelFamily, build_empirical_kernel
from .parser import parse_grid, parse_kernel_spec, parse_n_list, parse_rules, parse_schedule
from .ridge import choose_nu
from .schemas import RunManifest, StoppingRule
from .settings import get_settings
from .stopping import stop_data_dependent
from .verify import CHECKS, run_suite

logger = logging.getLogger("earlystop")
console = Console()

app = typer.Typer(help="Early-stopped kernel gradient descent experiments.", no_args_is_help=True,
                  add_completion=False)

STATE: Dict[str, Any] = {"threads": None}
COMMANDS: Dict[str, Callable[..., None]] = {}


# ---------------- PLUMBING ---------------- #

def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    return value


def _guarded(name: str):
    """Register a command for replay and map module errors onto exit codes."""
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except EarlyStopError as exc:
                logger.error("[%s] %s", type(exc).__name__, exc)
                raise typer.Exit(code=exc.exit_code)
        COMMANDS[name] = wrapper
        return wrapper
    return decorate


def _progress() -> bool:
    return sys.stderr.isatty()


def _config(n: int, kernel: str, sigma: float, step: str, seed: int, trials: int, design: Any,
            target: Any, known_sigma: bool, **extra: Any) -> ExperimentConfig:
    k = parse_kernel_spec(kernel)
    if target:
        tgt = TargetKind(target)
    else:
        # the polynomial kernel cannot represent the kink of abs_shift
        tgt = TargetKind.PARABOLA if k.family == KernelFamily.POLYNOMIAL else TargetKind.ABS_SHIFT
    try:
        return ExperimentConfig(
            n=n, design=DesignKind(design), target=tgt, sigma_true=sigma, kernel=k,
            schedule=parse_schedule(step), trials=trials, seed=seed,
            sigma_source=SigmaSource.KNOWN if known_sigma else SigmaSource.ESTIMATED, **extra,
        )
    except ValidationError as exc:
        raise ConfigurationError("Invalid experiment configuration", errors=exc.error_count()) from exc


def _finish(subcommand: str, params: Dict[str, Any], out: Path, outputs: List[Path], started: float) -> None:
    manifest = RunManifest(
        subcommand=subcommand,
        config={k: _plain(v) for k, v in params.items()},
        seed=int(params.get("seed", 0)),
        outputs=[p.name for p in outputs],
        version=__version__,
        wall_clock=time.perf_counter() - started,
    )
    write_manifest(out, manifest)
    logger.info("Wrote %d files to %s", len(outputs) + 1, out)


def _fail(what: str, failures: List[str]) -> None:
    if failures:
        raise AcceptanceError(f"{what} check failed: " + "; ".join(failures))


@app.callback()
def main(
    threads: Optional[int] = typer.Option(None, envvar="EARLYSTOP_THREADS", help="Worker threads for trials."),
    log_level: Optional[str] = typer.Option(None, help="Override the configured log level."),
):
    settings = get_settings()
    STATE["threads"] = threads or settings.threads
    coloredlogs.install(level=(log_level or settings.log_level).upper(),
                        fmt="%(asctime)s %(name)s %(levelname)s %(message)s")


# ---------------- PATH ---------------- #

@app.command("path")
@_guarded("path")
def cmd_path(
    kernel: str = typer.Option("sobolev1", help="sobolev1 | gaussian:<bw> | poly:<d>"),
    n: int = typer.Option(100),
    sigma: float = typer.Option(1.0, help="True noise standard deviation."),
    step: str = typer.Option("0.25", help="Constant step, or a comma list of non-increasing steps."),
    iters: int = typer.Option(100),
    trials: int = typer.Option(1, help="Trials averaged into each trace."),
    seed: int = typer.Option(0),
    design: DesignKind = typer.Option(DesignKind.FIXED),
    target: Optional[TargetKind] = typer.Option(None),
    known_sigma: bool = typer.Option(False, help="Give SURE the true sigma instead of the estimate."),
    out: Path = typer.Option(Path("out/path")),
    svg: bool = typer.Option(False),
    check: bool = typer.Option(False, help="Require the error minimum within iterations 5..40."),
):
    """Error, bias, variance and SURE traces along the descent path."""
    params = dict(locals())
    started = time.perf_counter()
    out = Path(out)
    config = _config(n, kernel, sigma, step, seed, trials, design, target, known_sigma)
    traces = mean_error_trace(config, iters, threads=STATE["threads"], progress=_progress())

    ts = range(1, iters + 1)
    outputs = [write_csv(out / "path.csv", ["t", "eta_t", "emp_error", "bias_sq", "variance", "sure_risk"],
                         ([t, traces["eta"][t], traces["emp_error"][t], traces["bias_sq"][t],
                           traces["variance"][t], traces["sure_risk"][t]] for t in ts))]
    if svg and iters > 0:
        xs = list(ts)
        outputs.append(line_plot(out / "path.svg", {
            "error": (xs, traces["emp_error"][1:]),
            "squared bias": (xs, traces["bias_sq"][1:]),
            "variance": (xs, traces["variance"][1:]),
        }, xlabel="iteration t", ylabel="squared error", title=f"{config.kernel.label}, n={n}"))
    _finish("path", params, out, outputs, started)

    if iters > 0:
        best = int(np.argmin(traces["emp_error"][1:])) + 1
        console.print(f"minimum empirical error {traces['emp_error'][best]:.6g} at t={best}")
        if check:
            _fail("path", [] if 5 <= best <= 40 else [f"minimum at t={best}, outside [5, 40]"])


# ---------------- RULE COMPARISON ---------------- #

@app.command("compare-rules")
@_guarded("compare-rules")
def cmd_compare_rules(
    n_list: str = typer.Option("50,100,200", help="Comma-separated sample sizes."),
    trials: Optional[int] = typer.Option(None, help="Defaults to the configured trial count."),
    rules: str = typer.Option("all", help="all, or a list of data_dependent, holdout, sure, oracle."),
    kernel: str = typer.Option("sobolev1"),
    sigma: float = typer.Option(1.0),
    step: str = typer.Option("0.25"),
    seed: int = typer.Option(0),
    design: DesignKind = typer.Option(DesignKind.FIXED),
    target: Optional[TargetKind] = typer.Option(None),
    known_sigma: bool = typer.Option(False),
    population: bool = typer.Option(False, help="Also report population-norm errors."),
    out: Path = typer.Option(Path("out/compare")),
    svg: bool = typer.Option(False),
    check: bool = typer.Option(False, help="Require data_dependent <= 1.1 x min(holdout, sure)."),
):
    """Mean squared error at the stopping time of each rule, across sample sizes."""
    trials = trials or get_settings().default_trials
    params = dict(locals())
    started = time.perf_counter()
    out = Path(out)
    ns = parse_n_list(n_list)
    chosen = parse_rules(rules)
    quad = get_settings().quadrature_points if population else 0
    config = _config(ns[0], kernel, sigma, step, seed, trials, design, target, known_sigma,
                     rules=chosen, quadrature_points=quad)

    summaries = []
    coverage = {}
    for n in ns:
        results = run_experiment(config.with_n(n), threads=STATE["threads"], progress=_progress())
        summaries.extend(summarize(results, n, chosen))
        if StoppingRule.DATA_DEPENDENT in chosen:
            coverage[n] = bound_coverage(results)

    header = ["n", "rule", "mean_mse", "stderr_mse", "mean_T"] + (["mean_pop_mse"] if population else [])
    rows = [[s.n, s.rule.value, s.mean_mse, s.stderr_mse, s.mean_T] + ([s.mean_pop_mse] if population else [])
            for s in summaries]
    outputs = [write_csv(out / "compare_rules.csv", header, rows)]
    if svg:
        series = {rule.value: ([s.n for s in summaries if s.rule == rule],
                               [s.mean_mse for s in summaries if s.rule == rule]) for rule in chosen}
        outputs.append(line_plot(out / "compare_rules.svg", series, xlabel="sample size n",
                                 ylabel="mean squared error", logx=True, logy=True, markers=True))
    _finish("compare-rules", params, out, outputs, started)

    table = Table(title=f"{config.kernel.label}, {trials} trials")
    for col in ("n", "rule", "mean_mse", "stderr", "mean_T"):
        table.add_column(col)
    for s in summaries:
        table.add_row(str(s.n), s.rule.value, f"{s.mean_mse:.5g}",
                      "-" if s.stderr_mse is None else f"{s.stderr_mse:.2g}", f"{s.mean_T:.1f}")
    console.print(table)
    for n, frac in coverage.items():
        console.print(f"n={n}: {frac:.1%} of trials within the 12 eps^2 bound")

    if check:
        needed = {StoppingRule.DATA_DEPENDENT, StoppingRule.HOLDOUT, StoppingRule.SURE}
        if not needed <= set(chosen):
            raise ConfigurationError("--check needs the data_dependent, holdout and sure rules")
        failures = []
        for n in ns:
            by_rule = {s.rule: s.mean_mse for s in summaries if s.n == n}
            rival = min(by_rule[StoppingRule.HOLDOUT], by_rule[StoppingRule.SURE])
            if by_rule[StoppingRule.DATA_DEPENDENT] > 1.1 * rival:
                failures.append(f"n={n}: {by_rule[StoppingRule.DATA_DEPENDENT]:.4g} > 1.1 x {rival:.4g}")
        _fail("compare-rules", failures)


# ---------------- RATE ---------------- #

@app.command("rate")
@_guarded("rate")
def cmd_rate(
    n_list: str = typer.Option("50,100,200,300"),
    trials: Optional[int] = typer.Option(None),
    rule: str = typer.Option("data_dependent"),
    norm: str = typer.Option("empirical", help="empirical | population"),
    kernel: str = typer.Option("sobolev1"),
    sigma: float = typer.Option(1.0),
    step: str = typer.Option("0.25"),
    seed: int = typer.Option(0),
    design: DesignKind = typer.Option(DesignKind.FIXED),
    target: Optional[TargetKind] = typer.Option(None),
    known_sigma: bool = typer.Option(False),
    out: Path = typer.Option(Path("out/rate")),
    svg: bool = typer.Option(False),
    check: bool = typer.Option(False, help="R^2 >= 0.95, or n*MSE within a factor 2 for finite-rank kernels."),
):
    """Mean squared error against n, with a line fit of MSE^(-3/2) on n."""
    trials = trials or get_settings().default_trials
    params = dict(locals())
    started = time.perf_counter()
    out = Path(out)
    chosen = parse_rules(rule)
    if len(chosen) != 1:
        raise ConfigurationError("rate takes a single rule", rule=rule)
    ns = parse_n_list(n_list)
    config = _config(ns[0], kernel, sigma, step, seed, trials, design, target, known_sigma)
    table = rate_sweep(config, ns, rule=chosen[0], norm=norm, threads=STATE["threads"], progress=_progress())

    outputs = [write_csv(out / "rate.csv", ["n", "mean_mse", "inv_mse_32", "scaled_mse"],
                         ([r.n, r.mean_mse, r.inv_mse_32, r.scaled_mse] for r in table.rows))]
    if table.fit is not None:
        outputs.append(write_csv(out / "rate_fit.csv", ["slope", "intercept", "r2"],
                                 [[table.fit.slope, table.fit.intercept, table.fit.r2]]))
    if svg:
        outputs.append(line_plot(out / "rate.svg", {"MSE^-3/2": ([r.n for r in table.rows],
                                                                 [r.inv_mse_32 for r in table.rows])},
                                 xlabel="sample size n", ylabel="MSE^(-3/2)", markers=True))
    _finish("rate", params, out, outputs, started)

    for r in table.rows:
        console.print(f"n={r.n}: mean MSE {r.mean_mse:.6g}, n*MSE {r.scaled_mse:.4g}")
    if table.fit is not None:
        console.print(f"fit slope {table.fit.slope:.6g}, intercept {table.fit.intercept:.6g}, R^2 {table.fit.r2:.4f}")
    else:
        console.print("single sample size: no fit")

    if check:
        decay = config.kernel.population_decay
        if decay is not None and decay.kind == DecayKind.FINITE_RANK:
            scaled = [r.scaled_mse for r in table.rows]
            ratio = max(scaled) / min(scaled)
            _fail("rate", [] if ratio <= 2.0 else [f"n*MSE varies by a factor {ratio:.3g}"])
        elif table.fit is None:
            _fail("rate", ["no fit over a single sample size"])
        else:
            _fail("rate", [] if table.fit.r2 >= 0.95 else [f"R^2 = {table.fit.r2:.4f} < 0.95"])


# ---------------- KRR ---------------- #

@app.command("krr")
@_guarded("krr")
def cmd_krr(
    n: int = typer.Option(100),
    sigma: float = typer.Option(1.0),
    kernel: str = typer.Option("sobolev1"),
    nu_grid: str = typer.Option("1:100:100", help="start:stop:count, log:start:stop:count or a list."),
    iters: int = typer.Option(100),
    step: str = typer.Option("1.0", help="With step 1, eta_t = t lines up with the nu grid."),
    trials: int = typer.Option(1),
    seed: int = typer.Option(0),
    design: DesignKind = typer.Option(DesignKind.FIXED),
    target: Optional[TargetKind] = typer.Option(None),
    known_sigma: bool = typer.Option(False),
    out: Path = typer.Option(Path("out/krr")),
    svg: bool = typer.Option(False),
    check: bool = typer.Option(False, help="Require Spearman correlation >= 0.8 between the two curves."),
):
    """Kernel ridge error over nu beside the descent error over t."""
    params = dict(locals())
    started = time.perf_counter()
    out = Path(out)
    config = _config(n, kernel, sigma, step, seed, trials, design, target, known_sigma)
    cmp = compare_ridge_path(config, parse_grid(nu_grid), iters, threads=STATE["threads"])

    outputs = [
        write_csv(out / "krr_path.csv", ["nu", "krr_error"], zip(cmp.nus, cmp.krr_error)),
        write_csv(out / "descent_path.csv", ["t", "eta_t", "descent_error"],
                  ([t, eta, err] for t, (eta, err) in enumerate(zip(cmp.etas, cmp.descent_error), start=1))),
        write_csv(out / "krr_summary.csv", ["rank_correlation", "nu_hat"], [[cmp.rank_correlation, cmp.nu_hat]]),
    ]
    if svg:
        outputs.append(line_plot(out / "krr.svg", {
            "ridge (x = nu)": (cmp.nus, cmp.krr_error),
            "descent (x = eta_t)": (cmp.etas, cmp.descent_error),
        }, xlabel="nu or eta_t", ylabel="squared error", title=f"sigma^2 = {sigma ** 2:g}"))
    _finish("krr", params, out, outputs, started)

    console.print(f"Spearman rank correlation {cmp.rank_correlation:.4f}; nu_hat {cmp.nu_hat:.6g}")
    if check:
        rho = cmp.rank_correlation
        _fail("krr", [] if not math.isnan(rho) and rho >= 0.8 else [f"rank correlation {rho:.4f} < 0.8"])


# ---------------- CRITICAL RADIUS ---------------- #

@app.command("critical-radius")
@_guarded("critical-radius")
def cmd_critical_radius(
    kernel: str = typer.Option("sobolev1"),
    n: int = typer.Option(100),
    sigma: float = typer.Option(1.0),
    step: str = typer.Option("0.25"),
    seed: int = typer.Option(0),
    design: DesignKind = typer.Option(DesignKind.FIXED),
    out: Optional[Path] = typer.Option(None, help="Also write critical_radius.csv here."),
):
    """Critical empirical radius, stopping time and ridge parameter for one design."""
    params = dict(locals())
    started = time.perf_counter()
    settings = get_settings()
    config = _config(n, kernel, sigma, step, seed, 1, design, None, True)
    K = build_empirical_kernel(config.kernel, design_points(config, 0))
    ec = EmpiricalComplexity.from_kernel(K)
    radius = critical_empirical_radius(ec, sigma)
    record = stop_data_dependent(config.schedule, ec, sigma, default_cap(n))

    rows = [
        ["eps_hat", radius.value],
        ["eps_hat_sq", radius.value ** 2],
        ["residual", radius.residual],
        ["bisection_iterations", radius.solver_iterations],
        ["T_hat", record.T],
        ["nu_hat", choose_nu(ec, sigma)],
    ]
    decay = config.kernel.population_decay
    if decay is not None:
        pc = PopulationComplexity(decay=decay, n=n, truncation=settings.solver.population_truncation)
        rows.append(["eps_n", critical_population_radius(pc, sigma).value])
        rows.append(["predicted_rate", predicted_rate(decay, sigma, n)])

    table = Table(title=f"{config.kernel.label}, n={n}, sigma={sigma:g}")
    table.add_column("quantity")
    table.add_column("value")
    for name, value in rows:
        table.add_row(name, f"{value:.12g}" if isinstance(value, float) else str(value))
    console.print(table)

    if out is not None:
        out = Path(out)
        outputs = [write_csv(out / "critical_radius.csv", ["quantity", "value"], rows)]
        _finish("critical-radius", params, out, outputs, started)


# ---------------- BOUNDS ---------------- #

@app.command("bounds")
@_guarded("bounds")
def cmd_bounds(
    n: int = typer.Option(100),
    trials: Optional[int] = typer.Option(None),
    kernel: str = typer.Option("sobolev1"),
    sigma: float = typer.Option(1.0),
    step: str = typer.Option("0.25"),
    seed: int = typer.Option(0),
    design: DesignKind = typer.Option(DesignKind.FIXED),
    target: Optional[TargetKind] = typer.Option(None),
    known_sigma: bool = typer.Option(False),
    out: Path = typer.Option(Path("out/bounds")),
    check: bool = typer.Option(False, help="Require 90% coverage and the early-descent bound."),
):
    """Monte Carlo coverage of the error bounds at the data-dependent stop and at nu_hat."""
    trials = trials or get_settings().default_trials
    params = dict(locals())
    started = time.perf_counter()
    out = Path(out)
    config = _config(n, kernel, sigma, step, seed, trials, design, target, known_sigma,
                     rules=(StoppingRule.DATA_DEPENDENT,))
    threads = STATE["threads"]
    results = run_experiment(config, threads=threads, progress=_progress())
    coverage = bound_coverage(results)
    early = early_descent_bound(config, threads=threads)
    at_nu_hat, below_nu_hat = ridge_bound_coverage(config, threads=threads)

    rows = [
        ["stop_bound_coverage", coverage, 0.9, coverage >= 0.9],
        ["early_descent_bound", early.worst_margin, 0.0, early.passed],
        ["ridge_bound_coverage", at_nu_hat, 0.9, at_nu_hat >= 0.9],
        ["ridge_inverse_nu_coverage", below_nu_hat, 0.9, below_nu_hat >= 0.9],
    ]
    outputs = [write_csv(out / "bounds.csv", ["quantity", "value", "threshold", "passed"], rows)]
    _finish("bounds", params, out, outputs, started)
    for name, value, threshold, passed in rows:
        console.print(f"{name}: {value:.4g} (threshold {threshold:g}) {'ok' if passed else 'FAIL'}")
    if check:
        _fail("bounds", [r[0] for r in rows if not r[3]])


# ---------------- VERIFY ---------------- #

@app.command("verify")
@_guarded("verify")
def cmd_verify(
    seed: int = typer.Option(0),
    samples: Optional[int] = typer.Option(None, help="Instances per check; defaults per check."),
    only: str = typer.Option("", help="Comma list of checks to run."),
    out: Optional[Path] = typer.Option(None),
):
    """Run the property suite; exits 4 on any violation."""
    params = dict(locals())
    started = time.perf_counter()
    names = [s.strip() for s in only.split(",") if s.strip()] or None
    unknown = [s for s in (names or []) if s not in CHECKS]
    if unknown:
        raise ConfigurationError("Unknown check", checks=unknown, known=sorted(CHECKS))
    reports = run_suite(seed=seed, samples=samples, threads=STATE["threads"], only=names)

    table = Table(title="property suite")
    for col in ("check", "instances", "violations", "worst margin", "status"):
        table.add_column(col)
    for r in reports:
        table.add_row(r.name, str(r.instances), str(r.violations), f"{r.worst_margin:.3g}",
                      "pass" if r.passed else "FAIL")
    console.print(table)

    if out is not None:
        out = Path(out)
        outputs = [write_csv(out / "verify.csv", ["check", "instances", "violations", "worst_margin", "passed"],
                             ([r.name, r.instances, r.violations, r.worst_margin, r.passed] for r in reports))]
        _finish("verify", params, out, outputs, started)
    _fail("verify", [f"{r.name} ({r.violations} violations)" for r in reports if not r.passed])


# ---------------- REPLAY ---------------- #

@app.command("replay")
@_guarded("replay")
def cmd_replay(
    manifest: Path = typer.Argument(..., help="manifest.json, or the directory holding it."),
    out: Optional[Path] = typer.Option(None, help="Write into this directory instead."),
):
    """Re-run the command recorded in a manifest."""
    recorded = read_manifest(manifest)
    command = COMMANDS.get(recorded.subcommand)
    if command is None or recorded.subcommand == "replay":
        raise ConfigurationError("Manifest names an unknown subcommand", subcommand=recorded.subcommand)
    params = dict(recorded.config)
    if out is not None:
        params["out"] = str(out)
    logger.info("Replaying %s from %s", recorded.subcommand, manifest)
    command(**params)


if __name__ == "__main__":
    app()
