import math

import numpy as np
import pytest

from earlystop.app.descent import constant_schedule
from earlystop.app.errors import ConfigurationError, TrialError
from earlystop.app.experiments import (
    ALL_RULES,
    DesignKind,
    ExperimentConfig,
    SigmaSource,
    TargetKind,
    abs_shift,
    bound_coverage,
    compare_ridge_path,
    design_points,
    estimate_noise_variance,
    generate_data,
    holdout_split,
    mean_error_trace,
    parabola,
    rate_sweep,
    resolve_sigma,
    run_experiment,
    run_trial,
    summarize,
)
from earlystop.app.kernels import polynomial_kernel
from earlystop.app.schemas import StoppingRule


def small_config(**overrides):
    base = dict(n=20, trials=3, seed=11, cap=60)
    base.update(overrides)
    return ExperimentConfig(**base)


def test_targets():
    np.testing.assert_allclose(abs_shift(np.array([0.0, 0.5, 1.0])), [0.0, -0.5, 0.0])
    np.testing.assert_allclose(parabola(np.array([0.0, 0.5, 1.0])), [0.0, -0.25, 0.0])


def test_fixed_design_grid():
    np.testing.assert_array_equal(design_points(small_config(n=4), 0), [0.25, 0.5, 0.75, 1.0])


def test_uniform_design_is_sorted_and_seeded():
    config = small_config(design=DesignKind.UNIFORM)
    x = design_points(config, 2)
    assert np.all(np.diff(x) >= 0)
    assert np.all((x >= 0) & (x <= 1))
    np.testing.assert_array_equal(x, design_points(config, 2))
    assert not np.array_equal(x, design_points(config, 3))


def test_noiseless_responses_equal_target():
    data = generate_data(small_config(sigma_true=0.0), 0)
    np.testing.assert_array_equal(data.responses, data.fstar_vals)
    np.testing.assert_array_equal(data.fstar_vals, abs_shift(data.design))


def test_generated_data_is_deterministic():
    a = generate_data(small_config(), 5)
    b = generate_data(small_config(), 5)
    np.testing.assert_array_equal(a.responses, b.responses)
    c = generate_data(small_config(seed=12), 5)
    assert not np.array_equal(a.noise, c.noise)


def test_custom_target_needs_callable():
    with pytest.raises(ConfigurationError):
        generate_data(small_config(target=TargetKind.CUSTOM), 0)
    data = generate_data(small_config(target=TargetKind.CUSTOM, target_fn=np.sin, sigma_true=0.0), 0)
    np.testing.assert_allclose(data.responses, np.sin(data.design))


def test_small_n_is_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig(n=3)
    with pytest.raises(ConfigurationError):
        small_config().with_n(2)


def test_noise_variance_estimate():
    assert estimate_noise_variance(np.full(10, 3.0)) == 0.0
    alternating = 0.7 * (-1.0) ** np.arange(12)
    assert estimate_noise_variance(alternating) == pytest.approx(2 * 0.49)
    with pytest.raises(ConfigurationError):
        estimate_noise_variance([1.0, 2.0, 3.0])


def test_noise_variance_estimate_is_close_on_smooth_targets():
    data = generate_data(small_config(n=2000, sigma_true=0.5), 0)
    assert math.sqrt(estimate_noise_variance(data.responses)) == pytest.approx(0.5, rel=0.1)


def test_resolve_sigma_sources():
    data = generate_data(small_config(sigma_true=0.5), 0)
    known, _ = resolve_sigma(small_config(sigma_true=0.5, sigma_source=SigmaSource.KNOWN), data.responses)
    assert known == 0.5
    estimated, sigma_hat = resolve_sigma(small_config(), data.responses)
    assert estimated == sigma_hat
    forced, _ = resolve_sigma(small_config(sigma_override=0.2), data.responses)
    assert forced == 0.2
    floored, _ = resolve_sigma(small_config(sigma_true=0.0, sigma_source=SigmaSource.KNOWN), data.responses)
    assert floored == pytest.approx(1e-12)


def test_holdout_split_partitions_the_sample():
    data = generate_data(small_config(n=21), 0)
    train, test = holdout_split(data, 11, 0)
    assert train.n == 10 and test.n == 11
    merged = np.sort(np.concatenate([train.design, test.design]))
    np.testing.assert_array_equal(merged, data.design)
    assert np.all(np.diff(train.design) > 0) and np.all(np.diff(test.design) > 0)


def test_run_trial_reports_every_rule():
    result = run_trial(small_config(), 0)
    assert set(result.outcomes) == set(ALL_RULES)
    assert result.eps_hat > 0
    for outcome in result.outcomes.values():
        assert 0 <= outcome.record.T <= 60
        assert outcome.emp_error >= 0
        assert outcome.pop_error is None


def test_noiseless_trial_meets_the_stopping_bound():
    config = ExperimentConfig(n=100, trials=1, sigma_true=0.0, rules=(StoppingRule.DATA_DEPENDENT,))
    result = run_trial(config, 0)
    # first differences of |x - 1/2| on the grid all equal 1/n
    assert result.sigma_hat == pytest.approx(1.0 / (100 * math.sqrt(2.0)), rel=1e-6)
    outcome = result.outcomes[StoppingRule.DATA_DEPENDENT]
    assert outcome.emp_error <= 12 * result.eps_hat ** 2


def test_noiseless_finite_rank_trial_runs_to_the_cap():
    config = ExperimentConfig(n=50, trials=1, sigma_true=0.0, kernel=polynomial_kernel(2),
                              target=TargetKind.PARABOLA, rules=(StoppingRule.DATA_DEPENDENT,))
    record = run_trial(config, 0).outcomes[StoppingRule.DATA_DEPENDENT].record
    assert not record.triggered
    assert record.T == 500


def test_run_trial_population_error():
    result = run_trial(small_config(quadrature_points=2001, rules=(StoppingRule.ORACLE,)), 0)
    assert result.outcomes[StoppingRule.ORACLE].pop_error > 0


def test_thread_count_does_not_change_results():
    config = small_config(trials=4)
    one = run_experiment(config, threads=1)
    two = run_experiment(config, threads=2)
    assert [r.trial_id for r in two] == [0, 1, 2, 3]
    for a, b in zip(one, two):
        for rule in ALL_RULES:
            assert a.outcomes[rule].record.T == b.outcomes[rule].record.T
            assert a.outcomes[rule].emp_error == b.outcomes[rule].emp_error


def test_invalid_step_is_wrapped_with_trial_id():
    config = small_config(n=8, kernel=polynomial_kernel(2), schedule=constant_schedule(1.0))
    with pytest.raises(TrialError) as info:
        run_trial(config, 4)
    assert info.value.trial_id == 4
    assert info.value.exit_code == 2


def test_summarize_single_trial_has_no_stderr():
    config = small_config(trials=1, rules=(StoppingRule.ORACLE,))
    rows = summarize(run_experiment(config, threads=1), n=20)
    assert len(rows) == 1
    assert rows[0].rule == StoppingRule.ORACLE
    assert rows[0].stderr_mse is None


def test_summarize_means():
    results = run_experiment(small_config(), threads=1)
    rows = {row.rule: row for row in summarize(results, n=20)}
    dd = [r.outcomes[StoppingRule.DATA_DEPENDENT].emp_error for r in results]
    assert rows[StoppingRule.DATA_DEPENDENT].mean_mse == pytest.approx(np.mean(dd))
    assert rows[StoppingRule.DATA_DEPENDENT].stderr_mse == pytest.approx(np.std(dd, ddof=1) / math.sqrt(3))


def test_rate_sweep_single_n_is_degenerate():
    table = rate_sweep(small_config(trials=2), [20], threads=1)
    assert table.degenerate
    assert table.fit is None
    assert table.rows[0].scaled_mse == pytest.approx(20 * table.rows[0].mean_mse)


def test_rate_sweep_validates_inputs():
    with pytest.raises(ConfigurationError):
        rate_sweep(small_config(), [40, 20])
    with pytest.raises(ConfigurationError):
        rate_sweep(small_config(), [20, 40], norm="sup")
    with pytest.raises(ConfigurationError):
        rate_sweep(small_config(), [])


def test_rate_sweep_fits_a_line():
    table = rate_sweep(small_config(trials=2), [16, 24, 32], threads=1)
    assert not table.degenerate
    assert 0.0 <= table.fit.r2 <= 1.0 + 1e-12
    assert [row.n for row in table.rows] == [16, 24, 32]


def test_mean_error_trace_shapes():
    traces = mean_error_trace(small_config(trials=2), 25, threads=1)
    for key in ("emp_error", "bias_sq", "variance", "sure_risk", "eta"):
        assert traces[key].shape == (26,)
    assert traces["variance"][0] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ConfigurationError):
        mean_error_trace(small_config(), -1)


def test_bound_coverage_is_a_fraction():
    results = run_experiment(small_config(), threads=1)
    assert 0.0 <= bound_coverage(results) <= 1.0
    assert bound_coverage(results, constant=1e9) == 1.0


def test_ridge_comparison_single_point_has_no_correlation():
    comparison = compare_ridge_path(small_config(trials=2), [5.0], 1, threads=1)
    assert math.isnan(comparison.rank_correlation)
    assert comparison.nu_hat > 0
    assert comparison.krr_error.shape == (1,)


def test_ridge_comparison_lines_up():
    comparison = compare_ridge_path(small_config(trials=2), np.arange(1.0, 21.0), 20, threads=1)
    assert comparison.descent_error.shape == (20,)
    np.testing.assert_allclose(comparison.etas, 0.25 * np.arange(1, 21))
    assert -1.0 <= comparison.rank_correlation <= 1.0
