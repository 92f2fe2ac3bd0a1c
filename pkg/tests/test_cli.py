import json
import math

import pytest
from typer.testing import CliRunner

from earlystop.app.artifacts import read_csv
from earlystop.app.main import app

runner = CliRunner()


def invoke(*args, env=None):
    return runner.invoke(app, [str(a) for a in args], env=env)


def test_path_with_zero_iterations(tmp_path):
    result = invoke("path", "--n", 20, "--iters", 0, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    header, rows = read_csv(tmp_path / "path.csv")
    assert header == ["t", "eta_t", "emp_error", "bias_sq", "variance", "sure_risk"]
    assert rows == []
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "path"
    assert manifest["outputs"] == ["path.csv"]


def test_path_is_deterministic(tmp_path):
    for name in ("a", "b"):
        result = invoke("path", "--n", 30, "--iters", 20, "--trials", 2, "--svg", "--out", tmp_path / name)
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a" / "path.csv").read_bytes() == (tmp_path / "b" / "path.csv").read_bytes()
    assert (tmp_path / "a" / "path.svg").read_bytes() == (tmp_path / "b" / "path.svg").read_bytes()
    _, rows = read_csv(tmp_path / "a" / "path.csv")
    assert [r[0] for r in rows] == [str(t) for t in range(1, 21)]
    assert rows[3][1] == "1"


def test_thread_count_does_not_change_output(tmp_path):
    args = ("compare-rules", "--n-list", "20", "--trials", 3, "--rules", "dd,sure")
    assert invoke(*args, "--out", tmp_path / "one").exit_code == 0
    result = invoke(*args, "--out", tmp_path / "two", env={"EARLYSTOP_THREADS": "2"})
    assert result.exit_code == 0, result.output
    one = (tmp_path / "one" / "compare_rules.csv").read_bytes()
    assert one == (tmp_path / "two" / "compare_rules.csv").read_bytes()


def test_compare_rules_single_trial(tmp_path):
    result = invoke("compare-rules", "--n-list", "20", "--trials", 1, "--rules", "oracle", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    header, rows = read_csv(tmp_path / "compare_rules.csv")
    assert header == ["n", "rule", "mean_mse", "stderr_mse", "mean_T"]
    assert len(rows) == 1
    assert rows[0][:2] == ["20", "oracle"]
    assert rows[0][3] == ""


def test_compare_rules_population_column(tmp_path):
    result = invoke("compare-rules", "--n-list", "20", "--trials", 2, "--rules", "dd", "--population",
                    "--out", tmp_path)
    assert result.exit_code == 0, result.output
    header, rows = read_csv(tmp_path / "compare_rules.csv")
    assert header[-1] == "mean_pop_mse"
    assert float(rows[0][-1]) > 0


def test_compare_rules_check_needs_rivals(tmp_path):
    result = invoke("compare-rules", "--n-list", "20", "--trials", 1, "--rules", "oracle", "--check",
                    "--out", tmp_path)
    assert result.exit_code == 2


def test_rate_single_sample_size(tmp_path):
    result = invoke("rate", "--n-list", "20", "--trials", 2, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    header, rows = read_csv(tmp_path / "rate.csv")
    assert header == ["n", "mean_mse", "inv_mse_32", "scaled_mse"]
    assert len(rows) == 1
    assert not (tmp_path / "rate_fit.csv").exists()

    checked = invoke("rate", "--n-list", "20", "--trials", 2, "--check", "--out", tmp_path / "checked")
    assert checked.exit_code == 4


def test_rate_fit_file(tmp_path):
    result = invoke("rate", "--n-list", "16,24,32", "--trials", 2, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    header, rows = read_csv(tmp_path / "rate_fit.csv")
    assert header == ["slope", "intercept", "r2"]
    assert len(rows) == 1


def test_krr_single_nu(tmp_path):
    result = invoke("krr", "--n", 20, "--nu-grid", "5", "--iters", 1, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    _, rows = read_csv(tmp_path / "krr_summary.csv")
    assert rows[0][0] == "nan"
    _, ridge = read_csv(tmp_path / "krr_path.csv")
    assert ridge[0][0] == "5"
    _, descent = read_csv(tmp_path / "descent_path.csv")
    assert descent[0][:2] == ["1", "1"]


def test_critical_radius_table(tmp_path):
    result = invoke("critical-radius", "--n", 50, "--sigma", 0.5, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    _, rows = read_csv(tmp_path / "critical_radius.csv")
    names = [r[0] for r in rows]
    assert names == ["eps_hat", "eps_hat_sq", "residual", "bisection_iterations", "T_hat", "nu_hat",
                     "eps_n", "predicted_rate"]
    values = {r[0]: float(r[1]) for r in rows}
    assert values["eps_hat_sq"] == pytest.approx(values["eps_hat"] ** 2)
    assert values["residual"] <= 1e-10


def test_critical_radius_for_tiny_sigma(tmp_path):
    result = invoke("critical-radius", "--kernel", "poly:2", "--n", 100, "--sigma", 1e-12, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    _, rows = read_csv(tmp_path / "critical_radius.csv")
    values = {r[0]: float(r[1]) for r in rows}
    # rank 3 with eps^2 below every positive eigenvalue
    assert values["eps_hat"] == pytest.approx(2 * math.e * 1e-12 * math.sqrt(3 / 100), rel=1e-6)
    assert values["residual"] <= 1e-10


def test_critical_radius_without_decay_model():
    result = invoke("critical-radius", "--kernel", "gaussian:0.5", "--n", 20)
    assert result.exit_code == 0, result.output
    assert "eps_hat" in result.output
    assert "eps_n" not in result.output


@pytest.mark.parametrize("args", [
    ("path", "--kernel", "laplace"),
    ("path", "--step", "0"),
    ("path", "--n", 3),
    ("rate", "--rule", "dd,sure"),
    ("krr", "--nu-grid", "0:1:5"),
    ("verify", "--only", "nonsense"),
])
def test_configuration_errors_exit_2(tmp_path, args):
    result = invoke(*args, "--out", tmp_path) if args[0] != "verify" else invoke(*args)
    assert result.exit_code == 2


def test_step_above_bound_exits_2(tmp_path):
    result = invoke("path", "--kernel", "poly:3", "--n", 10, "--step", "1.0", "--iters", 5, "--out", tmp_path)
    assert result.exit_code == 2


def test_verify_small_run(tmp_path):
    result = invoke("verify", "--samples", 2, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    header, rows = read_csv(tmp_path / "verify.csv")
    assert header == ["check", "instances", "violations", "worst_margin", "passed"]
    assert len(rows) == 5
    assert all(r[4] == "true" for r in rows)


def test_bounds_writes_table(tmp_path):
    result = invoke("bounds", "--n", 20, "--trials", 3, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    _, rows = read_csv(tmp_path / "bounds.csv")
    assert [r[0] for r in rows] == ["stop_bound_coverage", "early_descent_bound", "ridge_bound_coverage",
                                    "ridge_inverse_nu_coverage"]


def test_replay_reproduces_outputs(tmp_path):
    first = invoke("compare-rules", "--n-list", "20,30", "--trials", 2, "--out", tmp_path / "run")
    assert first.exit_code == 0, first.output
    result = invoke("replay", tmp_path / "run", "--out", tmp_path / "again")
    assert result.exit_code == 0, result.output
    assert (tmp_path / "run" / "compare_rules.csv").read_bytes() == \
        (tmp_path / "again" / "compare_rules.csv").read_bytes()
    manifest = json.loads((tmp_path / "again" / "manifest.json").read_text())
    assert manifest["config"]["n_list"] == "20,30"
    assert manifest["config"]["trials"] == 2


def test_replay_missing_manifest(tmp_path):
    assert invoke("replay", tmp_path).exit_code == 2
