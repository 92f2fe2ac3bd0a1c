import pytest

from earlystop.app.schemas import PropertyReport
from earlystop.app.verify import (
    CHECKS,
    check_critical_radius,
    check_decomposition,
    check_recursion_equivalence,
    check_shrinkage_bounds,
    check_stopping_sandwich,
    run_suite,
)


@pytest.mark.parametrize("check, samples", [
    (check_shrinkage_bounds, 100),
    (check_decomposition, 4),
    (check_recursion_equivalence, 3),
    (check_critical_radius, 10),
    (check_stopping_sandwich, 50),
])
def test_checks_pass_on_small_batches(check, samples):
    report = check(samples=samples, seed=3)
    assert report.passed, report.details
    assert report.instances >= samples
    assert report.worst_margin > float("-inf")


def test_checks_are_deterministic():
    a = check_stopping_sandwich(samples=20, seed=9)
    b = check_stopping_sandwich(samples=20, seed=9)
    assert a.worst_margin == b.worst_margin
    assert a.details == b.details
    c = check_stopping_sandwich(samples=20, seed=10)
    assert c.worst_margin != a.worst_margin


def test_sandwich_margin_is_not_pinned_by_single_step_stops():
    # seeds 9 and 10 both draw instances that stop after one step
    for seed in (9, 10):
        report = check_stopping_sandwich(samples=20, seed=seed)
        assert report.passed, report.details
        assert report.worst_margin != 0.0


def test_report_counts_violations():
    report = PropertyReport(name="toy")
    report.record(0.5)
    report.record(-1e-13, slack=1e-12)
    report.record(-0.2, note="too small")
    assert report.instances == 3
    assert report.violations == 1
    assert report.worst_margin == -0.2
    assert report.details == ["too small"]
    assert not report.passed


def test_run_suite_covers_every_check():
    reports = run_suite(seed=1, samples=2, threads=1)
    assert [r.name for r in reports] == list(CHECKS)
    assert all(r.passed for r in reports)


def test_run_suite_subset():
    reports = run_suite(seed=1, samples=5, threads=2, only=["critical_radius"])
    assert len(reports) == 1
    assert reports[0].name == "critical_radius"
