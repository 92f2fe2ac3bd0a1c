import numpy as np
import pytest

from earlystop.app.complexity import EmpiricalComplexity
from earlystop.app.errors import ConfigurationError, DegenerateKernelError
from earlystop.app.experiments import abs_shift
from earlystop.app.kernels import build_empirical_kernel, sobolev_kernel
from earlystop.app.ridge import (
    choose_nu,
    krr_path,
    ridge_diagonal,
    ridge_shrinkage,
    solve_krr,
    stationarity_residual,
)


def test_krr_limits(sobolev_K, rng):
    y = rng.standard_normal(sobolev_K.n)
    np.testing.assert_allclose(solve_krr(sobolev_K, y, 1e-12), 0.0, atol=1e-10)
    np.testing.assert_allclose(solve_krr(sobolev_K, y, 1e12), y, atol=1e-6)


def test_krr_matches_dense_solve(sobolev_K, rng):
    y = rng.standard_normal(sobolev_K.n)
    nu = 7.5
    K = sobolev_K.matrix
    dense = K @ np.linalg.solve(K + np.eye(sobolev_K.n) / nu, y)
    fvals = solve_krr(sobolev_K, y, nu)
    np.testing.assert_allclose(fvals, dense, atol=1e-10)
    assert stationarity_residual(sobolev_K, y, nu, fvals) <= 1e-8


def test_nonpositive_nu_is_rejected(sobolev_K):
    with pytest.raises(ConfigurationError):
        solve_krr(sobolev_K, np.zeros(sobolev_K.n), 0.0)
    with pytest.raises(ConfigurationError):
        ridge_diagonal(np.ones(3), -1.0)


def test_ridge_shrinkage_diagonal(sobolev_K):
    shrink = ridge_shrinkage(sobolev_K, 4.0)
    lam = sobolev_K.eigenvalues[: sobolev_K.rank]
    np.testing.assert_allclose(shrink.diag, 1.0 / (1.0 + 4.0 * lam))
    assert np.all((shrink.diag > 0) & (shrink.diag <= 1))
    # bias factor bound R^2 <= 1/(4 nu lambda)
    assert np.all(shrink.diag ** 2 <= 1.0 / (4.0 * 4.0 * lam) + 1e-12)


def test_choose_nu_in_saturation(two_point_ec):
    # below nu = 1 the complexity is saturated, so nu * 0.790569 = 1/4
    nu = choose_nu(two_point_ec, 1.0)
    assert nu == pytest.approx(0.25 / np.sqrt(0.625), rel=1e-8)
    assert nu == pytest.approx(0.316228, abs=1e-6)


def test_choose_nu_shrinks_with_sigma(grid_design):
    ec = EmpiricalComplexity.from_kernel(build_empirical_kernel(sobolev_kernel(), grid_design(50)))
    values = [choose_nu(ec, s) for s in (0.05, 0.1, 0.2, 0.4)]
    assert values == sorted(values, reverse=True)


def test_choose_nu_degenerate():
    ec = EmpiricalComplexity(eigenvalues=np.zeros(3), n=3)
    with pytest.raises(DegenerateKernelError):
        choose_nu(ec, 1.0)


def test_krr_path_rows_match_single_solves(grid_design, rng):
    K = build_empirical_kernel(sobolev_kernel(), grid_design(30))
    fstar = abs_shift(K.design)
    y = fstar + 0.3 * rng.standard_normal(K.n)
    grid = [0.5, 2.0, 10.0, 80.0]
    path = krr_path(K, y, grid, fstar)
    assert path.fvals_per_nu.shape == (4, 30)
    for row, nu in zip(path.fvals_per_nu, grid):
        np.testing.assert_allclose(row, solve_krr(K, y, nu), atol=1e-12)
    np.testing.assert_allclose(path.errors, np.mean((path.fvals_per_nu - fstar) ** 2, axis=1))


def test_krr_path_single_value(sobolev_K, rng):
    y = rng.standard_normal(sobolev_K.n)
    path = krr_path(sobolev_K, y, [3.0])
    assert path.fvals_per_nu.shape == (1, sobolev_K.n)
    assert path.errors is None


@pytest.mark.parametrize("grid", [[], [0.0, 1.0], [-1.0], [2.0, 1.0]])
def test_krr_path_rejects_bad_grids(sobolev_K, grid):
    with pytest.raises(ConfigurationError):
        krr_path(sobolev_K, np.zeros(sobolev_K.n), grid)
