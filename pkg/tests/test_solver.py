import numpy as np
import pytest

from homfield.environment import (
    Conductances,
    EnvironmentLaw,
    apply_operator,
    sample_environment,
)
from homfield.lattice import (
    LatticeField,
    TorusGrid,
    eigenvalue_discrete,
    fourier_mode,
)
from homfield.solver import (
    SolverError,
    green_column,
    pseudo_eigenfunction,
    solve_dense,
    solve_heterogeneous,
    solve_homogeneous,
)


def _random_rhs(grid, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(grid.shape)
    return LatticeField(grid, v - v.mean())


def test_homogeneous_solve_inverts_operator():
    grid = TorusGrid(16, 2)
    rhs = _random_rhs(grid)
    u = solve_homogeneous(grid, rhs)
    assert u.is_mean_zero()
    a = Conductances.constant(grid, 1.0)
    back = apply_operator(a, u)
    assert np.allclose(back.values, rhs.values, atol=1e-9 * np.abs(rhs.values).max())


def test_cg_matches_dense_oracle():
    grid = TorusGrid(8, 2)
    a = sample_environment(EnvironmentLaw.uniform(1, 2), grid, 3)
    rhs = _random_rhs(grid, 1)
    u_cg, report = solve_heterogeneous(a, rhs, tol=1e-12)
    u_dense = solve_dense(a, rhs)
    assert np.allclose(u_cg.values, u_dense.values, atol=1e-9)
    assert report.residual <= 1e-12


def test_one_dimensional_closed_form():
    # in d=1 the flux a u' is constant plus the integrated rhs, so the
    # solution is an explicit double cumulative sum
    N = 32
    grid = TorusGrid(N, 1)
    a = sample_environment(EnvironmentLaw.uniform(1, 2), grid, 7)
    rhs = _random_rhs(grid, 2)
    u, _ = solve_heterogeneous(a, rhs, tol=1e-12)
    w = a.weights[0]
    # flux on edge (x, x+1): N^2 w_x (u_x - u_{x+1}) ; difference of fluxes = rhs
    flux = N**2 * w * (u.values - np.roll(u.values, -1))
    recovered = flux - np.roll(flux, 1)
    assert np.allclose(recovered, rhs.values, atol=1e-7)
    # direct construction: flux recurrence F_x - F_{x-1} = rhs_x fixes the
    # fluxes up to F_0, which the periodicity of u determines; u then follows
    # by one more cumulative sum
    s = np.cumsum(rhs.values) - rhs.values[0]  # F_x - F_0
    f0 = -np.sum(s / w) / np.sum(1.0 / w)
    d = (f0 + s) / (N**2 * w)  # u_x - u_{x+1}
    u_ref = np.concatenate([[0.0], -np.cumsum(d)[:-1]])
    u_ref -= u_ref.mean()
    assert np.allclose(u.values, u_ref, atol=1e-7)


def test_complex_rhs():
    grid = TorusGrid(8, 2)
    a = sample_environment(EnvironmentLaw.uniform(1, 2), grid, 4)
    mode = fourier_mode(grid, (1, 1))
    u, _ = solve_heterogeneous(a, mode, tol=1e-11)
    back = apply_operator(a, u)
    assert np.allclose(back.values, mode.values, atol=1e-7)


def test_mean_zero_enforced():
    grid = TorusGrid(8, 2)
    a = Conductances.constant(grid, 1.0)
    bad = LatticeField(grid, np.ones(grid.shape))
    with pytest.raises(ValueError):
        solve_heterogeneous(a, bad)
    with pytest.raises(ValueError):
        solve_homogeneous(grid, bad)


def test_solver_error_on_iteration_cap():
    grid = TorusGrid(16, 2)
    a = sample_environment(EnvironmentLaw.bernoulli(0.5, 1, 2), grid, 5)
    rhs = _random_rhs(grid, 3)
    with pytest.raises(SolverError) as err:
        solve_heterogeneous(a, rhs, tol=1e-14, maxiter=2)
    assert err.value.report.iterations == 2


def test_energy_history_decreases():
    grid = TorusGrid(16, 2)
    a = sample_environment(EnvironmentLaw.uniform(1, 2), grid, 6)
    rhs = _random_rhs(grid, 4)
    _, report = solve_heterogeneous(a, rhs, tol=1e-10, precondition=False)
    energy = np.asarray(report.energy_history)
    assert len(energy) > 2
    assert np.all(np.diff(energy) <= 1e-12)


def test_green_column_matches_spectral_sum():
    # homogeneous Green's function as an explicit eigen-expansion
    grid = TorusGrid(8, 2)
    y = (1, -2)
    g = green_column(None, grid, y)
    ref = np.zeros(grid.shape, dtype=complex)
    for k0 in grid.coordinates_1d():
        for k1 in grid.coordinates_1d():
            if (k0, k1) == (0, 0):
                continue
            lam = eigenvalue_discrete(grid.N, (k0, k1))
            mode = fourier_mode(grid, (k0, k1))
            ref += mode.values * np.conj(mode.values[grid.index_of(y)]) / lam
    ref /= grid.n
    assert np.allclose(g.values, ref.real, atol=1e-12)


def test_green_symmetry_all_pairs():
    grid = TorusGrid(6, 2)
    a = sample_environment(EnvironmentLaw.uniform(1, 2), grid, 8)
    coords = [(x, y) for x in grid.coordinates_1d() for y in grid.coordinates_1d()]
    cols = {y: green_column(a, grid, y, tol=1e-12) for y in coords}
    for x in coords:
        for y in coords:
            gxy = cols[y].values[grid.index_of(x)]
            gyx = cols[x].values[grid.index_of(y)]
            assert gxy == pytest.approx(gyx, abs=1e-8)


def test_pseudo_eigenfunction_constant_environment():
    grid = TorusGrid(16, 2)
    a = Conductances.constant(grid, 1.5)
    for k in [(1, 0), (2, -3)]:
        phi = pseudo_eigenfunction(a, 1.5, k, tol=1e-12)
        mode = fourier_mode(grid, k)
        assert (phi - mode).norm() < 1e-8


def test_pseudo_eigenfunction_rejects_zero_mode():
    grid = TorusGrid(8, 2)
    a = Conductances.constant(grid, 1.0)
    with pytest.raises(ValueError):
        pseudo_eigenfunction(a, 1.0, (0, 0))
    with pytest.raises(ValueError):
        pseudo_eigenfunction(a, -1.0, (1, 0))
