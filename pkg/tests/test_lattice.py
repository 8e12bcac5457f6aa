import numpy as np
import pytest

from homfield.lattice import (
    LatticeField,
    SpectralField,
    TorusGrid,
    dft,
    eigenvalue_continuum,
    eigenvalue_discrete,
    eigenvalues_continuum,
    eigenvalues_discrete,
    fourier_mode,
    idft,
    sobolev_norm,
)


def test_grid_geometry():
    grid = TorusGrid(16, 2)
    assert grid.n == 256
    assert grid.shape == (16, 16)
    assert grid.origin_index == (8, 8)
    coords = grid.coordinates_1d()
    assert coords[0] == -8 and coords[-1] == 7
    assert grid.index_of((0, 0)) == (8, 8)
    assert grid.index_of((-8, 7)) == (0, 15)
    # periodic wrap
    assert grid.index_of((8, -9)) == grid.index_of((-8, 7))


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(1, 2)
    with pytest.raises(ValueError):
        TorusGrid(8, 0)
    grid = TorusGrid(8, 2)
    with pytest.raises(ValueError):
        grid.check_frequency((4, 0))  # window is [-4, 4)
    assert grid.frequency_in_range((-4, 3))


def test_field_inner_product_normalization():
    grid = TorusGrid(8, 2)
    ones = LatticeField(grid, np.ones(grid.shape))
    assert ones.inner(ones) == pytest.approx(1.0)
    assert ones.norm() == pytest.approx(1.0)


def test_fourier_modes_orthonormal():
    grid = TorusGrid(8, 2)
    m1 = fourier_mode(grid, (1, 0))
    m2 = fourier_mode(grid, (2, 3))
    assert m1.inner(m1) == pytest.approx(1.0, abs=1e-13)
    assert abs(m1.inner(m2)) < 1e-13
    assert m1.norm() == pytest.approx(1.0, abs=1e-13)


def test_eigenvalue_relation():
    # half-angle identity as an independent oracle:
    # 4 N^2 sin^2(pi k / N) = 2 N^2 (1 - cos(2 pi k / N))
    for N, k in [(16, (1, 0)), (16, (3, 5)), (64, (7, -2)), (8, (-4, 4 - 8))]:
        lam = eigenvalue_discrete(N, k)
        ref = sum(2.0 * N**2 * (1.0 - np.cos(2 * np.pi * ki / N)) for ki in k)
        assert lam == pytest.approx(ref, rel=1e-13)
    assert eigenvalue_continuum((1, 0)) == pytest.approx(4 * np.pi**2)
    assert eigenvalue_continuum((2, 1)) == pytest.approx(20 * np.pi**2)


def test_eigenvalue_discrete_approaches_continuum():
    k = (1, 0)
    errs = [abs(eigenvalue_discrete(N, k) - eigenvalue_continuum(k)) for N in (16, 32, 64)]
    assert errs[0] > errs[1] > errs[2]
    # O(N^-2) decay of 1/lambda^(N) - 1/lambda
    r = [abs(1 / eigenvalue_discrete(N, k) - 1 / eigenvalue_continuum(k)) * N**2
         for N in (64, 128, 256)]
    assert max(r) / min(r) < 1.1


def test_operator_eigenfunction_identity():
    # modes diagonalize the discrete Laplacian with eigenvalue lambda^(N)_k
    from homfield.environment import Conductances, apply_operator
    grid = TorusGrid(8, 2)
    a = Conductances.constant(grid, 1.0)
    for k in [(1, 0), (2, 3), (-4, 1)]:
        mode = fourier_mode(grid, k)
        out = apply_operator(a, mode)
        lam = eigenvalue_discrete(grid.N, k)
        assert np.allclose(out.values, lam * mode.values, rtol=1e-10, atol=1e-6)


def test_dft_roundtrip_and_parseval():
    grid = TorusGrid(16, 2)
    rng = np.random.default_rng(0)
    f = LatticeField(grid, rng.standard_normal(grid.shape))
    spec = dft(f)
    back = idft(spec)
    assert np.allclose(back.values.real, f.values, atol=1e-12)
    assert np.max(np.abs(back.values.imag)) < 1e-12
    assert spec.l2_norm() == pytest.approx(f.norm(), rel=1e-12)


def test_dft_of_mode_is_delta():
    grid = TorusGrid(8, 2)
    spec = dft(fourier_mode(grid, (2, -1)))
    expected = np.zeros(grid.shape, dtype=complex)
    expected[grid.index_of((2, -1))] = 1.0
    assert np.allclose(spec.coefficients, expected, atol=1e-13)
    assert spec.coefficient((2, -1)) == pytest.approx(1.0)


def test_sobolev_norm_single_mode():
    grid = TorusGrid(16, 2)
    k = (2, 1)
    spec = dft(fourier_mode(grid, k))
    for beta in (0.75, -0.5, 1.0):
        assert sobolev_norm(spec, beta) == pytest.approx(
            eigenvalue_continuum(k) ** beta, rel=1e-12)
        assert sobolev_norm(spec, beta, grid_eigenvalues=True) == pytest.approx(
            eigenvalue_discrete(grid.N, k) ** beta, rel=1e-12)


def test_sobolev_norm_ignores_zero_mode():
    grid = TorusGrid(8, 2)
    spec = SpectralField(grid, np.zeros(grid.shape))
    coeffs = spec.coefficients.copy()
    coeffs[grid.origin_index] = 5.0
    assert sobolev_norm(SpectralField(grid, coeffs), 0.75) == 0.0


def test_eigenvalue_grids_match_scalars():
    grid = TorusGrid(8, 2)
    lam_d = eigenvalues_discrete(grid)
    lam_c = eigenvalues_continuum(grid)
    for k in [(0, 0), (1, 0), (-4, 3)]:
        idx = grid.index_of(k)
        assert lam_d[idx] == pytest.approx(eigenvalue_discrete(8, k))
        assert lam_c[idx] == pytest.approx(eigenvalue_continuum(k))
