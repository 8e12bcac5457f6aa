"""Mean-zero elliptic solves on the torus.

Three backends cover the operators -Lap_N and -div a grad:

* ``spectral``: exact FFT diagonalization, homogeneous operator only;
* ``cg``: conjugate gradient on the mean-zero subspace, optionally
  preconditioned by the homogeneous spectral inverse;
* ``dense``: pseudo-inverse of the explicitly assembled matrix, small grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import Conductances, apply_operator, operator_matrix
from .lattice import (
    LatticeField,
    TorusGrid,
    eigenvalue_discrete,
    eigenvalues_discrete,
    fourier_mode,
)

__all__ = [
    "SolveReport",
    "SolverError",
    "solve_homogeneous",
    "solve_heterogeneous",
    "solve_dense",
    "green_column",
    "pseudo_eigenfunction",
    "default_max_iterations",
]

MEAN_ZERO_RTOL = 1e-10
DEFAULT_TOL = 1e-8


@dataclass
class SolveReport:
    iterations: int
    residual: float
    tolerance: float
    backend: str
    energy_history: list = field(default_factory=list, repr=False)


class SolverError(RuntimeError):
    """Raised when an iterative solve fails to reach its tolerance."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def default_max_iterations(grid: TorusGrid) -> int:
    return int(50 * grid.N ** (grid.d / 2))


def _require_mean_zero(rhs: LatticeField) -> None:
    scale = np.max(np.abs(rhs.values))
    if scale > 0 and abs(rhs.mean()) > MEAN_ZERO_RTOL * scale:
        raise ValueError(
            f"right-hand side must be mean-zero; relative mean is "
            f"{abs(rhs.mean()) / scale:.3e}"
        )


def _spectral_inverse(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Apply the pseudo-inverse of -Lap_N (zero on constants)."""
    lam = eigenvalues_discrete(grid)
    inv = np.zeros_like(lam)
    mask = lam > 0
    inv[mask] = 1.0 / lam[mask]
    inv = np.fft.ifftshift(inv)
    out = np.fft.ifftn(np.fft.fftn(values) * inv)
    if np.isrealobj(values):
        out = out.real
    return out


def solve_homogeneous(grid: TorusGrid, rhs: LatticeField) -> LatticeField:
    """Unique mean-zero solution of -Lap_N u = rhs, computed spectrally."""
    if rhs.grid != grid:
        raise ValueError("rhs grid mismatch")
    _require_mean_zero(rhs)
    return LatticeField(grid, _spectral_inverse(grid, rhs.values))


def _pcg(a: Conductances, b: np.ndarray, tol: float, maxiter: int,
         precondition: bool) -> tuple:
    """Preconditioned CG for the real divergence-form operator.

    Iterates on the mean-zero subspace; the mean is projected out of every
    update. Tracks the quadratic functional 0.5 x.A x - b.x, whose decrease
    is equivalent to the decrease of the energy norm of the error.
    """
    grid = a.grid

    def matvec(v):
        return apply_operator(a, LatticeField(grid, v)).values

    def apply_m(v):
        if precondition:
            return _spectral_inverse(grid, v)
        return v - v.mean()

    b = b - b.mean()
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, 0, 0.0, []
    r = b.copy()
    z = apply_m(r)
    p = z.copy()
    rz = np.vdot(r, z).real
    energy = [0.0]
    for it in range(1, maxiter + 1):
        ap = matvec(p)
        alpha = rz / np.vdot(p, ap).real
        x = x + alpha * p
        x = x - x.mean()
        r = r - alpha * ap
        r = r - r.mean()
        # One CG step changes 0.5 x.A x - b.x by exactly -0.5 alpha (r.z).
        energy.append(energy[-1] - 0.5 * alpha * rz)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, it, res, energy
        z = apply_m(r)
        rz_new = np.vdot(r, z).real
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return x, maxiter, np.linalg.norm(r) / bnorm, energy


def solve_heterogeneous(a: Conductances, rhs: LatticeField, tol: float = DEFAULT_TOL,
                        maxiter: int = None, precondition: bool = None):
    """Mean-zero solution of -div a grad u = rhs by conjugate gradient.

    Complex right-hand sides are solved as two real systems (the operator is
    real symmetric). Returns (solution, report); raises SolverError when the
    iteration cap is hit before the relative residual reaches tol.
    """
    if rhs.grid != a.grid:
        raise ValueError("rhs grid mismatch")
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    _require_mean_zero(rhs)
    grid = a.grid
    if maxiter is None:
        maxiter = default_max_iterations(grid)
    if precondition is None:
        precondition = grid.N >= 64

    b = rhs.values
    if np.iscomplexobj(b):
        parts = []
        iterations, residual, energy = 0, 0.0, []
        for comp in (b.real, b.imag):
            x, it, res, en = _pcg(a, comp, tol, maxiter, precondition)
            parts.append(x)
            iterations = max(iterations, it)
            residual = max(residual, res)
            energy = en if len(en) > len(energy) else energy
        x = parts[0] + 1j * parts[1]
    else:
        x, iterations, residual, energy = _pcg(a, b, tol, maxiter, precondition)

    report = SolveReport(iterations, float(residual), tol, "cg", energy)
    if residual > tol:
        raise SolverError(
            f"CG did not reach tol={tol} within {maxiter} iterations "
            f"(residual {residual:.3e})",
            report,
        )
    return LatticeField(grid, x), report


def solve_dense(a: Conductances, rhs: LatticeField) -> LatticeField:
    """Pseudo-inverse solve via the dense operator matrix (oracle path)."""
    _require_mean_zero(rhs)
    mat = operator_matrix(a)
    sol = np.linalg.pinv(mat, rcond=1e-12) @ rhs.values.ravel()
    sol = sol - sol.mean()
    return LatticeField(a.grid, sol.reshape(a.grid.shape))


def _delta_rhs(grid: TorusGrid, y) -> LatticeField:
    values = np.full(grid.shape, -1.0 / grid.n)
    values[grid.index_of(y)] += 1.0
    return LatticeField(grid, values)


def green_column(a, grid: TorusGrid, y, tol: float = DEFAULT_TOL) -> LatticeField:
    """Column G(., y) of the Green's function: the mean-zero solution of

        (-div a grad G(., y))(x) = delta_{x,y} - 1/N^d.

    Pass ``a=None`` (or the string "homogeneous") for the unit-conductance
    torus, solved spectrally.
    """
    rhs = _delta_rhs(grid, y)
    if a is None or (isinstance(a, str) and a == "homogeneous"):
        return solve_homogeneous(grid, rhs)
    u, _ = solve_heterogeneous(a, rhs, tol=tol)
    return u


def pseudo_eigenfunction(a: Conductances, ahom: float, k,
                         tol: float = DEFAULT_TOL) -> LatticeField:
    """Solution of -div a grad u = ahom * lambda_k^(N) * phi_k.

    Converges to the Fourier mode phi_k as N grows; for constant a = ahom it
    equals phi_k up to solver tolerance.
    """
    grid = a.grid
    k = grid.check_frequency(k)
    if not np.any(k):
        raise ValueError("pseudo-eigenfunctions are defined for k != 0 only")
    if ahom <= 0:
        raise ValueError(f"ahom must be positive, got {ahom}")
    lam = eigenvalue_discrete(grid.N, k)
    rhs = LatticeField(grid, ahom * lam * fourier_mode(grid, k).values)
    u, _ = solve_heterogeneous(a, rhs, tol=tol)
    return u
