"""Gaussian field samplers: white noise with fine-to-coarse coupling,
discrete free fields and bi-Laplacian fields, and the rescaled spectral
("formal") representation used by the convergence experiments.

The free-field covariance is the pseudo-inverse of the (possibly
heterogeneous) divergence-form operator, so sampling amounts to applying the
inverse square root of that operator to site-wise white noise. Three
backends do this: exact FFT synthesis (homogeneous only), a dense
eigendecomposition, and a Lanczos approximation for larger grids.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .environment import Conductances, apply_operator, operator_matrix
from .lattice import LatticeField, SpectralField, TorusGrid, dft, eigenvalues_discrete
from .solver import DEFAULT_TOL, solve_heterogeneous, solve_homogeneous

__all__ = [
    "FieldSample",
    "NoiseHierarchy",
    "sample_noise",
    "coarsen_noise",
    "sample_gff",
    "sample_bilaplacian",
    "formal_field",
    "formal_constant",
    "dump_field",
    "load_field",
]

FIELD_MAGIC = b"HFFLD1"
FIELD_KINDS = ("gff_hom", "gff_env", "bilap_hom", "bilap_env")
DENSE_SITE_LIMIT = 20736
KRYLOV_TOL = 1e-6


@dataclass(frozen=True)
class FieldSample:
    kind: str
    field: LatticeField
    environment: Conductances = None
    noise: LatticeField = None
    scaled: bool = False

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")


def formal_constant(kind: str, d: int) -> float:
    """Scaling constant of the formal field: (2d)^{-1/2} for free fields,
    (2d)^{-1} for bi-Laplacian fields."""
    if kind.startswith("gff"):
        return (2.0 * d) ** -0.5
    return 1.0 / (2.0 * d)


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def sample_noise(grid: TorusGrid, seed) -> LatticeField:
    """I.i.d. standard normal values per site, reproducible from the seed."""
    rng = _generator(seed)
    return LatticeField(grid, rng.standard_normal(grid.shape))


@dataclass(frozen=True)
class NoiseHierarchy:
    """A finest-level white noise together with its consistent coarsenings.

    Coarse level N (dividing the finest side) aggregates disjoint blocks of
    (N_max/N)^d finest values, scaled to keep unit variance per site. Blocks
    are aligned with the site array, so coarsening through an intermediate
    level gives exactly the same field as coarsening directly.
    """

    finest: LatticeField

    @property
    def n_max(self) -> int:
        return self.finest.grid.N

    def level(self, N: int) -> LatticeField:
        grid = self.finest.grid
        if N == self.n_max:
            return self.finest
        if self.n_max % N != 0:
            raise ValueError(f"{N} does not divide the finest side {self.n_max}")
        r = self.n_max // N
        v = self.finest.values
        shape = []
        for _ in range(grid.d):
            shape.extend([N, r])
        blocks = v.reshape(shape)
        out = blocks.sum(axis=tuple(range(1, 2 * grid.d, 2)))
        return LatticeField(TorusGrid(N, grid.d), out * r ** (-grid.d / 2.0))


def coarsen_noise(hierarchy: NoiseHierarchy, N: int) -> LatticeField:
    return hierarchy.level(N)


def _hom_filter(grid: TorusGrid, exponent: float) -> np.ndarray:
    """Spectral multiplier lambda^exponent with the zero mode removed,
    in standard FFT layout."""
    lam = eigenvalues_discrete(grid)
    mult = np.zeros_like(lam)
    mask = lam > 0
    mult[mask] = lam[mask] ** exponent
    return np.fft.ifftshift(mult)


def _apply_hom_filter(grid: TorusGrid, values: np.ndarray, exponent: float) -> np.ndarray:
    out = np.fft.ifftn(np.fft.fftn(values) * _hom_filter(grid, exponent))
    return out.real if np.isrealobj(values) else out


def _dense_inv_sqrt(a: Conductances, z: np.ndarray) -> np.ndarray:
    mat = operator_matrix(a)
    evals, evecs = np.linalg.eigh(mat)
    scale = evals.max()
    inv_sqrt = np.where(evals > 1e-10 * scale, 1.0 / np.sqrt(np.abs(evals)), 0.0)
    return evecs @ (inv_sqrt * (evecs.T @ z.ravel()))


def _lanczos_inv_sqrt(a: Conductances, z: np.ndarray, tol: float,
                      maxiter: int = 400) -> np.ndarray:
    """Apply the inverse square root of the operator on the mean-zero
    subspace by Lanczos with full reorthogonalization.

    Stops when two successive iterates differ by less than tol relative to
    the current iterate.
    """
    grid = a.grid
    v = z.ravel() - z.mean()
    norm0 = np.linalg.norm(v)
    if norm0 == 0.0:
        return np.zeros_like(v)
    q = v / norm0
    basis = [q]
    alphas, betas = [], []
    previous = None
    q_prev = np.zeros_like(q)
    beta_prev = 0.0
    for it in range(1, maxiter + 1):
        w = apply_operator(a, LatticeField(grid, q.reshape(grid.shape))).values.ravel()
        w = w - beta_prev * q_prev
        alpha = float(np.dot(q, w))
        w = w - alpha * q
        # full reorthogonalization, incl. projecting out the constant kernel
        w = w - w.mean()
        for b in basis:
            w = w - np.dot(b, w) * b
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        tmat = np.diag(alphas)
        if len(betas) > 0:
            off = np.asarray(betas)
            tmat = tmat + np.diag(off, 1) + np.diag(off, -1)
        tvals, tvecs = np.linalg.eigh(tmat)
        tvals = np.maximum(tvals, 1e-30)
        coeff = tvecs @ (tvals**-0.5 * tvecs[0]) * norm0
        estimate = np.asarray(basis).T @ coeff
        if previous is not None:
            delta = np.linalg.norm(estimate - previous)
            if delta <= tol * np.linalg.norm(estimate):
                return estimate
        previous = estimate
        if beta <= 1e-14 * norm0:
            return estimate
        q_prev, beta_prev = q, beta
        q = w / beta
        basis.append(q)
        betas.append(beta)
    raise RuntimeError(
        f"Lanczos inverse square root did not stabilize within {maxiter} steps"
    )


def sample_gff(grid: TorusGrid, a, seed, backend: str = None,
               tol: float = KRYLOV_TOL) -> FieldSample:
    """Sample a discrete free field with covariance given by the Green's
    function of the (homogeneous or environment) operator.

    ``a=None`` selects the homogeneous field. Backends: "spectral" (exact,
    homogeneous only), "dense" (exact eigendecomposition, small grids) and
    "krylov" (Lanczos inverse square root). The dense and krylov backends
    consume the same seed-coupled noise vector and agree up to tol.
    """
    homogeneous = a is None or (isinstance(a, str) and a == "homogeneous")
    if backend is None:
        backend = "spectral" if homogeneous else "krylov"
    if backend == "spectral" and not homogeneous:
        raise ValueError("spectral backend requires the homogeneous operator")
    if backend == "dense" and grid.n > DENSE_SITE_LIMIT:
        raise ValueError(f"dense backend limited to {DENSE_SITE_LIMIT} sites")
    if not homogeneous and a.grid != grid:
        raise ValueError("environment grid mismatch")

    z = sample_noise(grid, seed)
    if backend == "spectral":
        values = _apply_hom_filter(grid, z.values, -0.5)
        env = None
    elif backend == "dense":
        op = a if not homogeneous else Conductances.constant(grid, 1.0)
        values = _dense_inv_sqrt(op, z.values).reshape(grid.shape)
        env = None if homogeneous else a
    elif backend == "krylov":
        op = a if not homogeneous else Conductances.constant(grid, 1.0)
        values = _lanczos_inv_sqrt(op, z.values, tol).reshape(grid.shape)
        env = None if homogeneous else a
    else:
        raise ValueError(f"unknown backend {backend!r}")
    values = values - values.mean()
    kind = "gff_hom" if homogeneous else "gff_env"
    return FieldSample(kind, LatticeField(grid, values), environment=env, noise=z)


def sample_bilaplacian(grid: TorusGrid, a, noise: LatticeField,
                       tol: float = DEFAULT_TOL) -> FieldSample:
    """Solve the driven equation -div a grad u = noise - mean(noise).

    Deterministic given (a, noise); pass ``a=None`` for the homogeneous
    field, which is solved spectrally.
    """
    if noise.grid != grid:
        raise ValueError("noise grid mismatch")
    rhs = noise.centered()
    homogeneous = a is None or (isinstance(a, str) and a == "homogeneous")
    if homogeneous:
        u = solve_homogeneous(grid, rhs)
        return FieldSample("bilap_hom", u, noise=noise)
    u, _ = solve_heterogeneous(a, rhs, tol=tol)
    return FieldSample("bilap_env", u, environment=a, noise=noise)


def formal_field(sample: FieldSample, apply_constant: bool = True) -> SpectralField:
    """Spectral coefficients of the rescaled point-mass field.

    Coefficient at k is c * N^{d/2} * (f, phi_k) with c the kind-dependent
    constant (skipped when ``apply_constant`` is false); modes outside the
    grid's frequency window are identically zero by convention.
    """
    grid = sample.field.grid
    spec = dft(sample.field)
    scale = grid.N ** (grid.d / 2.0)
    if apply_constant:
        scale *= formal_constant(sample.kind, grid.d)
    return SpectralField(grid, spec.coefficients * scale)


_KIND_TAGS = {kind: kind.encode().ljust(12, b"\0") for kind in FIELD_KINDS}


def dump_field(sample: FieldSample, path) -> None:
    """Binary dump: magic "HFFLD1", d and N as little-endian 64-bit ints, a
    12-byte kind tag, then N^d float64 site values in canonical order."""
    grid = sample.field.grid
    if np.iscomplexobj(sample.field.values):
        raise ValueError("field dumps store real-valued fields only")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<qq", grid.d, grid.N))
        fh.write(_KIND_TAGS[sample.kind])
        fh.write(sample.field.values.astype("<f8").tobytes())


def load_field(path) -> FieldSample:
    with open(path, "rb") as fh:
        magic = fh.read(len(FIELD_MAGIC))
        if magic != FIELD_MAGIC:
            raise ValueError(f"not a field dump: bad magic {magic!r}")
        d, N = struct.unpack("<qq", fh.read(16))
        kind = fh.read(12).rstrip(b"\0").decode()
        grid = TorusGrid(N, d)
        data = np.frombuffer(fh.read(8 * grid.n), dtype="<f8")
        fld = LatticeField(grid, data.reshape(grid.shape).copy())
    return FieldSample(kind, fld)
