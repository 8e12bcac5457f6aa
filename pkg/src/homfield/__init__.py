"""Numerical laboratory for Gaussian free fields and bi-Laplacian fields in
random conductance environments on the discrete torus."""

from .lattice import (
    TorusGrid,
    LatticeField,
    SpectralField,
    fourier_mode,
    dft,
    idft,
    sobolev_norm,
)
from .environment import (
    EnvironmentLaw,
    Conductances,
    sample_environment,
    apply_operator,
)
from .solver import (
    solve_homogeneous,
    solve_heterogeneous,
    green_column,
    pseudo_eigenfunction,
    SolverError,
)
from .homogenization import solve_corrector, effective_sample, estimate_ahom
from .sampler import (
    NoiseHierarchy,
    sample_noise,
    sample_gff,
    sample_bilaplacian,
    formal_field,
)
from .experiments import (
    ExperimentConfig,
    RateSeries,
    fit_rate,
    pseudo_eigen_rate,
    gff_covariance_limit,
    bilap_error_rate,
    discretization_rate,
)

__version__ = "1.0.0"
