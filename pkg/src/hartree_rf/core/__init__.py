from .diagnostics import (
    DensityOperator,
    NormSpec,
    build_density_operator,
    corollary_check,
    equilibrium_density,
    schatten_norm,
    spacetime_norm,
    strichartz_ratio,
    theta_norms,
)
from .field_core import (
    EnsembleField,
    FieldHistory,
    Grid,
    SpaceTimePotential,
    WienerSample,
    duhamel_WV,
    free_propagate,
    sample_equilibrium,
    sample_structured_perturbation,
    transported_propagate,
)
from .linear_response import apply_L2, compute_mf, epsilon_h, invert_id_minus_L2
from .profiles import MomentumDistribution, PairKernel, PairPotential, build_kernel_h
from .profiles import check_hypotheses
from .quadratic import Q1_ensemble, Q2_ensemble, Q2_fourier, cubic_terms, kernel_K_norms
from .solver import evolve_hartree, extract_scattering, picard_dim2_cubic, picard_fixed_point

__all__ = [
    "DensityOperator",
    "EnsembleField",
    "FieldHistory",
    "Grid",
    "MomentumDistribution",
    "NormSpec",
    "PairKernel",
    "PairPotential",
    "Q1_ensemble",
    "Q2_ensemble",
    "Q2_fourier",
    "SpaceTimePotential",
    "WienerSample",
    "apply_L2",
    "build_density_operator",
    "build_kernel_h",
    "check_hypotheses",
    "compute_mf",
    "corollary_check",
    "cubic_terms",
    "duhamel_WV",
    "epsilon_h",
    "equilibrium_density",
    "evolve_hartree",
    "extract_scattering",
    "free_propagate",
    "invert_id_minus_L2",
    "kernel_K_norms",
    "picard_dim2_cubic",
    "picard_fixed_point",
    "sample_equilibrium",
    "sample_structured_perturbation",
    "schatten_norm",
    "spacetime_norm",
    "strichartz_ratio",
    "theta_norms",
    "transported_propagate",
]
