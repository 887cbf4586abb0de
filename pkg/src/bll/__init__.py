"""Numerical laboratory for the low-Mach limit of heat-conducting compressible flow.

The package couples a compressible Navier-Stokes-Fourier solver with an
Oberbeck-Boussinesq target system whose wall data enter through a non-local
mean-temperature correction, plus the relative-energy diagnostics used to
measure the distance between the two as the Mach number is driven down.
"""

from bll.diagnostics import (
    ComparisonReport,
    ConvergenceTable,
    ErrorNorms,
    EssentialSet,
    RelEnergyReport,
    coercivity_check,
    compare_modified_vs_naive,
    default_essential_set,
    deviation_error_norms,
    ess_res_decompose,
    relative_energy,
    sweep,
)
from bll.errors import (
    AlignmentError,
    ClosureError,
    CompatibilityError,
    ConfigError,
    DivergenceError,
    DomainError,
    ShapeError,
    StabilityError,
)
from bll.grid import Grid, ScalarField, Staggering, VectorField
from bll.nsf import (
    ConservationLog,
    NsfScenario,
    NsfState,
    NsfTrajectory,
    discrete_hydrostatic_reference,
    hydrostatic_stationary_1d,
    run_nsf,
)
from bll.ob import (
    T_FRAME,
    THETA_FRAME,
    LambdaTrace,
    ObScenario,
    ObState,
    ObTrajectory,
    gravity_potential,
    recover_density_deviation,
    run_ob,
    transform_frame,
)
from bll.thermo import (
    EosParams,
    check_hypotheses,
    check_limit_identities,
    entropy,
    gibbs_residual,
    internal_energy,
    ob_coefficients,
    pressure,
    rho_e,
    sound_speed_squared,
)

__all__ = [
    "AlignmentError",
    "ClosureError",
    "CompatibilityError",
    "ComparisonReport",
    "ConfigError",
    "ConservationLog",
    "ConvergenceTable",
    "DivergenceError",
    "DomainError",
    "EosParams",
    "ErrorNorms",
    "EssentialSet",
    "Grid",
    "LambdaTrace",
    "NsfScenario",
    "NsfState",
    "NsfTrajectory",
    "ObScenario",
    "ObState",
    "ObTrajectory",
    "RelEnergyReport",
    "ScalarField",
    "ShapeError",
    "StabilityError",
    "Staggering",
    "T_FRAME",
    "THETA_FRAME",
    "VectorField",
    "check_hypotheses",
    "check_limit_identities",
    "coercivity_check",
    "compare_modified_vs_naive",
    "default_essential_set",
    "deviation_error_norms",
    "discrete_hydrostatic_reference",
    "entropy",
    "ess_res_decompose",
    "gibbs_residual",
    "gravity_potential",
    "hydrostatic_stationary_1d",
    "internal_energy",
    "ob_coefficients",
    "pressure",
    "recover_density_deviation",
    "relative_energy",
    "rho_e",
    "run_nsf",
    "run_ob",
    "sound_speed_squared",
    "sweep",
    "transform_frame",
]
