"""Phase retrieval from intensity measurements ``y = |B x|^2``."""
from .benchmark import BENCHMARK_COLUMNS, PhaseGeometry, make_phase_problem, run_benchmark, run_cells, write_benchmark_csv
from .init import InitWarning, initialize, orthogonality_init, power_method, random_init, spectral_init
from .problem import (
    FlowSpec,
    PhaseProblem,
    Residual,
    intensity_gradient,
    intensity_residual,
    jacobian_adjoint,
    jacobian_apply,
    mu_schedule,
    taf_update,
    wirtinger_gradient,
)
from .solvers import (
    curvature_estimate,
    fienup_gs,
    levenberg_marquardt,
    real_cg,
    regularized_flow,
    solve,
    truncated_amplitude_flow,
    wirtinger_flow,
)

__all__ = [
    "BENCHMARK_COLUMNS", "PhaseGeometry", "make_phase_problem", "run_benchmark", "run_cells", "write_benchmark_csv",
    "InitWarning", "initialize", "orthogonality_init", "power_method", "random_init", "spectral_init",
    "FlowSpec", "PhaseProblem", "Residual", "intensity_gradient", "intensity_residual", "jacobian_adjoint",
    "jacobian_apply", "mu_schedule", "taf_update", "wirtinger_gradient",
    "curvature_estimate", "fienup_gs", "levenberg_marquardt", "real_cg", "regularized_flow", "solve",
    "truncated_amplitude_flow", "wirtinger_flow",
]
