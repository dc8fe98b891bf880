"""Proximal building blocks, the primal-dual engine and reconstruction solvers."""
from .linops import LinearMap, div2d, grad2d, gradient_map, power_norm
from .pdhg import SOLVER_KINDS, SolverSpec, pdhg_solve
from .prox import (
    Box,
    Clipped,
    GroupL2Norm,
    L1Norm,
    NonNegative,
    Prox,
    Scaled,
    SeparableSum,
    SquaredL2,
    Zero,
    prox_shrink,
)
from .solvers import bregman_iterate, solve_nnls, solve_penalized, tv_denoise, tv_value

__all__ = [
    "LinearMap", "div2d", "grad2d", "gradient_map", "power_norm",
    "SOLVER_KINDS", "SolverSpec", "pdhg_solve",
    "Box", "Clipped", "GroupL2Norm", "L1Norm", "NonNegative", "Prox", "Scaled", "SeparableSum", "SquaredL2",
    "Zero", "prox_shrink",
    "bregman_iterate", "solve_nnls", "solve_penalized", "tv_denoise", "tv_value",
]
