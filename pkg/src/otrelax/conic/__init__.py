"""Conic programs, the splitting solver and discrete transport oracles."""

from .program import Block, ConicProgram, ConicSolution, ProgramBuilder, dual_lower_bound, residuals
from .solver import solve
from .discrete import exact_discrete_ot, sinkhorn

__all__ = [
    "Block",
    "ConicProgram",
    "ConicSolution",
    "ProgramBuilder",
    "dual_lower_bound",
    "residuals",
    "solve",
    "exact_discrete_ot",
    "sinkhorn",
]
