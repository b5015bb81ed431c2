"""Numerical kernels: Lambert W, dense simplex, deep-cut ellipsoid."""

from .ellipsoid import (
    EllipsoidBatch,
    EllipsoidBreakdown,
    Evaluation,
    FeasibilityCut,
    ellipsoid_maximize,
    ellipsoid_maximize_batch,
)
from .lambertw import lambert_w0, tilde_f
from .simplex import LinearProgram, LPResult, SimplexBreakdown, simplex_solve

__all__ = [
    "EllipsoidBatch",
    "EllipsoidBreakdown",
    "Evaluation",
    "FeasibilityCut",
    "LPResult",
    "LinearProgram",
    "SimplexBreakdown",
    "ellipsoid_maximize",
    "ellipsoid_maximize_batch",
    "lambert_w0",
    "simplex_solve",
    "tilde_f",
]
