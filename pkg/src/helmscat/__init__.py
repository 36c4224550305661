"""Exterior Helmholtz obstacle scattering: forward solves, identity checks and shape recovery."""

from .forward import (
    BoundaryCondition,
    DirectionGrid,
    FarFieldPattern,
    PlaneWave,
    PointSource,
    ScatterSolution,
    SolveError,
    SolveOptions,
    WaveContext,
    eval_field,
    eval_gradient,
    far_field,
    far_field_at,
    solve,
)
from .geometry import StarShape, StarShapeError, build_quadrature, shape_perturb, shape_sphere
from .mie import mie_coefficients, mie_far_field

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition", "DirectionGrid", "FarFieldPattern", "PlaneWave", "PointSource",
    "ScatterSolution", "SolveError", "SolveOptions", "StarShape", "StarShapeError", "WaveContext",
    "build_quadrature", "eval_field", "eval_gradient", "far_field", "far_field_at", "mie_coefficients",
    "mie_far_field", "shape_perturb", "shape_sphere", "solve",
]
