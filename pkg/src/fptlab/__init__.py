"""First-passage times of Brownian motion through convex moving boundaries.

Closed-form image kernels, their quadrature, two Monte Carlo oracles and the
PDE residual checks that tie them together.
"""

from .boundary import Boundary, BoundaryError, build_boundary, corpus_boundary, parse_boundary
from .kernels import EvalPoint, green_G, kernel_H, level_density
from .quadrature import QuadratureSpec, fpt_cdf, fpt_density
from .results import DensityCurve

__version__ = "0.1.0"

__all__ = [
    "Boundary",
    "BoundaryError",
    "DensityCurve",
    "EvalPoint",
    "QuadratureSpec",
    "build_boundary",
    "corpus_boundary",
    "fpt_cdf",
    "fpt_density",
    "green_G",
    "kernel_H",
    "level_density",
    "parse_boundary",
]
