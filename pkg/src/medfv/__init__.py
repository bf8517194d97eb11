"""Cell-centred finite volumes for convection-diffusion with L1 data and a median normalisation."""

from .errors import ConsistencyError, LinearSolveError, MedFVError, PicardDivergence
from .fields import (CellField, DiamondField, MedianInterval, discrete_gradient, lower_median,
                     lp_norm, median_interval, reproducible, s_n, set_reproducible, truncate,
                     w1p_norm, w1p_seminorm)
from .mesh import AdmissibleMesh, build_rect_mesh, check_admissibility, mesh_hierarchy, refine
from .scheme import (ProblemData, assemble, cell_source, constant_lambda, edge_coefficients,
                     edge_velocity, kernel_vector, lambda_edge, linear_scheme_solve,
                     median_normalize, rational_lambda, solve_pinned)
from .solver import PicardOptions, PicardReport, picard_solve

__version__ = "0.1.0"

__all__ = [
    "AdmissibleMesh", "CellField", "ConsistencyError", "DiamondField", "LinearSolveError",
    "MedFVError", "MedianInterval", "PicardDivergence", "PicardOptions", "PicardReport",
    "ProblemData", "assemble", "build_rect_mesh", "cell_source", "check_admissibility",
    "constant_lambda", "discrete_gradient", "edge_coefficients", "edge_velocity",
    "kernel_vector", "lambda_edge", "linear_scheme_solve", "lower_median", "lp_norm",
    "median_interval", "median_normalize", "mesh_hierarchy", "picard_solve", "rational_lambda",
    "refine", "reproducible", "s_n", "set_reproducible", "solve_pinned", "truncate",
    "w1p_norm", "w1p_seminorm",
]
