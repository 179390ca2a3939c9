"""Forward and inverse solvers for the nonlinear kinetic transport equation."""

from .alpha import AlphaFamily, AlphaSpec, alpha_eval, check_alpha
from .expressions import eval_expression, parse_expression
from .fields import GridFunction2, GridFunction3, NormReport, norms
from .grid import Geometry, PhaseGrid, build_grid
from .inverse import forward_map_M, jacobian_apply, solve_inverse, stability_estimate
from .linear import solve_linear_forward
from .nonlinear import apply_S, solve_nonlinear_forward
from .oracle import assemble_dense, convergence_study, mms_case, oracle_inverse
from .problem import ProblemSpec, build_problem, load_problem, validate_problem

__all__ = [
    "AlphaFamily",
    "AlphaSpec",
    "Geometry",
    "GridFunction2",
    "GridFunction3",
    "NormReport",
    "PhaseGrid",
    "ProblemSpec",
    "alpha_eval",
    "apply_S",
    "assemble_dense",
    "build_grid",
    "build_problem",
    "check_alpha",
    "convergence_study",
    "eval_expression",
    "forward_map_M",
    "jacobian_apply",
    "load_problem",
    "mms_case",
    "norms",
    "oracle_inverse",
    "parse_expression",
    "solve_inverse",
    "solve_linear_forward",
    "solve_nonlinear_forward",
    "stability_estimate",
    "validate_problem",
]
