"""
Nonlinear global-in-time term S(u) and the Picard solver for the direct problem.

    S(u)(x, v, t) = sum over terms of q1(x, v, t) * I,
    I = int_0^T int_G int_V q2(x', v') alpha(u(x', v', t')) dv' dx' dt'

The integral I is a single scalar per separable term, so S costs one weighted
reduction plus a broadcast. Because I runs over the whole time interval the
direct problem is coupled in time, and Picard iterates on full space-time
fields:

    u^0 = L^-1 F,    u^{m+1} = L^-1 (F - S(u^m))
"""

import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from transport.alpha import alpha, alpha_prime
from transport.errors import BlowUpError, DivergenceError, NotConvergedError
from transport.fields import GridFunction3
from transport.grid import PhaseGrid
from transport.linear import explicit_source, march, problem_kernel
from transport.problem import ProblemSpec, SolverSettings
from utils.constants import DIVERGENCE_STREAK

logger = logging.getLogger(__name__)


@dataclass
class PicardReport:
    """
    Iteration history of one Picard solve.

    residual_history[m] = sup |u^{m+1} - u^m|; contraction_ratios are the
    quotients of successive residuals.
    """

    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    contraction_ratios: list[float] = field(default_factory=list)
    converged: bool = False

    def record(self, residual: float) -> None:
        if self.residual_history:
            previous = self.residual_history[-1]
            self.contraction_ratios.append(residual / previous if previous > 0 else 0.0)
        self.residual_history.append(residual)
        self.iterations += 1

    def increasing_streak(self) -> int:
        """Number of trailing consecutive residual increases."""
        streak = 0
        history = self.residual_history
        for m in range(len(history) - 1, 0, -1):
            if history[m] > history[m - 1]:
                streak += 1
            else:
                break
        return streak

    def to_dict(self) -> dict:
        return asdict(self)


# -----------------------------------------------------------------------------
# S and its derivative on raw arrays (leading batch axes allowed)
# -----------------------------------------------------------------------------


def _term_integrals(weighted: np.ndarray) -> np.ndarray:
    """Sum of a [..., Nt + 1, Nx, Nv] integrand over its trailing three axes, in a fixed order."""
    return weighted.reshape(weighted.shape[:-3] + (-1,)).sum(axis=-1)


def nonlinear_term(values: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """
    S(u) on raw arrays.

    Args:
        values: u with trailing axes (Nt + 1, Nx, Nv).
        spec: Problem (alpha family and separable Q terms).

    Returns:
        Array shaped like values.
    """
    result = np.zeros(np.broadcast_shapes(values.shape, spec.grid.shape3))
    if spec.is_linear:
        return result

    volumes = spec.grid.cell_volumes()
    alpha_u = alpha(spec.alpha, values)
    for q1, q2 in zip(spec.fields.q1, spec.fields.q2, strict=True):
        integral = _term_integrals(volumes * q2 * alpha_u)
        result += q1 * integral[..., None, None, None]
    return result


def derivative_weights(u_base: np.ndarray, spec: ProblemSpec) -> tuple[np.ndarray, ...]:
    """
    Per-term integrand weights W q2 alpha'(u_base) of the linearized term.

    Args:
        u_base: Base state (Nt + 1, Nx, Nv).
        spec: Problem.

    Returns:
        One (Nt + 1, Nx, Nv) array per separable term.
    """
    if spec.is_linear:
        return ()
    volumes = spec.grid.cell_volumes()
    slope = alpha_prime(spec.alpha, u_base)
    return tuple(volumes * q2 * slope for q2 in spec.fields.q2)


def linearized_term(
    du: np.ndarray, weights: tuple[np.ndarray, ...], spec: ProblemSpec
) -> np.ndarray:
    """
    S'(u_base)[du] on raw arrays, given derivative_weights(u_base).

    Args:
        du: Direction with trailing axes (Nt + 1, Nx, Nv).
        weights: Output of derivative_weights.
        spec: Problem.

    Returns:
        Array shaped like du.
    """
    result = np.zeros(np.broadcast_shapes(du.shape, spec.grid.shape3))
    for q1, w in zip(spec.fields.q1, weights, strict=True):
        integral = _term_integrals(w * du)
        result += q1 * integral[..., None, None, None]
    return result


def apply_S(u: GridFunction3, spec: ProblemSpec) -> GridFunction3:
    """
    Evaluate the nonlinear term S(u).

    Args:
        u: Field on the spec grid.
        spec: Problem.

    Returns:
        S(u); identically zero for the zero alpha family or an empty Q.
    """
    return GridFunction3(spec.grid, nonlinear_term(u.values, spec))


def apply_S_derivative(u: GridFunction3, du: GridFunction3, spec: ProblemSpec) -> GridFunction3:
    """
    Evaluate the Frechet derivative S'(u)[du].

    Args:
        u: Base field.
        du: Direction.
        spec: Problem.

    Returns:
        S'(u)[du], with integrand alpha'(u) du.
    """
    weights = derivative_weights(u.values, spec)
    return GridFunction3(spec.grid, linearized_term(du.values, weights, spec))


# -----------------------------------------------------------------------------
# Picard iteration
# -----------------------------------------------------------------------------


def picard_iterate(
    grid: PhaseGrid,
    source: np.ndarray,
    inflow: np.ndarray,
    initial: np.ndarray,
    kernel: np.ndarray | None,
    term: Callable[[np.ndarray], np.ndarray] | None,
    settings: SolverSettings,
    label: str = "Picard",
) -> tuple[np.ndarray, PicardReport]:
    """
    Fixed-point iteration u = L^-1 (source - term(u)) on raw arrays.

    Args:
        grid: Phase grid.
        source: Explicit source, trailing axes (Nt + 1, Nx, Nv).
        inflow: Inflow ghost values.
        initial: Initial level.
        kernel: Weighted scattering kernel, or None.
        term: Global nonlinear (or linearized) term; None when it vanishes.
        settings: Tolerance and iteration cap.
        label: Name used in log lines and errors.

    Returns:
        (u, report). When term is None the single linear solve counts as one
        converged iteration with residual 0.

    Raises:
        DivergenceError: On DIVERGENCE_STREAK consecutive residual increases,
            or when a march blows up.
        NotConvergedError: If max_picard updates do not reach picard_tol.
    """
    report = PicardReport()
    try:
        u = march(grid, source, inflow, initial, kernel)
    except BlowUpError as e:
        raise DivergenceError(f"{label}: initial linear solve blew up: {e}", report) from e

    if term is None:
        report.record(0.0)
        report.converged = True
        return u, report

    for _ in range(settings.max_picard):
        try:
            u_next = march(grid, source - term(u), inflow, initial, kernel)
        except BlowUpError as e:
            raise DivergenceError(
                f"{label} diverged after {report.iterations} iteration(s): {e}", report
            ) from e

        residual = float(np.max(np.abs(u_next - u)))
        u = u_next
        report.record(residual)
        logger.debug(f"{label} iteration {report.iterations}: residual {residual:.3e}")

        if residual <= settings.picard_tol:
            report.converged = True
            return u, report
        if report.increasing_streak() >= DIVERGENCE_STREAK:
            raise DivergenceError(
                f"{label} diverged: residual grew {DIVERGENCE_STREAK} times in a row "
                f"(last {residual:.3e})",
                report,
            )

    raise NotConvergedError(
        f"{label} did not reach tol {settings.picard_tol:g} in {settings.max_picard} "
        f"iterations (last residual {report.residual_history[-1]:.3e})",
        report,
    )


def solve_nonlinear_forward(
    spec: ProblemSpec,
    F_field: GridFunction3,
    sigma: np.ndarray | None = None,
) -> tuple[GridFunction3, PicardReport]:
    """
    Solve the nonlinear direct problem by Picard iteration.

    Args:
        spec: Problem.
        F_field: Source F on the spec grid.
        sigma: Absorption override; defaults to the spec's Sigma.

    Returns:
        (u, PicardReport).

    Raises:
        DivergenceError: If the residuals keep growing.
        NotConvergedError: If the iteration cap is hit.
    """
    term = None if spec.is_linear else (lambda values: nonlinear_term(values, spec))
    u, report = picard_iterate(
        spec.grid,
        explicit_source(spec, F_field.values, sigma),
        spec.fields.mu,
        spec.fields.phi,
        problem_kernel(spec),
        term,
        spec.settings,
    )
    if term is not None:
        logger.info(
            f"Picard converged in {report.iterations} iterations "
            f"(residual {report.residual_history[-1]:.3e})"
        )
    return GridFunction3(spec.grid, u), report
