"""
Linear forward solver for the modified transport equation.

    u_t + v u_x + Sigma u0 = int_V J(x, v, t, v') u(x, v', t) dv' + F

with inflow data mu on the inflow faces and initial data phi. Absorption acts
on the fixed reference field u0, so the equation is linear in u.

Each step k -> k+1 evaluates the scattering integral and the sources at level
k, then solves the implicit first-order upwind advection for every ordinate
by a downwind sweep. The sweep is vectorized over ordinates and over any
leading batch axes, so a set of independent right-hand sides (e.g. the unit
controls of a dense Jacobian) marches in one pass.
"""

import logging
from dataclasses import dataclass

import numpy as np

from transport.errors import BlowUpError
from transport.fields import (
    GridFunction2,
    GridFunction3,
    h_inf_slice_norm,
    inflow_w_norm,
    norms,
    sup_norm,
    w_inf_t_norm,
)
from transport.grid import PhaseGrid
from transport.problem import ProblemSpec
from utils.constants import BLOWUP_LIMIT

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearForwardResult:
    """
    Solution of one linear forward solve.

    u: state; source_used: the explicit source F - Sigma u0 that drove it;
    inflow: ghost values used on the inflow faces, shape (Nt + 1, Nv);
    apriori_ratio: ||u||_H divided by the data bound.
    """

    u: GridFunction3
    source_used: GridFunction3
    inflow: np.ndarray
    apriori_ratio: float


# -----------------------------------------------------------------------------
# Building blocks
# -----------------------------------------------------------------------------


def scattering_integral(u_slice: np.ndarray, J_row: np.ndarray, weights: np.ndarray) -> float:
    """
    Quadrature of int_V J(v') u(v') dv' at one (x, v, t).

    Args:
        u_slice: u over the ordinates v'.
        J_row: Kernel values over v'.
        weights: Velocity quadrature weights.

    Returns:
        sum_j w_j J_j u_j
    """
    u_slice, J_row, weights = np.broadcast_arrays(
        np.asarray(u_slice, dtype=np.float64), J_row, weights
    )
    return float(np.sum(weights * J_row * u_slice))


def weighted_kernel(J: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """
    J multiplied by the v' quadrature weights, expanded over x, v and v'.

    Args:
        J: Kernel [t][x][v][vp] with possibly size-1 axes.
        grid: Phase grid.

    Returns:
        Array of shape (Tj, Nx, Nv, Nv) where Tj is 1 or Nt + 1.
    """
    shape = (J.shape[0], grid.Nx, grid.Nv, grid.Nv)
    return np.broadcast_to(J, shape) * grid.v_weights


def scatter_level(u_level: np.ndarray, kernel_level: np.ndarray) -> np.ndarray:
    """
    Scattering integral for all (x, v) at one time level.

    Args:
        u_level: Values with trailing axes (Nx, Nv); leading axes are batch.
        kernel_level: Weighted kernel (Nx, Nv, Nv) from weighted_kernel.

    Returns:
        Array shaped like u_level.
    """
    return np.einsum("xvp,...xp->...xv", kernel_level, u_level)


def _implicit_sweep(
    base: np.ndarray,
    ghost: np.ndarray,
    speed: np.ndarray,
    diagonal: np.ndarray,
    positive: np.ndarray,
) -> np.ndarray:
    """
    Downwind bidiagonal substitution.

    Solves diagonal * u_i - speed * u_upstream(i) = base_i with the ghost value
    upstream of the first cell. Ordinates with v < 0 sweep right to left.

    Args:
        base: u_prev / dt + rhs, trailing axes (Nx, Nv).
        ghost: Inflow values, trailing axis (Nv,).
        speed: |v| / dx per ordinate.
        diagonal: 1 / dt + |v| / dx per ordinate.
        positive: Mask of ordinates with v > 0.

    Returns:
        New level, shaped like base.
    """
    # Reorder so every ordinate sweeps in increasing index
    ordered = np.where(positive, base, base[..., ::-1, :])
    out = np.empty_like(ordered)
    upstream = np.broadcast_to(ghost, ordered.shape[:-2] + ordered.shape[-1:])
    for i in range(ordered.shape[-2]):
        upstream = (ordered[..., i, :] + speed * upstream) / diagonal
        out[..., i, :] = upstream
    return np.where(positive, out, out[..., ::-1, :])


def advect_step(
    u_prev: np.ndarray,
    v: float,
    dt: float,
    inflow_value: float,
    source: np.ndarray,
    dx: float,
) -> np.ndarray:
    """
    One implicit upwind step of u_t + v u_x = source for a single ordinate.

    Args:
        u_prev: Spatial profile at the old level.
        v: Signed speed (nonzero).
        dt: Time step (> 0).
        inflow_value: Ghost value upstream of the inflow cell.
        source: Spatial profile of the right-hand side.
        dx: Cell width.

    Returns:
        Spatial profile at the new level.
    """
    u_prev = np.asarray(u_prev, dtype=np.float64)[:, None]
    source = np.broadcast_to(np.asarray(source, dtype=np.float64), (u_prev.shape[0],))[:, None]
    speed = np.array([abs(v) / dx])
    result = _implicit_sweep(
        base=u_prev / dt + source,
        ghost=np.array([inflow_value], dtype=np.float64),
        speed=speed,
        diagonal=1.0 / dt + speed,
        positive=np.array([v > 0]),
    )
    return result[:, 0]


# -----------------------------------------------------------------------------
# Time march
# -----------------------------------------------------------------------------


def march(
    grid: PhaseGrid,
    source: np.ndarray,
    inflow: np.ndarray,
    initial: np.ndarray,
    kernel: np.ndarray | None = None,
) -> np.ndarray:
    """
    March the linear scheme over all time levels.

    Every array may carry the same leading batch axes; each batch member is
    an independent problem.

    Args:
        grid: Phase grid.
        source: Explicit right-hand side, trailing axes (Nt + 1, Nx, Nv).
            Level k drives the step k -> k + 1.
        inflow: Ghost values, trailing axes (Nt + 1, Nv).
        initial: Level-0 values, trailing axes (Nx, Nv).
        kernel: Weighted scattering kernel from weighted_kernel, or None.

    Returns:
        Array with trailing axes (Nt + 1, Nx, Nv).

    Raises:
        BlowUpError: If a level exceeds the blow-up guard or turns non-finite.
    """
    batch = np.broadcast_shapes(source.shape[:-3], inflow.shape[:-2], initial.shape[:-2])
    u = np.empty(batch + grid.shape3)
    u[..., 0, :, :] = initial

    speed = np.abs(grid.v_nodes) / grid.dx
    diagonal = 1.0 / grid.dt + speed
    positive = grid.positive

    for k in range(grid.Nt):
        rhs = source[..., k, :, :]
        if kernel is not None:
            rhs = rhs + scatter_level(u[..., k, :, :], kernel[k if kernel.shape[0] > 1 else 0])
        u[..., k + 1, :, :] = _implicit_sweep(
            u[..., k, :, :] / grid.dt + rhs,
            inflow[..., k + 1, :],
            speed,
            diagonal,
            positive,
        )
        peak = np.max(np.abs(u[..., k + 1, :, :]))
        if not np.isfinite(peak) or peak > BLOWUP_LIMIT:
            raise BlowUpError(
                f"forward march blew up at t = {grid.t_levels[k + 1]:g} (sup |u| = {peak:g})"
            )
    return u


def discrete_residual(
    grid: PhaseGrid,
    u: np.ndarray,
    source: np.ndarray,
    inflow: np.ndarray,
    initial: np.ndarray,
    kernel: np.ndarray | None = None,
) -> float:
    """
    Sup norm of the scheme's residual for a computed field.

    Re-applies the discrete operator: time difference, upwind streaming with
    the inflow ghost, lagged scattering and source, plus the initial mismatch.

    Args:
        grid: Phase grid.
        u: Field, trailing axes (Nt + 1, Nx, Nv).
        source: Explicit right-hand side used by march.
        inflow: Ghost values used by march.
        initial: Level-0 data.
        kernel: Weighted scattering kernel, or None.

    Returns:
        Largest absolute residual.
    """
    new = u[..., 1:, :, :]
    old = u[..., :-1, :, :]
    positive = grid.positive

    # Upstream neighbour of every cell, ghost on the inflow face
    ghost = np.broadcast_to(inflow[..., 1:, None, :], new.shape[:-2] + (1, grid.Nv))
    upstream_left = np.concatenate([ghost, new[..., :-1, :]], axis=-2)
    upstream_right = np.concatenate([new[..., 1:, :], ghost], axis=-2)
    upstream = np.where(positive, upstream_left, upstream_right)
    streaming = np.abs(grid.v_nodes) * (new - upstream) / grid.dx

    rhs = source[..., :-1, :, :]
    if kernel is not None:
        levels = [
            scatter_level(old[..., k, :, :], kernel[k if kernel.shape[0] > 1 else 0])
            for k in range(grid.Nt)
        ]
        rhs = rhs + np.stack(levels, axis=-3)

    residual = (new - old) / grid.dt + streaming - rhs
    initial_gap = np.max(np.abs(u[..., 0, :, :] - initial))
    return float(max(np.max(np.abs(residual)), initial_gap))


# -----------------------------------------------------------------------------
# Problem-level solve
# -----------------------------------------------------------------------------


def explicit_source(spec: ProblemSpec, F: np.ndarray, sigma: np.ndarray | None = None) -> np.ndarray:
    """
    F - Sigma u0 on the grid.

    Args:
        spec: Problem.
        F: Source values (Nt + 1, Nx, Nv), possibly with leading batch axes.
        sigma: Absorption override; defaults to the spec's Sigma.

    Returns:
        Explicit source array.
    """
    sigma = spec.fields.sigma if sigma is None else sigma
    return F - sigma * spec.fields.u0


def problem_kernel(spec: ProblemSpec) -> np.ndarray | None:
    """Weighted scattering kernel of the spec, or None when J vanishes."""
    if not spec.fields.has_scattering:
        return None
    return weighted_kernel(spec.fields.J, spec.grid)


def apriori_ratio(
    u: GridFunction3,
    F: GridFunction3,
    phi: GridFunction2,
    mu: np.ndarray,
    sigma: GridFunction3,
    u0: GridFunction3,
) -> float:
    """
    ||u||_H divided by the a priori data bound.

        ||F||_Wt + ||phi||_h + ||mu||_Wt(inflow) + M(V) ||Sigma|| + M(V) ||u0||_H

    with M(V) = 2 (v1 - v0), the measure of the velocity set.

    Args:
        u: Solution.
        F: Source.
        phi: Initial data.
        mu: Inflow data (Nt + 1, Nv).
        sigma: Absorption coefficient.
        u0: Reference field absorption acts on.

    Returns:
        The ratio; 0.0 when both u and the data vanish.
    """
    grid = u.grid
    measure = grid.geometry.velocity_measure
    bound = (
        w_inf_t_norm(F)
        + h_inf_slice_norm(phi)
        + inflow_w_norm(mu, grid)
        + measure * sup_norm(sigma)
        + measure * norms(u0).h_inf
    )
    u_norm = norms(u).h_inf
    if bound == 0.0:
        return 0.0 if u_norm == 0.0 else float("inf")
    return u_norm / bound


def solve_linear_forward(
    spec: ProblemSpec,
    F_field: GridFunction3,
    sigma: np.ndarray | None = None,
) -> LinearForwardResult:
    """
    Solve the linear direct problem with the spec's inflow and initial data.

    Args:
        spec: Problem.
        F_field: Source F on the spec grid.
        sigma: Absorption override (absorption-mode forward maps); defaults
            to the spec's Sigma.

    Returns:
        LinearForwardResult with the state and the a priori ratio.

    Raises:
        BlowUpError: If the march exceeds the blow-up guard.
    """
    grid = spec.grid
    sigma_values = spec.fields.sigma if sigma is None else np.asarray(sigma)
    source = explicit_source(spec, F_field.values, sigma_values)
    kernel = problem_kernel(spec)

    u = march(grid, source, spec.fields.mu, spec.fields.phi, kernel)
    u_field = GridFunction3(grid, u)

    ratio = apriori_ratio(
        u_field,
        F_field,
        GridFunction2(grid, spec.fields.phi),
        spec.fields.mu,
        GridFunction3(grid, sigma_values),
        GridFunction3(grid, spec.fields.u0),
    )
    logger.debug(f"Linear forward solve: sup|u| = {sup_norm(u_field):.3e}, apriori ratio = {ratio:.3e}")

    return LinearForwardResult(
        u=u_field,
        source_used=GridFunction3(grid, source),
        inflow=spec.fields.mu,
        apriori_ratio=ratio,
    )


def residual(spec: ProblemSpec, result: LinearForwardResult) -> float:
    """
    Discrete residual of a linear forward result.

    Args:
        spec: Problem the result was computed for.
        result: Output of solve_linear_forward.

    Returns:
        Sup norm of the residual.
    """
    return discrete_residual(
        spec.grid,
        result.u.values,
        result.source_used.values,
        result.inflow,
        spec.fields.phi,
        problem_kernel(spec),
    )
