"""
Inverse problems: recover a stationary control from final-time data psi.

Source mode recovers f in F = f g; absorption mode recovers sigma in
Sigma = sigma g. Both work with the scaled control chi = factor * g(x, v, T),
which enters the equation as the coefficient field

    chi(x, v) g(x, v, t) / g(x, v, T)

and solve M(chi) = psi by damped Newton iteration, where M(chi) is the final
slice of the forward solution driven by that coefficient.

Jacobian-vector products solve the linearized problem

    du_t + v du_x + S'(u)[du] = int J du dv' + r,   zero initial and inflow data

with r = d_chi g/g(T) (source) or r = -d_chi g/g(T) u0 (absorption). Small
problems assemble the Jacobian densely and factor it; larger ones use
restarted GMRES on the matrix-free operator.
"""

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import StrEnum
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres

from transport.errors import (
    ConfigError,
    DivergenceError,
    JacobianSolveError,
    LineSearchError,
    NotConvergedError,
    SolverError,
    ValidationError,
)
from transport.fields import GridFunction2, GridFunction3, h_inf_slice_norm, sup_norm
from transport.linear import explicit_source, problem_kernel
from transport.nonlinear import (
    derivative_weights,
    linearized_term,
    nonlinear_term,
    picard_iterate,
)
from transport.problem import Mode, ProblemSpec
from utils.constants import JACOBIAN_CHUNK, LINE_SEARCH_FLOOR

logger = logging.getLogger(__name__)


class ControlKind(StrEnum):
    SOURCE = "source"
    ABSORPTION = "absorption"


@dataclass(frozen=True)
class ControlVariable:
    """Scaled control chi = factor * g(x, v, T) and which coefficient it drives."""

    chi: GridFunction2
    kind: ControlKind


@dataclass
class NewtonReport:
    """
    Newton iteration history.

    initial_residual is ||M(chi^0) - psi||; every other list holds one entry per
    Newton step, the residual being the one after that step.
    """

    iterations: int = 0
    initial_residual: float = 0.0
    residual_history: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    damping_factors: list[float] = field(default_factory=list)
    jacobian_solve_stats: list[dict] = field(default_factory=list)
    converged: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else self.initial_residual

    def to_dict(self) -> dict:
        return asdict(self)


class InverseSolution(NamedTuple):
    control: GridFunction2
    state: GridFunction3
    report: NewtonReport


@dataclass(frozen=True)
class StabilityEstimate:
    """
    Empirical constant C in ||f|| <= C ||psi||_h over a family of data.

    ratios holds one value per family member (None for skipped members);
    skipped lists (index, reason) for members whose inverse solve failed.
    """

    c_bar: float
    ratios: tuple[float | None, ...]
    skipped: tuple[tuple[int, str], ...]


# -----------------------------------------------------------------------------
# Control plumbing
# -----------------------------------------------------------------------------


def control_kind(spec: ProblemSpec) -> ControlKind:
    """
    Control kind for an inverse-mode spec.

    Raises:
        ConfigError: If the spec is in forward mode.
    """
    if spec.mode is Mode.INVERSE_SOURCE:
        return ControlKind.SOURCE
    if spec.mode is Mode.INVERSE_ABSORPTION:
        return ControlKind.ABSORPTION
    raise ConfigError(f"inverse solve needs an inverse mode, spec is {spec.mode}")


def _final_g(spec: ProblemSpec) -> np.ndarray:
    g_final = spec.fields.g[-1]
    below = np.abs(g_final) < spec.thresholds.g0
    if np.any(below):
        raise ValidationError(
            f"division guard: |g(x,v,T)| < g0 = {spec.thresholds.g0:g} at "
            f"{int(np.count_nonzero(below))} node(s)"
        )
    return g_final


def _coefficient(chi: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """chi g / g(T) for raw chi with trailing axes (Nx, Nv)."""
    profile = spec.fields.g / _final_g(spec)
    return chi[..., None, :, :] * profile


def control_to_coefficient(chi: ControlVariable, spec: ProblemSpec) -> GridFunction3:
    """
    Coefficient field chi(x, v) g(x, v, t) / g(x, v, T).

    Args:
        chi: Scaled control.
        spec: Problem.

    Returns:
        Field equal to chi at t = T.

    Raises:
        ValidationError: If |g(x, v, T)| < g0 somewhere.
    """
    return GridFunction3(spec.grid, _coefficient(chi.chi.values, spec))


def control_from_factor(factor: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """Scaled control chi = factor * g(., ., T)."""
    return factor * spec.fields.g[-1]


# -----------------------------------------------------------------------------
# Forward map
# -----------------------------------------------------------------------------


def _forward_raw(chi: np.ndarray, spec: ProblemSpec, kind: ControlKind) -> np.ndarray:
    """P(chi) on raw arrays: chi (..., Nx, Nv) -> u (..., Nt + 1, Nx, Nv)."""
    coefficient = _coefficient(chi, spec)
    if kind is ControlKind.SOURCE:
        source = explicit_source(spec, coefficient)
    else:
        if spec.fields.F is None:
            raise ConfigError("absorption mode needs a known source F")
        source = explicit_source(spec, spec.fields.F, coefficient)

    term = None if spec.is_linear else (lambda values: nonlinear_term(values, spec))
    u, _ = picard_iterate(
        spec.grid,
        source,
        spec.fields.mu,
        spec.fields.phi,
        problem_kernel(spec),
        term,
        spec.settings,
    )
    return u


def forward_map_batch(chi: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """
    M for a batch of raw controls.

    Args:
        chi: Controls with trailing axes (Nx, Nv).
        spec: Inverse-mode problem.

    Returns:
        Final slices with the same shape as chi.
    """
    return _forward_raw(chi, spec, control_kind(spec))[..., -1, :, :]


def forward_map_M(chi: ControlVariable, spec: ProblemSpec) -> tuple[GridFunction2, GridFunction3]:
    """
    Final-time slice of the forward solution driven by chi.

    Args:
        chi: Scaled control.
        spec: Inverse-mode problem.

    Returns:
        (M(chi), u).

    Raises:
        DivergenceError: If the inner Picard iteration diverges.
    """
    u = _forward_raw(chi.chi.values, spec, chi.kind)
    return GridFunction2(spec.grid, u[-1]), GridFunction3(spec.grid, u)


def _inflow_streaming(level: np.ndarray, ghost: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """v u_x at one level with the scheme's upwind stencil and inflow ghosts."""
    grid = spec.grid
    ghost = ghost[None, :]
    upstream_left = np.concatenate([ghost, level[:-1]], axis=0)
    upstream_right = np.concatenate([level[1:], ghost], axis=0)
    upstream = np.where(grid.positive, upstream_left, upstream_right)
    return np.abs(grid.v_nodes) * (level - upstream) / grid.dx


def forward_map_M_paperform(chi: ControlVariable, spec: ProblemSpec) -> GridFunction2:
    """
    M evaluated through the final-time balance instead of slicing.

    At t = T the equation gives Sigma(T) u0(T) = {source(T) - u_t - v u_x - S(u)
    + int J u dv'}; multiplying that bracket by u(T) / (Sigma(T) u0(T))
    reproduces u(T) in the continuum. Discretely the result differs from
    forward_map_M by a first-order truncation gap.

    Args:
        chi: Scaled control.
        spec: Inverse-mode problem.

    Returns:
        The bracket form of M(chi).

    Raises:
        ValidationError: If |Sigma(T) u0(T)| < sigma0 somewhere.
    """
    grid = spec.grid
    _, u_field = forward_map_M(chi, spec)
    u = u_field.values
    u0_final = spec.fields.u0[-1]

    if chi.kind is ControlKind.SOURCE:
        source_final = chi.chi.values
        sigma_final = spec.fields.sigma[-1]
    else:
        source_final = spec.fields.F[-1]
        sigma_final = chi.chi.values

    denominator = sigma_final * u0_final
    below = np.abs(denominator) < spec.thresholds.sigma0
    if np.any(below):
        raise ValidationError(
            f"division guard: |Sigma(T) u0(T)| < sigma0 at {int(np.count_nonzero(below))} node(s)"
        )

    time_rate = (u[-1] - u[-2]) / grid.dt
    streaming = _inflow_streaming(u[-1], spec.fields.mu[-1], spec)
    scattering = 0.0
    kernel = problem_kernel(spec)
    if kernel is not None:
        scattering = np.einsum("xvp,xp->xv", kernel[-1], u[-1])
    nonlinear = nonlinear_term(u, spec)[-1]

    bracket = source_final - time_rate - streaming - nonlinear + scattering
    return GridFunction2(grid, bracket * u[-1] / denominator)


# -----------------------------------------------------------------------------
# Jacobian
# -----------------------------------------------------------------------------


def _linearized_raw(
    d_chi: np.ndarray,
    weights: tuple[np.ndarray, ...],
    spec: ProblemSpec,
    kind: ControlKind,
) -> np.ndarray:
    """Final slices of the linearized solve for raw directions (..., Nx, Nv)."""
    grid = spec.grid
    forcing = _coefficient(d_chi, spec)
    if kind is ControlKind.ABSORPTION:
        forcing = -forcing * spec.fields.u0

    term = None if not weights else (lambda du: linearized_term(du, weights, spec))
    du, _ = picard_iterate(
        grid,
        forcing,
        np.zeros((grid.Nt + 1, grid.Nv)),
        np.zeros(grid.shape2),
        problem_kernel(spec),
        term,
        spec.settings,
        label="Linearized Picard",
    )
    return du[..., -1, :, :]


def jacobian_apply(
    chi: ControlVariable,
    d_chi: GridFunction2,
    u_base: GridFunction3,
    spec: ProblemSpec,
) -> GridFunction2:
    """
    Directional derivative M'(chi)[d_chi].

    Args:
        chi: Control the derivative is taken at.
        d_chi: Direction.
        u_base: Converged forward state at chi.
        spec: Inverse-mode problem.

    Returns:
        Final slice of the linearized solution.

    Raises:
        DivergenceError: If the linearized Picard iteration diverges.
    """
    weights = derivative_weights(u_base.values, spec)
    return GridFunction2(spec.grid, _linearized_raw(d_chi.values, weights, spec, chi.kind))


class JacobianSolver:
    """
    Newton-step solver for M'(chi) d = rhs at a fixed base state.

    Assembles and LU-factors the dense matrix when Nx Nv <= dense_limit,
    otherwise runs restarted GMRES on the matrix-free operator.

    Args:
        spec: Inverse-mode problem.
        kind: Control kind.
        u_base: Forward state at the current control.
        workers: Threads used for dense column assembly.
    """

    def __init__(
        self,
        spec: ProblemSpec,
        kind: ControlKind,
        u_base: np.ndarray,
        workers: int | None = None,
    ) -> None:
        self.spec = spec
        self.kind = kind
        self.weights = derivative_weights(u_base, spec)
        self.size = spec.grid.Nx * spec.grid.Nv
        self.dense = self.size <= spec.settings.dense_limit
        self.matrix = None
        self._lu = None
        if self.dense:
            self.matrix = self.assemble(workers)
            self._lu = self._factor(self.matrix)

    def apply(self, directions: np.ndarray) -> np.ndarray:
        """Jacobian applied to raw directions (..., Nx, Nv)."""
        return _linearized_raw(directions, self.weights, self.spec, self.kind)

    def assemble(self, workers: int | None = None) -> np.ndarray:
        """
        Dense Jacobian, one column per unit control.

        Columns are computed in fixed-size chunks; each chunk is one batched
        linearized solve. Chunks run on a thread pool and land at their own
        column indices, so the matrix does not depend on the worker count.

        Returns:
            (Nx Nv) x (Nx Nv) matrix.
        """
        grid = self.spec.grid
        n = self.size
        starts = list(range(0, n, JACOBIAN_CHUNK))

        def columns(start: int) -> np.ndarray:
            stop = min(start + JACOBIAN_CHUNK, n)
            units = np.zeros((stop - start, n))
            units[np.arange(stop - start), np.arange(start, stop)] = 1.0
            return self.apply(units.reshape(-1, grid.Nx, grid.Nv)).reshape(stop - start, n)

        matrix = np.empty((n, n))
        with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
            for start, block in zip(starts, pool.map(columns, starts), strict=True):
                matrix[:, start : start + block.shape[0]] = block.T
        return matrix

    @staticmethod
    def _factor(matrix: np.ndarray):
        with warnings.catch_warnings():
            warnings.simplefilter("error", LinAlgWarning)
            try:
                lu, piv = lu_factor(matrix)
            except (LinAlgWarning, ValueError) as e:
                raise JacobianSolveError(f"dense Jacobian is singular: {e}") from e
        if np.any(np.diag(lu) == 0.0):
            raise JacobianSolveError("dense Jacobian is singular")
        return lu, piv

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, dict]:
        """
        Solve M'(chi) d = rhs.

        Args:
            rhs: Right-hand side (Nx, Nv).

        Returns:
            (d, stats) with the method, inner iteration count and relative residual.

        Raises:
            JacobianSolveError: On a singular matrix or Krylov stagnation.
        """
        grid = self.spec.grid
        b = rhs.reshape(-1)
        b_norm = float(np.linalg.norm(b))

        if self.dense:
            x = lu_solve(self._lu, b)
            if not np.all(np.isfinite(x)):
                raise JacobianSolveError("dense Jacobian solve produced non-finite values")
            relative = float(np.linalg.norm(self.matrix @ x - b)) / b_norm if b_norm else 0.0
            return x.reshape(grid.shape2), {"method": "dense", "iterations": 1, "residual": relative}

        operator = LinearOperator(
            (self.size, self.size),
            matvec=lambda d: self.apply(d.reshape(grid.shape2)).reshape(-1),
            dtype=np.float64,
        )
        inner = []
        settings = self.spec.settings
        x, info = gmres(
            operator,
            b,
            rtol=settings.krylov_tol,
            atol=0.0,
            restart=settings.krylov_restart,
            maxiter=settings.krylov_maxiter,
            callback=inner.append,
            callback_type="pr_norm",
        )
        relative = float(np.linalg.norm(operator.matvec(x) - b)) / b_norm if b_norm else 0.0
        if info < 0 or not np.all(np.isfinite(x)):
            raise JacobianSolveError(f"GMRES failed (info = {info})")
        if info > 0 and relative > 1e-8:
            raise JacobianSolveError(
                f"GMRES stagnated after {len(inner)} iterations (relative residual {relative:.2e})"
            )
        return x.reshape(grid.shape2), {"method": "gmres", "iterations": len(inner), "residual": relative}


# -----------------------------------------------------------------------------
# Newton
# -----------------------------------------------------------------------------


def initial_control(spec: ProblemSpec, kind: ControlKind) -> np.ndarray:
    """Zero control, or the configured sigma prior (scaled by g(T)) in absorption mode."""
    if kind is ControlKind.ABSORPTION and spec.fields.sigma_prior is not None:
        return control_from_factor(spec.fields.sigma_prior, spec)
    return np.zeros(spec.grid.shape2)


def solve_inverse(
    spec: ProblemSpec,
    psi: GridFunction2,
    workers: int | None = None,
    jacobian: JacobianSolver | None = None,
) -> InverseSolution:
    """
    Recover the control from final-time data by damped Newton iteration.

    Args:
        spec: Inverse-mode problem.
        psi: Final-time data.
        workers: Threads for dense Jacobian assembly.
        jacobian: Pre-built solver to reuse; only valid when M is affine
            (linear problems), where the Jacobian does not depend on chi.

    Returns:
        InverseSolution(control, state, report) with control = chi / g(T).

    Raises:
        JacobianSolveError: If a Newton step cannot be solved.
        LineSearchError: If no damping factor down to 2^-10 lowers the residual.
        NotConvergedError: If max_newton steps do not reach newton_tol.
    """
    kind = control_kind(spec)
    settings = spec.settings
    g_final = _final_g(spec)
    target = psi.values

    chi = initial_control(spec, kind)
    u = _forward_raw(chi, spec, kind)
    residual = float(np.max(np.abs(u[-1] - target)))
    report = NewtonReport(initial_residual=residual)
    logger.info(f"Newton start ({kind}): residual {residual:.3e}")

    while residual > settings.newton_tol:
        if report.iterations >= settings.max_newton:
            raise NotConvergedError(
                f"Newton did not reach tol {settings.newton_tol:g} in {settings.max_newton} "
                f"iterations (residual {residual:.3e})",
                report,
            )

        if jacobian is None or not spec.is_linear:
            jacobian = JacobianSolver(spec, kind, u, workers)
        step, stats = jacobian.solve(target - u[-1])
        step_norm = float(np.max(np.abs(step)))

        damping = 1.0
        while True:
            trial = chi + damping * step
            try:
                u_trial = _forward_raw(trial, spec, kind)
                trial_residual = float(np.max(np.abs(u_trial[-1] - target)))
            except (DivergenceError, NotConvergedError) as e:
                if not settings.newton_damping:
                    raise
                logger.debug(f"Newton trial at damping {damping:g} failed: {e}")
                trial_residual = float("inf")

            accept = (
                not settings.newton_damping
                or trial_residual < residual
                or trial_residual <= settings.newton_tol
            )
            if accept:
                break
            damping /= 2.0
            if damping < LINE_SEARCH_FLOOR:
                raise LineSearchError(
                    f"no damping factor >= {LINE_SEARCH_FLOOR:g} lowered the residual "
                    f"{residual:.3e}; psi is likely outside the local basin"
                )

        chi, u, residual = trial, u_trial, trial_residual
        report.iterations += 1
        report.residual_history.append(residual)
        report.step_norms.append(step_norm)
        report.damping_factors.append(damping)
        report.jacobian_solve_stats.append(stats)
        logger.info(
            f"Newton iteration {report.iterations}: residual {residual:.3e}, "
            f"|step| {step_norm:.3e}, damping {damping:g} ({stats['method']})"
        )

    report.converged = True

    if kind is ControlKind.ABSORPTION and settings.check_sigma_lower_bound:
        below = int(np.count_nonzero(np.abs(chi) < spec.thresholds.sigma0))
        if below:
            message = f"|Sigma(x,v,T)| < sigma0 at {below} node(s) of the recovered control"
            logger.warning(message)
            report.warnings.append(message)

    control = GridFunction2(spec.grid, chi / g_final)
    return InverseSolution(control, GridFunction3(spec.grid, u), report)


# -----------------------------------------------------------------------------
# Stability
# -----------------------------------------------------------------------------


def random_psi_family(spec: ProblemSpec, size: int, seed: int) -> list[GridFunction2]:
    """
    Smooth random final-time data vanishing on both slab faces.

    Each member is sum_k a_k sin(k pi x / L) (b_0 + b_1 v / v1) for k = 1..3
    with normal coefficients drawn in order from one seeded generator.

    Args:
        spec: Problem (grid and geometry).
        size: Number of members.
        seed: Random seed.

    Returns:
        List of slices.
    """
    grid = spec.grid
    rng = np.random.default_rng(seed)
    x = grid.x_centers[:, None]
    v = grid.v_nodes[None, :] / spec.geometry.v1
    modes = [np.sin(k * np.pi * x / spec.geometry.L) for k in (1, 2, 3)]

    family = []
    for _ in range(size):
        a = rng.normal(size=3)
        b = rng.normal(size=2)
        spatial = sum(a_k * mode for a_k, mode in zip(a, modes, strict=True))
        family.append(GridFunction2(grid, spatial * (b[0] + b[1] * v)))
    return family


def stability_estimate(
    spec: ProblemSpec,
    psi_family: list[GridFunction2],
    workers: int | None = None,
) -> StabilityEstimate:
    """
    Empirical stability constant max ||f||_inf / ||psi||_h over a family.

    Args:
        spec: Linear inverse-source problem.
        psi_family: Final-time data to invert.
        workers: Threads for the member solves.

    Returns:
        StabilityEstimate; psi = 0 members have ratio 0, failed solves are skipped.

    Raises:
        ValidationError: If the problem is nonlinear.
    """
    if not spec.is_linear:
        raise ValidationError("stability estimate needs a linear problem (alpha = zero)")
    kind = control_kind(spec)
    jacobian = JacobianSolver(spec, kind, _forward_raw(np.zeros(spec.grid.shape2), spec, kind), workers)

    def ratio(psi: GridFunction2) -> float | str:
        psi_norm = h_inf_slice_norm(psi)
        if psi_norm == 0.0:
            return 0.0
        try:
            solution = solve_inverse(spec, psi, workers=1, jacobian=jacobian)
        except SolverError as e:
            return str(e)
        return sup_norm(solution.control) / psi_norm

    with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
        outcomes = list(pool.map(ratio, psi_family))

    ratios = tuple(o if isinstance(o, float) else None for o in outcomes)
    skipped = tuple((n, o) for n, o in enumerate(outcomes) if isinstance(o, str))
    for n, reason in skipped:
        logger.warning(f"Stability member {n} skipped: {reason}")

    valid = [r for r in ratios if r is not None]
    c_bar = max(valid) if valid else float("nan")
    return StabilityEstimate(c_bar=c_bar, ratios=ratios, skipped=skipped)
