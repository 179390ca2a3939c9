"""
Independent oracles for verification.

- Dense assembly of the discrete forward map chi -> M(chi) for linear
  problems, and a direct LU solve of the inverse problem through it.
- A naive loop evaluation of S(u) to check the separable fast path.
- Manufactured-solution cases with known exact states and their forcing, and
  a convergence study over joint (Nx, Nt) doubling.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import polars as pl
from scipy.linalg import lu_factor, lu_solve

from transport.alpha import AlphaFamily, AlphaSpec, alpha
from transport.errors import ConfigError, IllConditionedError, ValidationError
from transport.expressions import Node
from transport.fields import GridFunction2, GridFunction3
from transport.inverse import forward_map_batch
from transport.nonlinear import solve_nonlinear_forward
from transport.problem import ProblemSpec, build_problem
from utils.constants import CONDITION_LIMIT, JACOBIAN_CHUNK

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DenseSystem:
    """
    Matrix form of a linear discrete forward map.

    M(chi) = matrix @ chi.ravel() + offset, with chi flattened x-major.
    """

    matrix: np.ndarray
    offset: np.ndarray
    conditioning: float


def assemble_dense(spec: ProblemSpec, workers: int | None = None) -> DenseSystem:
    """
    Assemble the discrete forward map column by column from forward solves.

    Column j is M(e_j) - M(0) for the unit control e_j. Columns are computed
    in fixed-size batches and placed by index.

    Args:
        spec: Linear inverse-mode problem.
        workers: Threads for the column batches.

    Returns:
        DenseSystem with a 2-norm condition number estimate.

    Raises:
        ValidationError: If the problem is nonlinear.
    """
    if not spec.is_linear:
        raise ValidationError("dense oracle needs a linear problem (alpha = zero or no Q terms)")

    grid = spec.grid
    n = grid.Nx * grid.Nv
    offset = forward_map_batch(np.zeros(grid.shape2), spec).reshape(-1)

    def columns(start: int) -> np.ndarray:
        stop = min(start + JACOBIAN_CHUNK, n)
        units = np.zeros((stop - start, n))
        units[np.arange(stop - start), np.arange(start, stop)] = 1.0
        slices = forward_map_batch(units.reshape(-1, grid.Nx, grid.Nv), spec)
        return slices.reshape(stop - start, n) - offset

    starts = list(range(0, n, JACOBIAN_CHUNK))
    matrix = np.empty((n, n))
    with ThreadPoolExecutor(max_workers=workers or os.cpu_count() or 1) as pool:
        for start, block in zip(starts, pool.map(columns, starts), strict=True):
            matrix[:, start : start + block.shape[0]] = block.T

    conditioning = float(np.linalg.cond(matrix))
    logger.info(f"Assembled dense {n}x{n} forward map, condition number {conditioning:.3e}")
    return DenseSystem(matrix=matrix, offset=offset, conditioning=conditioning)


def oracle_inverse(
    spec: ProblemSpec,
    psi: GridFunction2,
    system: DenseSystem | None = None,
) -> GridFunction2:
    """
    Solve the linear inverse problem by direct factorization of the dense map.

    Args:
        spec: Linear inverse-mode problem.
        psi: Final-time data.
        system: Pre-assembled dense map; assembled here when None.

    Returns:
        Recovered factor chi / g(T).

    Raises:
        IllConditionedError: If the condition number exceeds CONDITION_LIMIT.
    """
    system = system or assemble_dense(spec)
    if not np.isfinite(system.conditioning) or system.conditioning > CONDITION_LIMIT:
        raise IllConditionedError(
            f"dense forward map condition number {system.conditioning:.3e} exceeds {CONDITION_LIMIT:g}"
        )
    chi = lu_solve(lu_factor(system.matrix), psi.values.reshape(-1) - system.offset)
    return GridFunction2(spec.grid, chi.reshape(spec.grid.shape2) / spec.fields.g[-1])


def naive_apply_S(u: np.ndarray, spec: ProblemSpec) -> np.ndarray:
    """
    S(u) by explicit loops over every output and every quadrature node.

    Args:
        u: Field (Nt + 1, Nx, Nv).
        spec: Problem.

    Returns:
        Array of the same shape.
    """
    grid = spec.grid
    volumes = grid.cell_volumes()
    result = np.zeros(grid.shape3)
    if spec.alpha.is_zero:
        return result
    alpha_u = alpha(spec.alpha, u)
    for q1, q2 in zip(spec.fields.q1, spec.fields.q2, strict=True):
        for k in range(grid.Nt + 1):
            for i in range(grid.Nx):
                for j in range(grid.Nv):
                    total = 0.0
                    for kp in range(grid.Nt + 1):
                        for ip in range(grid.Nx):
                            for jp in range(grid.Nv):
                                total += volumes[kp, ip, jp] * q2[ip, jp] * alpha_u[kp, ip, jp]
                    result[k, i, j] += q1[k, i, j] * total
    return result


# =============================================================================
# MANUFACTURED SOLUTIONS
# =============================================================================

MMS_GEOMETRY = {"L": 1.0, "v0": 1.0, "v1": 2.0, "T": 1.0}

MMS_NAMES = {1: "advection", 2: "scattering", 3: "nonlinear", 4: "constant"}

# Scattering strength for case 2
MMS_J0 = 0.25

# Nonlinear case: softabs scale and the separable kernel q1(x) q2 = 0.5 cos(pi x / L) * 1
MMS_ALPHA_C = 0.25
MMS_Q1 = "0.5*cos(pi*x/L)"

_EXACT_WAVE = "t*sin(pi*x/L)"
_WAVE_FORCING = "sin(pi*x/L) + v*t*(pi/L)*cos(pi*x/L)"


class MmsCase(NamedTuple):
    spec: ProblemSpec
    exact_u: Node
    forcing: GridFunction3


def nonlinear_integral(geometry: dict, nodes: int = 64) -> float:
    """
    int_0^T int_0^L int_V alpha(t sin(pi x / L)) dv dx dt for the nonlinear case.

    Tensor Gauss-Legendre in x and t; the integrand does not depend on v, so the
    velocity integral is the measure 2 (v1 - v0).

    Args:
        geometry: L, v0, v1, T.
        nodes: Gauss points per direction.

    Returns:
        The integral.
    """
    L, T = geometry["L"], geometry["T"]
    points, weights = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * L * (points + 1.0)
    t = 0.5 * T * (points + 1.0)
    wx = 0.5 * L * weights
    wt = 0.5 * T * weights
    u = t[:, None] * np.sin(np.pi * x[None, :] / L)
    values = alpha(AlphaSpec(AlphaFamily.SOFTABS, MMS_ALPHA_C), u)
    measure = 2.0 * (geometry["v1"] - geometry["v0"])
    return float(measure * wt @ values @ wx)


def mms_config(case_id: int, Nx: int, Nv: int, Nt: int) -> dict:
    """
    Problem config for a manufactured-solution case.

    Args:
        case_id: 1 advection, 2 scattering, 3 nonlinear, 4 constant.
        Nx, Nv, Nt: Grid counts.

    Returns:
        Forward-mode config dict with exact.u set.

    Raises:
        ConfigError: On an unknown case id.
    """
    grid = {"Nx": Nx, "Nv": Nv, "Nt": Nt}
    if case_id == 1:
        coefficients = {"F": _WAVE_FORCING, "mu": _EXACT_WAVE}
        exact = _EXACT_WAVE
    elif case_id == 2:
        coefficients = {
            "J": repr(MMS_J0),
            "F": f"{_WAVE_FORCING} - {MMS_J0!r}*2*(v1 - v0)*{_EXACT_WAVE}",
            "mu": _EXACT_WAVE,
        }
        exact = _EXACT_WAVE
    elif case_id == 3:
        integral = nonlinear_integral(MMS_GEOMETRY)
        coefficients = {
            "alpha": {"family": "softabs", "c": MMS_ALPHA_C},
            "Q": [{"q1": MMS_Q1, "q2": "1"}],
            "F": f"{_WAVE_FORCING} + {integral!r}*{MMS_Q1}",
            "mu": _EXACT_WAVE,
        }
        exact = _EXACT_WAVE
    elif case_id == 4:
        coefficients = {"F": "0", "mu": "1", "phi": "1"}
        exact = "1"
    else:
        raise ConfigError(f"unknown MMS case {case_id!r} (expected one of {sorted(MMS_NAMES)})")

    return {
        "geometry": dict(MMS_GEOMETRY),
        "grid": grid,
        "mode": "forward",
        "coefficients": coefficients,
        "exact": {"u": exact},
    }


def mms_case(case_id: int, Nx: int = 16, Nv: int = 4, Nt: int = 16) -> MmsCase:
    """
    Manufactured-solution case with its exact state and forcing.

    Case 3's forcing includes S(u*), whose integral is computed by Gauss-Legendre
    quadrature rather than in closed form.

    Args:
        case_id: 1 advection, 2 scattering, 3 nonlinear, 4 constant.
        Nx, Nv, Nt: Grid counts.

    Returns:
        MmsCase(spec, exact_u, forcing).

    Raises:
        ConfigError: On an unknown case id.
    """
    spec = build_problem(mms_config(case_id, Nx, Nv, Nt))
    return MmsCase(
        spec=spec,
        exact_u=spec.expressions["exact.u"],
        forcing=GridFunction3(spec.grid, spec.fields.F),
    )


def case_error(case: MmsCase) -> float:
    """Sup error of the discrete solution against the exact state."""
    u, _ = solve_nonlinear_forward(case.spec, case.forcing)
    return float(np.max(np.abs(u.values - case.spec.fields.exact_u)))


def convergence_study(
    case_id: int,
    refinements: int = 3,
    Nx: int = 8,
    Nv: int = 4,
    Nt: int = 8,
    exact_floor: float = 1e-12,
) -> pl.DataFrame:
    """
    Sup errors under joint (Nx, Nt) doubling.

    Args:
        case_id: MMS case.
        refinements: Number of doublings (>= 2); the table has refinements + 1 rows.
        Nx, Nv, Nt: Coarsest grid.
        exact_floor: Errors at or below this are machine-precision exact and get
            no observed order.

    Returns:
        DataFrame with columns h, error, order (order = log2(e_k / e_{k+1}),
        null on the first row and wherever the error is at the floor).

    Raises:
        ValueError: If refinements < 2.
    """
    if refinements < 2:
        raise ValueError("convergence study needs at least 2 refinements")

    rows = []
    previous = None
    for level in range(refinements + 1):
        scale = 2**level
        case = mms_case(case_id, Nx * scale, Nv, Nt * scale)
        error = case_error(case)
        order = None
        if previous is not None and previous > exact_floor and error > exact_floor:
            order = float(np.log2(previous / error))
        rows.append({"h": case.spec.grid.dx, "error": error, "order": order})
        logger.info(
            f"MMS case {case_id} ({MMS_NAMES[case_id]}) Nx={Nx * scale} Nt={Nt * scale}: "
            f"error {error:.3e}" + (f", order {order:.3f}" if order is not None else "")
        )
        previous = error

    return pl.DataFrame(rows, schema={"h": pl.Float64, "error": pl.Float64, "order": pl.Float64})
