"""
Grid functions on the phase-space cylinder and their discrete norms.

GridFunction3 holds a field u(x, v, t) as an array indexed [time][space][velocity];
GridFunction2 holds a phase-space slice such as psi(x, v) or a control chi(x, v).
Both validate shape and finiteness on construction and keep a read-only copy
of their values, so they can be shared freely.

The derivative operators use the same first-order one-sided stencils as the
transport scheme, so the norm diagnostics measure what the scheme controls:

    ||u||_H   = sup|u| + sup|u_t| + sup|(v, grad) u| + sup|u on inflow faces|
    ||F||_Wt  = sup|F| + sup|F_t|
    ||phi||_h = sup|phi| + sup|(v, grad) phi| + sup|phi on inflow faces|
"""

import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import polars as pl

from transport.errors import FieldError
from transport.grid import PhaseGrid
from utils.constants import DUMP_MAGIC


def _frozen_copy(values: np.ndarray, shape: tuple[int, ...], label: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.shape != shape:
        raise FieldError(f"{label} values must have shape {shape}, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise FieldError(f"{label} values contain NaN or inf")
    array.setflags(write=False)
    return array


def _same_grid(a: PhaseGrid, b: PhaseGrid) -> bool:
    return a is b or (a.geometry == b.geometry and a.shape3 == b.shape3)


class _GridFunction:
    """Shared arithmetic for grid functions; subclasses fix the expected shape."""

    grid: PhaseGrid
    values: np.ndarray

    def _like(self, values: np.ndarray):
        return type(self)(self.grid, values)

    def _other_values(self, other) -> np.ndarray:
        if isinstance(other, _GridFunction):
            if not _same_grid(self.grid, other.grid):
                raise FieldError("grid functions live on different grids")
            return other.values
        return np.asarray(other, dtype=np.float64)

    def __add__(self, other):
        return self._like(self.values + self._other_values(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._like(self.values - self._other_values(other))

    def __rsub__(self, other):
        return self._like(self._other_values(other) - self.values)

    def __mul__(self, other):
        return self._like(self.values * self._other_values(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._like(self.values / self._other_values(other))

    def __neg__(self):
        return self._like(-self.values)


class GridFunction3(_GridFunction):
    """
    Real field on the space-time grid.

    Args:
        grid: Phase grid the field lives on.
        values: Array of shape (Nt + 1, Nx, Nv).

    Raises:
        FieldError: On a shape mismatch or non-finite entries.
    """

    def __init__(self, grid: PhaseGrid, values: np.ndarray) -> None:
        self.grid = grid
        self.values = _frozen_copy(values, grid.shape3, "GridFunction3")

    @classmethod
    def zeros(cls, grid: PhaseGrid) -> "GridFunction3":
        """Identically zero field."""
        return cls(grid, np.zeros(grid.shape3))

    @classmethod
    def from_function(cls, grid: PhaseGrid, fn) -> "GridFunction3":
        """
        Sample a vectorized callable fn(x, v, t) on the grid nodes.

        Args:
            grid: Phase grid.
            fn: Callable accepting broadcastable arrays x, v, t.

        Returns:
            Sampled field.
        """
        x = grid.x_centers[None, :, None]
        v = grid.v_nodes[None, None, :]
        t = grid.t_levels[:, None, None]
        return cls(grid, np.broadcast_to(fn(x, v, t), grid.shape3))

    def __repr__(self) -> str:
        return f"GridFunction3(shape={self.values.shape})"


class GridFunction2(_GridFunction):
    """
    Real field on the phase-space grid G x V.

    Args:
        grid: Phase grid the slice belongs to.
        values: Array of shape (Nx, Nv).

    Raises:
        FieldError: On a shape mismatch or non-finite entries.
    """

    def __init__(self, grid: PhaseGrid, values: np.ndarray) -> None:
        self.grid = grid
        self.values = _frozen_copy(values, grid.shape2, "GridFunction2")

    @classmethod
    def zeros(cls, grid: PhaseGrid) -> "GridFunction2":
        """Identically zero slice."""
        return cls(grid, np.zeros(grid.shape2))

    @classmethod
    def from_function(cls, grid: PhaseGrid, fn) -> "GridFunction2":
        """
        Sample a vectorized callable fn(x, v) on the phase-space nodes.

        Args:
            grid: Phase grid.
            fn: Callable accepting broadcastable arrays x, v.

        Returns:
            Sampled slice.
        """
        x = grid.x_centers[:, None]
        v = grid.v_nodes[None, :]
        return cls(grid, np.broadcast_to(fn(x, v), grid.shape2))

    def __repr__(self) -> str:
        return f"GridFunction2(shape={self.values.shape})"


@dataclass(frozen=True)
class NormReport:
    """
    Discrete norms of a space-time field.

    h_inf = sup + sup_dt + sup_stream + trace_sup and w_inf_t = sup + sup_dt;
    l2 and l2_combined are diagnostics in the L2 scale.
    """

    sup: float
    l2: float
    sup_dt: float
    sup_stream: float
    trace_sup: float
    h_inf: float
    w_inf_t: float
    l2_combined: float

    def to_dict(self) -> dict:
        """Plain dict for JSON output."""
        return asdict(self)


# -----------------------------------------------------------------------------
# Raw-array operators (trailing axes are [..., Nx, Nv]; leading axes are free)
# -----------------------------------------------------------------------------


def stream_difference(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """
    Upwind spatial difference times v, on arrays whose last two axes are (Nx, Nv).

    For v > 0 the difference looks left, for v < 0 it looks right; the cell
    with no upwind neighbour reuses the one-sided interior difference.

    Args:
        values: Array with trailing axes (Nx, Nv).
        grid: Phase grid.

    Returns:
        Array of the same shape holding v * D_upwind(values).
    """
    backward = np.empty_like(values)
    backward[..., 1:, :] = values[..., 1:, :] - values[..., :-1, :]
    backward[..., 0, :] = backward[..., 1, :]
    forward = np.empty_like(values)
    forward[..., :-1, :] = backward[..., 1:, :]
    forward[..., -1, :] = forward[..., -2, :]
    upwind = np.where(grid.positive, backward, forward)
    return grid.v_nodes * upwind / grid.dx


def inflow_trace_values(values: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """
    Values in the boundary-adjacent cell on each ordinate's inflow side.

    Args:
        values: Array with trailing axes (Nx, Nv).
        grid: Phase grid.

    Returns:
        Array with the Nx axis removed: [..., Nv].
    """
    return np.where(grid.positive, values[..., 0, :], values[..., -1, :])


# -----------------------------------------------------------------------------
# Operations on grid functions
# -----------------------------------------------------------------------------


def sup_norm(u: GridFunction3 | GridFunction2) -> float:
    """
    L-infinity norm: max of |values|.

    Args:
        u: Space-time field or phase-space slice.

    Returns:
        Non-negative float, zero iff u is identically zero.
    """
    return float(np.max(np.abs(u.values))) if u.values.size else 0.0


def l2_norm(u: GridFunction3 | GridFunction2) -> float:
    """
    Discrete L2 norm with weights dx * w_v (* trapezoid w_t for space-time fields).

    Args:
        u: Space-time field or phase-space slice.

    Returns:
        Non-negative float.
    """
    if isinstance(u, GridFunction3):
        weights = u.grid.cell_volumes()
    else:
        weights = u.grid.phase_volumes()
    return float(np.sqrt(np.sum((weights * u.values**2).reshape(-1))))


def time_derivative(u: GridFunction3) -> GridFunction3:
    """
    First-order time differences.

    Forward differences (u[k+1] - u[k]) / dt for k < Nt and the backward
    difference at k = Nt.

    Args:
        u: Space-time field.

    Returns:
        Field of the same shape.
    """
    values = u.values
    derivative = np.empty_like(values)
    derivative[:-1] = (values[1:] - values[:-1]) / u.grid.dt
    derivative[-1] = derivative[-2]
    return GridFunction3(u.grid, derivative)


def streaming_derivative(u: GridFunction3) -> GridFunction3:
    """
    Upwind approximation of (v, grad) u.

    Args:
        u: Space-time field.

    Returns:
        Field of the same shape.
    """
    return GridFunction3(u.grid, stream_difference(u.values, u.grid))


def trace_inflow(u: GridFunction3) -> np.ndarray:
    """
    Trace on the inflow boundary over all time levels.

    Args:
        u: Space-time field.

    Returns:
        Array of shape (Nt + 1, Nv).
    """
    return inflow_trace_values(u.values, u.grid)


def final_slice(u: GridFunction3) -> GridFunction2:
    """
    Values at t = T.

    Args:
        u: Space-time field.

    Returns:
        Slice values[Nt].
    """
    return GridFunction2(u.grid, u.values[-1])


def norms(u: GridFunction3) -> NormReport:
    """
    Full discrete norm report of a space-time field.

    Args:
        u: Space-time field.

    Returns:
        NormReport with H_inf and W_inf^t combinations.
    """
    grid = u.grid
    du_dt = time_derivative(u)
    stream = streaming_derivative(u)
    trace = trace_inflow(u)

    sup = sup_norm(u)
    sup_dt = sup_norm(du_dt)
    sup_stream = sup_norm(stream)
    trace_sup = float(np.max(np.abs(trace)))

    # Inflow trace measured on Gamma_- with weights w_v * w_t
    trace_weights = grid.time_weights()[:, None] * grid.v_weights[None, :]
    trace_l2_sq = float(np.sum((trace_weights * trace**2).reshape(-1)))
    l2 = l2_norm(u)
    l2_combined = float(
        np.sqrt(l2**2 + l2_norm(du_dt) ** 2 + l2_norm(stream) ** 2 + trace_l2_sq)
    )

    return NormReport(
        sup=sup,
        l2=l2,
        sup_dt=sup_dt,
        sup_stream=sup_stream,
        trace_sup=trace_sup,
        h_inf=sup + sup_dt + sup_stream + trace_sup,
        w_inf_t=sup + sup_dt,
        l2_combined=l2_combined,
    )


def w_inf_t_norm(u: GridFunction3) -> float:
    """
    ||u||_{W_inf^t} = sup|u| + sup|u_t|.

    Args:
        u: Space-time field.

    Returns:
        Non-negative float.
    """
    return sup_norm(u) + sup_norm(time_derivative(u))


def h_inf_slice_norm(w: GridFunction2) -> float:
    """
    ||w||_{h_inf(G x V)} = sup|w| + sup|(v, grad) w| + sup|w on inflow cells|.

    Args:
        w: Phase-space slice.

    Returns:
        Non-negative float.
    """
    stream = stream_difference(w.values, w.grid)
    trace = inflow_trace_values(w.values, w.grid)
    return sup_norm(w) + float(np.max(np.abs(stream))) + float(np.max(np.abs(trace)))


def inflow_w_norm(mu: np.ndarray, grid: PhaseGrid) -> float:
    """
    W_inf^t norm of inflow data on Gamma_-.

    Args:
        mu: Inflow values of shape (Nt + 1, Nv).
        grid: Phase grid.

    Returns:
        sup|mu| + sup|mu_t| with forward time differences.
    """
    if mu.shape[0] < 2:
        return float(np.max(np.abs(mu)))
    rate = np.diff(mu, axis=0) / grid.dt
    return float(np.max(np.abs(mu)) + np.max(np.abs(rate)))


# -----------------------------------------------------------------------------
# Binary dumps and CSV export
# -----------------------------------------------------------------------------


def dump_array(values: np.ndarray, path: Path) -> None:
    """
    Write an array in the TIVP1 binary format atomically.

    Header line "TIVP1 d1 d2 ...\\n", then little-endian float64 in C order.
    Uses tempfile + os.replace so a crash never leaves a partial dump.

    Args:
        values: Array of any dimension.
        path: Destination file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = " ".join([DUMP_MAGIC, *map(str, values.shape)]) + "\n"
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()

    with tempfile.NamedTemporaryFile(
        mode="wb",
        dir=path.parent,
        suffix=".tmp",
        delete=False,
    ) as f:
        f.write(header.encode("ascii"))
        f.write(payload)
        temp_path = f.name

    try:
        os.replace(temp_path, path)
    except Exception:
        Path(temp_path).unlink(missing_ok=True)
        raise


def load_array(path: Path) -> np.ndarray:
    """
    Read an array written by dump_array.

    Args:
        path: Dump file.

    Returns:
        Array with the shape recorded in the header.

    Raises:
        FieldError: If the header is malformed or the payload size disagrees.
    """
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").split()
        payload = f.read()

    if not header or header[0] != DUMP_MAGIC:
        raise FieldError(f"{path} is not a {DUMP_MAGIC} dump")
    try:
        shape = tuple(int(dim) for dim in header[1:])
    except ValueError as e:
        raise FieldError(f"{path} has a malformed shape header: {header[1:]}") from e

    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise FieldError(
            f"{path} payload has {len(payload)} bytes, header implies {expected}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)


def slice_frame(w: GridFunction2) -> pl.DataFrame:
    """
    Long-format table of a slice.

    Args:
        w: Phase-space slice.

    Returns:
        DataFrame with columns x, v, value (one row per node, x-major).
    """
    grid = w.grid
    return pl.DataFrame(
        {
            "x": np.repeat(grid.x_centers, grid.Nv),
            "v": np.tile(grid.v_nodes, grid.Nx),
            "value": w.values.reshape(-1),
        }
    )
