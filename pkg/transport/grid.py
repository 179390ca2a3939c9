"""
Slab phase-space geometry and its discretization.

The spatial domain is the interval G = (0, L); velocities fill two bands
[-v1, -v0] and [v0, v1], so no ordinate is ever zero. A PhaseGrid adds cell
centers, midpoint velocity ordinates with quadrature weights, and uniform time
levels on [0, T].

Usage:
    from transport.grid import Geometry, build_grid

    grid = build_grid(Geometry(L=1.0, v0=1.0, v1=2.0, T=1.0), Nx=16, Nv=8, Nt=32)
"""

import logging
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from transport.errors import ValidationError

logger = logging.getLogger(__name__)


class Side(StrEnum):
    """Boundary face of the slab."""

    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Geometry:
    """
    Physical extent of the problem.

    Args:
        L: Slab length.
        v0: Minimum speed (strictly positive).
        v1: Maximum speed.
        T: Final time.
    """

    L: float
    v0: float
    v1: float
    T: float

    def validate(self) -> None:
        """
        Check the geometry invariants.

        Raises:
            ValidationError: If any of L, v0, T is not positive or v1 < v0.
        """
        if not self.v0 > 0:
            raise ValidationError("v0 must be positive")
        if self.v1 < self.v0:
            raise ValidationError("v1 must be >= v0")
        if not self.L > 0:
            raise ValidationError("L must be positive")
        if not self.T > 0:
            raise ValidationError("T must be positive")

    @property
    def flight_time(self) -> float:
        """Longest time a particle can stay in the slab, L / v0."""
        return self.L / self.v0

    @property
    def velocity_measure(self) -> float:
        """Measure of the velocity set, 2 (v1 - v0)."""
        return 2.0 * (self.v1 - self.v0)


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    """
    Discretization of G x V x [0, T].

    Built by build_grid; fields are read-only arrays. Velocity ordinates are
    sorted ascending: the negative band first, then the positive band.
    """

    geometry: Geometry
    Nx: int
    Nv: int
    Nt: int
    x_centers: np.ndarray = field(repr=False)
    v_nodes: np.ndarray = field(repr=False)
    v_weights: np.ndarray = field(repr=False)
    t_levels: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        """Spatial cell width."""
        return self.geometry.L / self.Nx

    @property
    def dt(self) -> float:
        """Time step."""
        return self.geometry.T / self.Nt

    @property
    def shape3(self) -> tuple[int, int, int]:
        """Shape of a space-time field: (Nt + 1, Nx, Nv)."""
        return (self.Nt + 1, self.Nx, self.Nv)

    @property
    def shape2(self) -> tuple[int, int]:
        """Shape of a phase-space slice: (Nx, Nv)."""
        return (self.Nx, self.Nv)

    @property
    def flight_time_ok(self) -> bool:
        """True when every characteristic crosses the slab before T (L / v0 < T)."""
        return self.geometry.flight_time < self.geometry.T

    @property
    def positive(self) -> np.ndarray:
        """Boolean mask of ordinates with v > 0."""
        return self.v_nodes > 0

    def time_weights(self) -> np.ndarray:
        """
        Trapezoid weights over the time levels.

        Returns:
            Array of length Nt + 1 summing to T.
        """
        weights = np.full(self.Nt + 1, self.dt)
        weights[0] = weights[-1] = 0.5 * self.dt
        return weights

    def cell_volumes(self) -> np.ndarray:
        """
        Quadrature weights dx * w_v * w_t for every space-time node.

        Returns:
            Array of shape (Nt + 1, Nx, Nv) summing to L * 2(v1 - v0) * T.
        """
        phase = self.dx * self.v_weights[None, :] * np.ones((self.Nx, 1))
        return self.time_weights()[:, None, None] * phase[None, :, :]

    def phase_volumes(self) -> np.ndarray:
        """
        Quadrature weights dx * w_v for every phase-space node.

        Returns:
            Array of shape (Nx, Nv) summing to L * 2(v1 - v0).
        """
        return self.dx * self.v_weights[None, :] * np.ones((self.Nx, 1))

    def inflow_coordinates(self) -> np.ndarray:
        """
        Boundary coordinate of each ordinate's inflow face.

        Returns:
            Array of length Nv: 0 for v > 0, L for v < 0.
        """
        return np.where(self.positive, 0.0, self.geometry.L)


def _band_ordinates(v0: float, v1: float, per_band: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint ordinates and weights on [v0, v1]."""
    width = (v1 - v0) / per_band
    nodes = v0 + (np.arange(per_band) + 0.5) * width
    return nodes, np.full(per_band, width)


def build_grid(geometry: Geometry, Nx: int, Nv: int, Nt: int) -> PhaseGrid:
    """
    Discretize the phase-space cylinder.

    Args:
        geometry: Slab length, speed band and final time.
        Nx: Spatial cell count (>= 2).
        Nv: Velocity ordinate count (>= 2, even; half per band).
        Nt: Time step count (>= 1).

    Returns:
        PhaseGrid with cell centers (i + 1/2) L / Nx, midpoint ordinates and
        uniform time levels.

    Raises:
        ValidationError: On geometry invariant violations, bad counts, or a
            zero-width velocity band.
    """
    geometry.validate()
    if Nx < 2:
        raise ValidationError("Nx must be at least 2")
    if Nv < 2 or Nv % 2:
        raise ValidationError("Nv must be even and at least 2")
    if Nt < 1:
        raise ValidationError("Nt must be at least 1")
    if geometry.v1 == geometry.v0:
        raise ValidationError("velocity band must have positive width (v1 > v0)")

    x_centers = (np.arange(Nx) + 0.5) * geometry.L / Nx
    positive_nodes, weights = _band_ordinates(geometry.v0, geometry.v1, Nv // 2)
    v_nodes = np.concatenate([-positive_nodes[::-1], positive_nodes])
    v_weights = np.concatenate([weights, weights])
    t_levels = np.arange(Nt + 1) * (geometry.T / Nt)

    grid = PhaseGrid(
        geometry=geometry,
        Nx=Nx,
        Nv=Nv,
        Nt=Nt,
        x_centers=_readonly(x_centers),
        v_nodes=_readonly(v_nodes),
        v_weights=_readonly(v_weights),
        t_levels=_readonly(t_levels),
    )

    if not grid.flight_time_ok:
        logger.warning(
            f"Flight time L/v0 = {geometry.flight_time:g} is not below T = {geometry.T:g}; "
            "slow particles can stay in the slab for the whole horizon"
        )
    return grid


def inflow_set(grid: PhaseGrid) -> list[tuple[Side, int]]:
    """
    Inflow boundary faces, one per ordinate.

    In 1-D the outward normal is -1 at x = 0 and +1 at x = L, so v > 0 enters
    on the left and v < 0 on the right.

    Args:
        grid: Phase grid.

    Returns:
        List of (side, ordinate index), in ordinate order.
    """
    return [
        (Side.LEFT if v > 0 else Side.RIGHT, j) for j, v in enumerate(grid.v_nodes)
    ]


def characteristic_foot(x: float, v: float, dt: float, L: float) -> tuple[float, bool]:
    """
    Trace a characteristic backwards over one time step.

    Args:
        x: Starting coordinate.
        v: Signed speed.
        dt: Duration (>= 0).
        L: Slab length.

    Returns:
        (x - v * dt, left_domain) where left_domain is True when the foot lies
        outside [0, L], i.e. the characteristic entered through the inflow face.
    """
    foot = x - v * dt
    return foot, bool(foot < 0.0 or foot > L)
