"""Tests for transport.grid: geometry invariants and the phase-space grid."""

import numpy as np
import pytest

from transport.errors import ValidationError
from transport.grid import Geometry, Side, build_grid, characteristic_foot, inflow_set


class TestGeometry:
    """Tests for Geometry validation and derived quantities."""

    @pytest.mark.parametrize(
        "kwargs,message",
        [
            ({"L": 1.0, "v0": 0.0, "v1": 2.0, "T": 1.0}, "v0"),
            ({"L": 1.0, "v0": 2.0, "v1": 1.0, "T": 1.0}, "v1"),
            ({"L": -1.0, "v0": 1.0, "v1": 2.0, "T": 1.0}, "L"),
            ({"L": 1.0, "v0": 1.0, "v1": 2.0, "T": 0.0}, "T"),
        ],
    )
    def test_rejects_invalid(self, kwargs: dict, message: str):
        """Each invariant violation names the offending quantity."""
        with pytest.raises(ValidationError, match=message):
            Geometry(**kwargs).validate()

    def test_flight_time_and_measure(self, geometry):
        """Flight time is L / v0; velocity measure is 2 (v1 - v0)."""
        assert geometry.flight_time == 1.0
        assert geometry.velocity_measure == 2.0


class TestBuildGrid:
    """Tests for build_grid function."""

    def test_shapes(self, small_grid):
        """Arrays have the advertised lengths."""
        assert small_grid.shape3 == (9, 6, 4)
        assert small_grid.shape2 == (6, 4)
        assert small_grid.x_centers.shape == (6,)
        assert small_grid.t_levels.shape == (9,)

    def test_cell_centers(self, small_grid):
        """Cell centers sit at (i + 1/2) dx."""
        np.testing.assert_allclose(small_grid.x_centers, (np.arange(6) + 0.5) / 6)

    def test_ordinates_symmetric_and_nonzero(self, small_grid):
        """Ordinates come in +/- pairs, sorted, and never vanish."""
        v = small_grid.v_nodes
        np.testing.assert_allclose(v, [-1.75, -1.25, 1.25, 1.75])
        assert np.all(np.abs(v) >= 1.0)

    def test_velocity_weights_sum_to_measure(self, small_grid):
        """Quadrature weights integrate 1 to meas(V)."""
        assert small_grid.v_weights.sum() == pytest.approx(2.0)

    def test_time_levels(self, small_grid):
        """Uniform levels from 0 to T."""
        assert small_grid.t_levels[0] == 0.0
        assert small_grid.t_levels[-1] == pytest.approx(1.5)
        assert small_grid.dt == pytest.approx(1.5 / 8)

    def test_arrays_read_only(self, small_grid):
        """Grid arrays cannot be modified in place."""
        with pytest.raises(ValueError):
            small_grid.x_centers[0] = 5.0

    @pytest.mark.parametrize(
        "counts,message",
        [
            ({"Nx": 1, "Nv": 4, "Nt": 4}, "Nx"),
            ({"Nx": 4, "Nv": 3, "Nt": 4}, "Nv"),
            ({"Nx": 4, "Nv": 0, "Nt": 4}, "Nv"),
            ({"Nx": 4, "Nv": 4, "Nt": 0}, "Nt"),
        ],
    )
    def test_rejects_bad_counts(self, geometry, counts: dict, message: str):
        """Counts below the minimum (or odd Nv) are rejected."""
        with pytest.raises(ValidationError, match=message):
            build_grid(geometry, **counts)

    def test_rejects_zero_width_band(self):
        """v1 == v0 would give zero quadrature weights."""
        with pytest.raises(ValidationError, match="positive width"):
            build_grid(Geometry(L=1.0, v0=1.0, v1=1.0, T=2.0), Nx=4, Nv=2, Nt=4)

    def test_flight_time_flag(self):
        """flight_time_ok is False when slow particles can outlast T."""
        grid = build_grid(Geometry(L=1.0, v0=1.0, v1=2.0, T=0.5), Nx=4, Nv=2, Nt=4)
        assert not grid.flight_time_ok


class TestQuadrature:
    """Tests for time weights and cell volumes."""

    def test_time_weights_sum_to_T(self, small_grid):
        """Trapezoid weights over the levels sum to T."""
        weights = small_grid.time_weights()
        assert weights.sum() == pytest.approx(1.5)
        assert weights[0] == pytest.approx(0.5 * small_grid.dt)

    def test_cell_volumes_sum_to_cylinder(self, small_grid):
        """Space-time weights integrate 1 to L * meas(V) * T."""
        assert small_grid.cell_volumes().sum() == pytest.approx(1.0 * 2.0 * 1.5)

    def test_phase_volumes_sum(self, small_grid):
        """Phase-space weights integrate 1 to L * meas(V)."""
        assert small_grid.phase_volumes().sum() == pytest.approx(2.0)


class TestInflow:
    """Tests for inflow faces and characteristic feet."""

    def test_inflow_set(self, small_grid):
        """v > 0 enters on the left, v < 0 on the right."""
        assert inflow_set(small_grid) == [
            (Side.RIGHT, 0),
            (Side.RIGHT, 1),
            (Side.LEFT, 2),
            (Side.LEFT, 3),
        ]

    def test_inflow_coordinates(self, small_grid):
        """Face coordinate per ordinate."""
        np.testing.assert_array_equal(small_grid.inflow_coordinates(), [1.0, 1.0, 0.0, 0.0])

    def test_foot_inside(self):
        """Short traces stay in the slab."""
        foot, left = characteristic_foot(0.5, 1.0, 0.25, L=1.0)
        assert foot == pytest.approx(0.25)
        assert not left

    def test_foot_leaves_through_inflow(self):
        """A trace past x = 0 reports that it entered through the boundary."""
        foot, left = characteristic_foot(0.1, 1.0, 0.2, L=1.0)
        assert foot == pytest.approx(-0.1)
        assert left

    def test_negative_speed_leaves_right(self):
        """Negative speeds trace back towards x = L."""
        foot, left = characteristic_foot(0.9, -1.0, 0.2, L=1.0)
        assert foot == pytest.approx(1.1)
        assert left

    def test_foot_respects_slab_length(self):
        """The outflow check uses the given slab length, not the unit slab."""
        foot, left = characteristic_foot(1.5, -1.0, 0.2, L=2.0)
        assert foot == pytest.approx(1.7)
        assert not left
        _, left = characteristic_foot(1.9, -1.0, 0.2, L=2.0)
        assert left
