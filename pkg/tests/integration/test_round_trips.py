"""
End-to-end round trips: synthesize psi from a known control, then recover it.

Also covers the derivative consistency of the forward map and the agreement
between the sliced and bracket forms of M.
"""

import numpy as np
import pytest

from transport.errors import DivergenceError
from transport.fields import GridFunction2, GridFunction3
from transport.inverse import (
    ControlKind,
    ControlVariable,
    forward_map_batch,
    forward_map_M,
    forward_map_M_paperform,
    jacobian_apply,
    random_psi_family,
    solve_inverse,
    stability_estimate,
)
from transport.nonlinear import solve_nonlinear_forward
from transport.problem import build_problem


def reference_control(grid) -> np.ndarray:
    """0.5 sin(pi x / L) (1 + 0.5 v / v1) on the grid."""
    x = grid.x_centers[:, None] / grid.geometry.L
    v = grid.v_nodes[None, :] / grid.geometry.v1
    return 0.5 * np.sin(np.pi * x) * (1.0 + 0.5 * v)


def relative_error(recovered: np.ndarray, exact: np.ndarray) -> float:
    """Sup-norm relative error."""
    return float(np.max(np.abs(recovered - exact)) / np.max(np.abs(exact)))


class TestSourceRoundTrip:
    """Recover f from psi = M(f g(T))."""

    @pytest.mark.parametrize("grid", [{"Nx": 6, "Nv": 4, "Nt": 8}, {"Nx": 12, "Nv": 4, "Nt": 16}])
    def test_linear(self, make_config, round_trip_solver, grid):
        """Linear problems recover f to Newton precision."""
        spec = build_problem(make_config(mode="inverse_source", grid=grid, solver=round_trip_solver))
        f_true = reference_control(spec.grid)
        psi = GridFunction2(spec.grid, forward_map_batch(f_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        assert relative_error(solution.control.values, f_true) <= 1e-8

    def test_nonlinear(self, nonlinear_source_spec):
        """The nonlinear term does not spoil recovery for moderate data."""
        spec = nonlinear_source_spec
        f_true = reference_control(spec.grid)
        psi = GridFunction2(spec.grid, forward_map_batch(f_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        assert relative_error(solution.control.values, f_true) <= 1e-8
        assert all(d > 0 for d in solution.report.damping_factors)

    def test_gmres_path(self, make_config, round_trip_solver):
        """Matrix-free Newton steps recover f as well."""
        spec = build_problem(
            make_config(mode="inverse_source", solver={**round_trip_solver, "dense_limit": 0})
        )
        f_true = reference_control(spec.grid)
        psi = GridFunction2(spec.grid, forward_map_batch(f_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        assert relative_error(solution.control.values, f_true) <= 1e-8
        assert {s["method"] for s in solution.report.jacobian_solve_stats} == {"gmres"}


REFERENCE_GRID = {"Nx": 16, "Nv": 8, "Nt": 32}


class TestReferenceScale:
    """Round trips on the 16 x 8 x 32 reference grid."""

    @pytest.mark.slow
    def test_nonlinear_source(self, make_config, round_trip_solver):
        """f* = 0.1 sin(pi x / L) comes back within 8 Newton steps with falling residuals."""
        spec = build_problem(
            make_config(
                mode="inverse_source",
                grid=REFERENCE_GRID,
                coefficients={
                    "alpha": {"family": "softabs", "c": 0.1},
                    "Q": [{"q1": "0.2*cos(pi*x/L)", "q2": "1"}],
                },
                solver=round_trip_solver,
            )
        )
        grid = spec.grid
        f_true = 0.1 * np.sin(np.pi * grid.x_centers[:, None] / grid.geometry.L) * np.ones((1, grid.Nv))
        psi = GridFunction2(grid, forward_map_batch(f_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        report = solution.report

        assert relative_error(solution.control.values, f_true) <= 1e-8
        assert 1 <= report.iterations <= 8
        history = [report.initial_residual, *report.residual_history]
        assert all(later < earlier for earlier, later in zip(history, history[1:]))

    @pytest.mark.slow
    def test_absorption(self, make_config, round_trip_solver):
        """sigma* = 0.1 (1 + 0.5 cos(pi x / L)) comes back with |u0(T)| >= 0.1."""
        spec = build_problem(
            make_config(mode="inverse_absorption", grid=REFERENCE_GRID, solver=round_trip_solver)
        )
        grid = spec.grid
        assert np.min(np.abs(spec.fields.u0[-1])) >= 0.1
        x = grid.x_centers[:, None] / grid.geometry.L
        sigma_true = 0.1 * (1.0 + 0.5 * np.cos(np.pi * x)) * np.ones((1, grid.Nv))
        psi = GridFunction2(grid, forward_map_batch(sigma_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        assert relative_error(solution.control.values, sigma_true) <= 1e-8
        assert solution.report.iterations <= 8


class TestAbsorptionRoundTrip:
    """Recover sigma from psi = M(sigma g(T))."""

    def test_with_nonlinear_term(self, make_config, round_trip_solver):
        """Absorption recovery with softabs and a Q term."""
        spec = build_problem(
            make_config(
                mode="inverse_absorption",
                coefficients={
                    "alpha": {"family": "softabs", "c": 0.1},
                    "Q": [{"q1": "0.2*cos(pi*x/L)", "q2": "1"}],
                    "sigma_prior": "0.1",
                },
                solver=round_trip_solver,
            )
        )
        sigma_true = 0.5 + reference_control(spec.grid)
        psi = GridFunction2(spec.grid, forward_map_batch(sigma_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        assert relative_error(solution.control.values, sigma_true) <= 1e-8


class TestZeroData:
    """psi = 0 with vanishing sources and data."""

    def test_zero_control(self, make_config):
        """The only preimage of zero is zero, found without a Newton step."""
        spec = build_problem(
            make_config(
                mode="inverse_source",
                coefficients={
                    "u0": "0",
                    "alpha": {"family": "softabs", "c": 0.1},
                    "Q": [{"q1": "1", "q2": "1"}],
                },
            )
        )
        solution = solve_inverse(spec, GridFunction2.zeros(spec.grid))
        assert solution.report.iterations == 0
        np.testing.assert_array_equal(solution.control.values, 0.0)
        np.testing.assert_array_equal(solution.state.values, 0.0)


class TestDerivativeConsistency:
    """First-order Taylor remainder of M."""

    def test_difference_quotient_error_is_first_order(self, make_config):
        """|(M(chi + eps d) - M(chi)) / eps - M'(chi) d| shrinks linearly in eps."""
        spec = build_problem(
            make_config(
                mode="inverse_source",
                coefficients={"alpha": {"family": "softabs", "c": 1.0}, "Q": [{"q1": "0.1", "q2": "1"}]},
                solver={"picard_tol": 1e-13},
            )
        )
        grid = spec.grid
        chi = reference_control(grid)
        direction = np.cos(np.pi * grid.x_centers[:, None]) * np.ones((1, grid.Nv))
        control = ControlVariable(GridFunction2(grid, chi), ControlKind.SOURCE)
        base, u_base = forward_map_M(control, spec)
        derivative = jacobian_apply(control, GridFunction2(grid, direction), u_base, spec).values

        steps = np.array([1e-2, 1e-3, 1e-4])
        errors = []
        for eps in steps:
            shifted = forward_map_batch(chi + eps * direction, spec)
            errors.append(np.max(np.abs((shifted - base.values) / eps - derivative)))
        slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert 0.7 <= slope <= 1.3


class TestPicardBehaviour:
    """Contraction for small nonlinearities, divergence for large ones."""

    def test_contraction_ratios_below_one(self, make_config):
        """softabs(0.1) with a small Q contracts every step."""
        spec = build_problem(
            make_config(
                coefficients={"alpha": {"family": "softabs", "c": 0.1}, "Q": [{"q1": "0.2", "q2": "1"}]}
            )
        )
        _, report = solve_nonlinear_forward(spec, GridFunction3(spec.grid, spec.fields.F))
        assert report.converged
        assert max(report.contraction_ratios) < 1.0

    def test_large_coupling_diverges(self, make_config):
        """Scaling q1 by 100 breaks the contraction."""
        spec = build_problem(
            make_config(
                coefficients={
                    "alpha": {"family": "softabs", "c": 1.0},
                    "Q": [{"q1": "100", "q2": "1"}],
                    "F": "1",
                    "u0": "0",
                }
            )
        )
        with pytest.raises(DivergenceError):
            solve_nonlinear_forward(spec, GridFunction3(spec.grid, spec.fields.F))


class TestBracketForm:
    """Sliced M against the final-time balance form."""

    def test_gap_shrinks_under_refinement(self, make_config):
        """The truncation gap falls by at least 1.5x per joint doubling."""
        gaps = []
        for scale in (1, 2, 4):
            spec = build_problem(
                make_config(mode="inverse_source", grid={"Nx": 6 * scale, "Nv": 4, "Nt": 8 * scale})
            )
            grid = spec.grid
            chi = 0.1 * np.sin(np.pi * grid.x_centers[:, None]) * np.ones((1, grid.Nv))
            control = ControlVariable(GridFunction2(grid, chi), ControlKind.SOURCE)
            sliced, _ = forward_map_M(control, spec)
            bracket = forward_map_M_paperform(control, spec)
            gaps.append(float(np.max(np.abs(sliced.values - bracket.values))))
        assert gaps[0] / gaps[1] >= 1.5
        assert gaps[1] / gaps[2] >= 1.5


class TestStabilityReproducibility:
    """Thread count does not change the stability estimate."""

    def test_workers_do_not_matter(self, linear_source_spec):
        """Ratios are identical with 1 and 4 workers."""
        family = random_psi_family(linear_source_spec, 6, seed=linear_source_spec.verify.seed)
        one = stability_estimate(linear_source_spec, family, workers=1)
        four = stability_estimate(linear_source_spec, family, workers=4)
        assert one.ratios == four.ratios
        assert one.c_bar == four.c_bar
