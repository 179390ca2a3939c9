"""Tests for transport.inverse: forward map, Jacobian, Newton and stability."""

import numpy as np
import pytest

from transport.errors import ConfigError, NotConvergedError, ValidationError
from transport.fields import GridFunction2
from transport.inverse import (
    ControlKind,
    ControlVariable,
    JacobianSolver,
    NewtonReport,
    control_kind,
    control_to_coefficient,
    forward_map_batch,
    forward_map_M,
    forward_map_M_paperform,
    jacobian_apply,
    random_psi_family,
    solve_inverse,
    stability_estimate,
)
from transport.problem import build_problem


def smooth_control(grid, amplitude: float = 0.5) -> np.ndarray:
    """A smooth stationary factor on the grid."""
    x = grid.x_centers[:, None] / grid.geometry.L
    v = grid.v_nodes[None, :] / grid.geometry.v1
    return amplitude * np.sin(np.pi * x) * (1.0 + 0.5 * v)


class TestControlPlumbing:
    """Tests for control kinds and coefficient fields."""

    def test_kinds(self, linear_source_spec, make_config):
        """Inverse modes map to their control kinds."""
        assert control_kind(linear_source_spec) is ControlKind.SOURCE
        absorption = build_problem(make_config(mode="inverse_absorption"))
        assert control_kind(absorption) is ControlKind.ABSORPTION

    def test_forward_mode_rejected(self, forward_spec):
        """Forward specs have no control."""
        with pytest.raises(ConfigError, match="inverse mode"):
            control_kind(forward_spec)

    def test_coefficient_equals_chi_at_final_time(self, linear_source_spec):
        """chi g / g(T) reduces to chi at t = T."""
        grid = linear_source_spec.grid
        chi = ControlVariable(GridFunction2(grid, smooth_control(grid)), ControlKind.SOURCE)
        coefficient = control_to_coefficient(chi, linear_source_spec)
        np.testing.assert_allclose(coefficient.values[-1], chi.chi.values)
        np.testing.assert_allclose(coefficient.values[0], chi.chi.values * np.exp(1.5))

    def test_g_division_guard(self, make_config):
        """A vanishing g(T) is refused."""
        spec = build_problem(make_config(mode="inverse_source", coefficients={"g": "1e-10"}))
        chi = ControlVariable(GridFunction2.zeros(spec.grid), ControlKind.SOURCE)
        with pytest.raises(ValidationError, match="g0"):
            control_to_coefficient(chi, spec)


class TestForwardMap:
    """Tests for the control-to-data map."""

    def test_batch_matches_single(self, linear_source_spec, rng):
        """Batched controls give the same slices as one-by-one calls."""
        grid = linear_source_spec.grid
        controls = rng.normal(size=(3,) + grid.shape2)
        batched = forward_map_batch(controls, linear_source_spec)
        for n in range(3):
            chi = ControlVariable(GridFunction2(grid, controls[n]), ControlKind.SOURCE)
            single, _ = forward_map_M(chi, linear_source_spec)
            np.testing.assert_allclose(batched[n], single.values, atol=1e-14)

    def test_affine_in_linear_problems(self, linear_source_spec, rng):
        """M(a + b) + M(0) = M(a) + M(b) without S."""
        grid = linear_source_spec.grid
        a, b = rng.normal(size=(2,) + grid.shape2)
        M = lambda chi: forward_map_batch(chi, linear_source_spec)  # noqa: E731
        np.testing.assert_allclose(M(a + b) + M(np.zeros(grid.shape2)), M(a) + M(b), atol=1e-12)

    def test_paperform_needs_absorption(self, make_config):
        """The bracket form divides by Sigma(T) u0(T)."""
        spec = build_problem(make_config(mode="inverse_source", coefficients={"Sigma": "0"}))
        chi = ControlVariable(GridFunction2.zeros(spec.grid), ControlKind.SOURCE)
        with pytest.raises(ValidationError, match="sigma0"):
            forward_map_M_paperform(chi, spec)


class TestJacobian:
    """Tests for Jacobian products and Newton-step solves."""

    def test_matches_central_difference(self, nonlinear_source_spec, rng):
        """M'(chi)[d] agrees with a central difference of M."""
        spec = nonlinear_source_spec
        grid = spec.grid
        chi = smooth_control(grid)
        direction = rng.normal(size=grid.shape2)
        eps = 1e-4
        quotient = (
            forward_map_batch(chi + eps * direction, spec) - forward_map_batch(chi - eps * direction, spec)
        ) / (2 * eps)
        control = ControlVariable(GridFunction2(grid, chi), ControlKind.SOURCE)
        _, u_base = forward_map_M(control, spec)
        exact = jacobian_apply(control, GridFunction2(grid, direction), u_base, spec)
        np.testing.assert_allclose(quotient, exact.values, atol=1e-7)

    def test_dense_matches_difference_of_map(self, linear_source_spec):
        """For affine M the dense Jacobian columns are M(e_j) - M(0)."""
        spec = linear_source_spec
        grid = spec.grid
        base = forward_map_batch(np.zeros(grid.shape2), spec)
        jacobian = JacobianSolver(spec, ControlKind.SOURCE, np.zeros(grid.shape3))
        unit = np.zeros(grid.shape2)
        unit[2, 1] = 1.0
        column = jacobian.matrix[:, 2 * grid.Nv + 1]
        np.testing.assert_allclose(column, (forward_map_batch(unit, spec) - base).reshape(-1), atol=1e-13)

    def test_gmres_matches_dense(self, make_config, round_trip_solver, rng):
        """Matrix-free GMRES and dense LU give the same Newton step."""
        dense_spec = build_problem(make_config(mode="inverse_source", solver=round_trip_solver))
        krylov_spec = build_problem(
            make_config(mode="inverse_source", solver={**round_trip_solver, "dense_limit": 0})
        )
        grid = dense_spec.grid
        rhs = rng.normal(size=grid.shape2)
        base = np.zeros(grid.shape3)
        dense_step, dense_stats = JacobianSolver(dense_spec, ControlKind.SOURCE, base).solve(rhs)
        krylov_step, krylov_stats = JacobianSolver(krylov_spec, ControlKind.SOURCE, base).solve(rhs)
        assert dense_stats["method"] == "dense"
        assert krylov_stats["method"] == "gmres"
        assert krylov_stats["iterations"] >= 1
        np.testing.assert_allclose(krylov_step, dense_step, rtol=1e-6, atol=1e-8)

    def test_assembly_independent_of_workers(self, linear_source_spec):
        """Thread count does not change the matrix."""
        base = np.zeros(linear_source_spec.grid.shape3)
        one = JacobianSolver(linear_source_spec, ControlKind.SOURCE, base, workers=1).matrix
        four = JacobianSolver(linear_source_spec, ControlKind.SOURCE, base, workers=4).matrix
        np.testing.assert_array_equal(one, four)


class TestSolveInverse:
    """Tests for the Newton solver."""

    def test_recovers_linear_source(self, linear_source_spec):
        """psi = M(f g(T)) inverts back to f."""
        spec = linear_source_spec
        grid = spec.grid
        f_true = smooth_control(grid)
        psi = GridFunction2(grid, forward_map_batch(f_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        error = np.max(np.abs(solution.control.values - f_true)) / np.max(np.abs(f_true))
        assert error <= 1e-8
        assert solution.report.converged
        assert solution.report.final_residual <= spec.settings.newton_tol

    def test_linear_is_one_full_step(self, linear_source_spec):
        """An affine forward map is inverted by one undamped Newton step."""
        spec = linear_source_spec
        grid = spec.grid
        chi = ControlVariable(
            GridFunction2(grid, smooth_control(grid) * spec.fields.g[-1]), ControlKind.SOURCE
        )
        psi, _ = forward_map_M(chi, spec)
        report = solve_inverse(spec, psi).report
        assert report.converged
        assert report.iterations == 1
        assert report.damping_factors == [1.0]
        assert report.residual_history[0] <= spec.settings.newton_tol

    def test_scaling_g_leaves_data_and_source_unchanged(self, make_config, round_trip_solver):
        """Replacing g by 3 g changes neither M(chi) nor the recovered f g(T)."""
        plain = build_problem(make_config(mode="inverse_source", solver=round_trip_solver))
        scaled = build_problem(
            make_config(mode="inverse_source", coefficients={"g": "3*exp(-t)"}, solver=round_trip_solver)
        )
        grid = plain.grid
        chi = smooth_control(grid)
        np.testing.assert_allclose(
            forward_map_batch(chi, scaled), forward_map_batch(chi, plain), rtol=0, atol=1e-12
        )

        psi = GridFunction2(grid, forward_map_batch(chi, plain))
        first = solve_inverse(plain, psi).control.values
        second = solve_inverse(scaled, psi).control.values
        np.testing.assert_allclose(
            second * scaled.fields.g[-1], first * plain.fields.g[-1], rtol=0, atol=1e-10
        )
        np.testing.assert_allclose(second, first / 3.0, rtol=1e-10, atol=1e-12)

    def test_recovers_nonlinear_source(self, nonlinear_source_spec):
        """Newton handles the nonlinear term as well."""
        spec = nonlinear_source_spec
        grid = spec.grid
        f_true = smooth_control(grid)
        psi = GridFunction2(grid, forward_map_batch(f_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        error = np.max(np.abs(solution.control.values - f_true)) / np.max(np.abs(f_true))
        assert error <= 1e-8
        assert len(solution.report.residual_history) == solution.report.iterations

    def test_recovers_absorption(self, make_config, round_trip_solver):
        """Absorption mode recovers sigma in Sigma = sigma g."""
        spec = build_problem(make_config(mode="inverse_absorption", solver=round_trip_solver))
        grid = spec.grid
        sigma_true = 0.5 + 0.2 * grid.x_centers[:, None] * np.ones((1, grid.Nv))
        psi = GridFunction2(grid, forward_map_batch(sigma_true * spec.fields.g[-1], spec))
        solution = solve_inverse(spec, psi)
        np.testing.assert_allclose(solution.control.values, sigma_true, rtol=1e-8)

    def test_zero_data(self, make_config):
        """Zero data with zero reference field needs no Newton step."""
        spec = build_problem(make_config(mode="inverse_source", coefficients={"u0": "0"}))
        solution = solve_inverse(spec, GridFunction2.zeros(spec.grid))
        assert solution.report.iterations == 0
        assert solution.report.initial_residual == 0.0
        np.testing.assert_array_equal(solution.control.values, 0.0)

    def test_iteration_cap(self, make_config):
        """max_newton = 0 with a nonzero residual fails."""
        spec = build_problem(make_config(mode="inverse_source", solver={"max_newton": 0}))
        psi = GridFunction2(spec.grid, smooth_control(spec.grid))
        with pytest.raises(NotConvergedError) as excinfo:
            solve_inverse(spec, psi)
        assert isinstance(excinfo.value.report, NewtonReport)

    def test_report_serializes(self, linear_source_spec):
        """Reports convert to plain dicts."""
        psi = GridFunction2(linear_source_spec.grid, smooth_control(linear_source_spec.grid, 0.1))
        record = solve_inverse(linear_source_spec, psi).report.to_dict()
        assert {"iterations", "initial_residual", "residual_history", "damping_factors"} <= set(record)


class TestStability:
    """Tests for the random data family and the stability estimate."""

    def test_family_is_seeded(self, linear_source_spec):
        """Same seed, same family."""
        first = random_psi_family(linear_source_spec, 3, seed=7)
        second = random_psi_family(linear_source_spec, 3, seed=7)
        for a, b in zip(first, second, strict=True):
            np.testing.assert_array_equal(a.values, b.values)

    def test_estimate(self, linear_source_spec):
        """Every member yields a positive ratio and c_bar is their maximum."""
        family = random_psi_family(linear_source_spec, 4, seed=1)
        estimate = stability_estimate(linear_source_spec, family, workers=2)
        assert estimate.skipped == ()
        assert all(r is not None and r > 0 for r in estimate.ratios)
        assert estimate.c_bar == max(estimate.ratios)

    def test_zero_member(self, linear_source_spec):
        """psi = 0 contributes a zero ratio without a solve."""
        zero = GridFunction2.zeros(linear_source_spec.grid)
        estimate = stability_estimate(linear_source_spec, [zero], workers=1)
        assert estimate.ratios == (0.0,)

    def test_nonlinear_rejected(self, nonlinear_source_spec):
        """The estimate is defined for linear problems only."""
        with pytest.raises(ValidationError, match="linear"):
            stability_estimate(nonlinear_source_spec, [])

    @pytest.fixture
    def homogeneous_spec(self, make_config, round_trip_solver):
        """Linear inverse-source problem with M(0) = 0, so f is linear in psi."""
        return build_problem(
            make_config(mode="inverse_source", coefficients={"u0": "0"}, solver=round_trip_solver)
        )

    def test_ratio_is_scale_invariant(self, homogeneous_spec):
        """c psi gives the same ratio for every c > 0."""
        base = random_psi_family(homogeneous_spec, 1, seed=3)[0]
        scales = (0.5, 1.0, 2.0, 10.0)
        estimate = stability_estimate(homogeneous_spec, [c * base for c in scales], workers=2)
        assert estimate.skipped == ()
        for ratio in estimate.ratios[1:]:
            assert ratio == pytest.approx(estimate.ratios[0], rel=1e-8)

    def test_twenty_draws_are_bounded(self, homogeneous_spec):
        """Over 20 random draws the ratios stay finite and within a decade of their median."""
        family = random_psi_family(homogeneous_spec, 20, seed=homogeneous_spec.verify.seed)
        estimate = stability_estimate(homogeneous_spec, family, workers=2)
        assert estimate.skipped == ()
        ratios = np.array(estimate.ratios, dtype=np.float64)
        assert ratios.shape == (20,)
        assert np.all(np.isfinite(ratios))
        assert np.all(ratios > 0.0)
        assert estimate.c_bar == ratios.max()
        assert estimate.c_bar <= 10.0 * np.median(ratios)
