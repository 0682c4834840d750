import numpy as np
import pytest

from epictrl import ControlPair, PreconditionError, solve_forward
from epictrl.adjoint import AdjointTrajectory, solve_adjoint
from epictrl.forward import Trajectory
from epictrl.norms import l2q_inner_pair, l2q_norm_pair
from epictrl.optimize import (
    OptimizerOptions,
    evaluate_cost,
    fd_directional_derivative,
    project_controls,
    projected_gradient_descent,
    reduced_gradient,
    vi_residual,
)
from epictrl.tangent import ControlVariation

from conftest import half_max_controls, make_scenario, zero_controls


def synthetic_trajectory(scenario, e_terminal, i_terminal):
    states = np.zeros((scenario.time.steps + 1, 4, scenario.num_cells))
    states[-1, 1] = e_terminal
    states[-1, 2] = i_terminal
    return Trajectory(scenario=scenario, states=states)


def reference_instance():
    return make_scenario(cells=32, steps=1000, s0=3.0, e0=0.2, i0=0.2, lam=0.05)


class TestEvaluateCost:
    def test_below_threshold_zero_controls(self):
        scenario = make_scenario(cells=8, steps=10, lam=5.0)
        trajectory = synthetic_trajectory(scenario, 2.0, 2.0)
        cost = evaluate_cost(trajectory, zero_controls(scenario), 5.0)
        assert cost.total == 0.0

    def test_uniform_overshoot(self):
        scenario = make_scenario(cells=8, steps=10, lam=5.0)
        trajectory = synthetic_trajectory(scenario, 3.0, 3.0)
        cost = evaluate_cost(trajectory, zero_controls(scenario), 5.0)
        assert cost.terminal_term == pytest.approx(0.5)
        assert cost.control_term == 0.0

    def test_pure_control_effort(self):
        scenario = make_scenario(cells=8, steps=10, lam=5.0, u_i_max=1.0)
        trajectory = synthetic_trajectory(scenario, 1.0, 1.0)
        controls = ControlPair(
            np.ones(scenario.control_shape()), np.zeros(scenario.control_shape()),
            scenario.bounds,
        )
        cost = evaluate_cost(trajectory, controls, 5.0)
        assert cost.total == pytest.approx(0.5)


class TestReducedGradient:
    def test_zero_adjoint_zero_controls(self):
        scenario = make_scenario(cells=8, steps=20, lam=5.0)
        controls = zero_controls(scenario)
        trajectory = solve_forward(scenario, controls)
        adjoint = solve_adjoint(trajectory, controls, scenario.threshold.lam)
        gradient = reduced_gradient(trajectory, adjoint, controls)
        np.testing.assert_array_equal(gradient.g_i, 0.0)
        np.testing.assert_array_equal(gradient.g_e, 0.0)

    def test_zero_adjoint_returns_regularization_gradient(self):
        scenario = make_scenario(cells=8, steps=20, lam=5.0)
        controls = half_max_controls(scenario)
        trajectory = solve_forward(scenario, controls)
        adjoint = solve_adjoint(trajectory, controls, scenario.threshold.lam)
        gradient = reduced_gradient(trajectory, adjoint, controls)
        np.testing.assert_array_equal(gradient.g_i, controls.u_i)
        np.testing.assert_array_equal(gradient.g_e, controls.u_e)

    def test_shape_mismatch_rejected(self):
        scenario = make_scenario(cells=8, steps=20)
        controls = half_max_controls(scenario)
        trajectory = solve_forward(scenario, controls)
        adjoint = solve_adjoint(trajectory, controls, scenario.threshold.lam)
        truncated = AdjointTrajectory(states=adjoint.states[:-1], kink_cells=adjoint.kink_cells)
        with pytest.raises(PreconditionError):
            reduced_gradient(trajectory, truncated, controls)

    def test_matches_central_difference(self):
        scenario = reference_instance()
        controls = half_max_controls(scenario)
        trajectory = solve_forward(scenario, controls)
        adjoint = solve_adjoint(trajectory, controls, scenario.threshold.lam)
        gradient = reduced_gradient(trajectory, adjoint, controls)
        shape = scenario.control_shape()
        direction = ControlVariation(np.ones(shape), np.ones(shape))
        inner = l2q_inner_pair(
            scenario.mesh, scenario.time.dt,
            (gradient.g_i, gradient.g_e), (direction.h_i, direction.h_e),
        )
        fd = fd_directional_derivative(scenario, controls, direction, 1e-5)
        assert abs(inner - fd) / abs(fd) <= 1e-3


class TestProjection:
    def test_clamp_above(self):
        scenario = make_scenario(cells=2, steps=2, u_i_max=0.6, u_e_max=0.6)
        shape = scenario.control_shape()
        pair = project_controls(np.full(shape, 0.9), np.full(shape, 0.9), scenario.bounds)
        np.testing.assert_array_equal(pair.u_i, 0.6)

    def test_clamp_below(self):
        scenario = make_scenario(cells=2, steps=2)
        shape = scenario.control_shape()
        pair = project_controls(np.full(shape, -0.2), np.full(shape, -0.2), scenario.bounds)
        np.testing.assert_array_equal(pair.u_i, 0.0)

    def test_idempotent_on_feasible(self, rng):
        scenario = make_scenario(cells=4, steps=3)
        shape = scenario.control_shape()
        feasible = rng.uniform(0.0, 0.3, shape)
        pair = project_controls(feasible, feasible, scenario.bounds)
        np.testing.assert_array_equal(pair.u_i, feasible)
        np.testing.assert_array_equal(pair.u_e, feasible)


class TestViResidual:
    def test_stationary_zero_controls(self):
        scenario = make_scenario(cells=8, steps=20, lam=5.0)
        controls = zero_controls(scenario)
        trajectory = solve_forward(scenario, controls)
        adjoint = solve_adjoint(trajectory, controls, scenario.threshold.lam)
        gradient = reduced_gradient(trajectory, adjoint, controls)
        assert vi_residual(scenario, controls, gradient) == 0.0

    def test_projection_fixed_point_is_algebraically_stationary(self):
        scenario = reference_instance()
        base = half_max_controls(scenario)
        trajectory = solve_forward(scenario, base)
        adjoint = solve_adjoint(trajectory, base, scenario.threshold.lam)
        s_next = trajectory.states[1:, 0, :]
        e_l = np.maximum(trajectory.states[:-1, 1, :], 0.0)
        i_l = np.maximum(trajectory.states[:-1, 2, :], 0.0)
        co_diff = adjoint.states[:-1, 0, :] - adjoint.states[:-1, 1, :]
        fixed = project_controls(
            s_next * i_l * co_diff, s_next * e_l * co_diff, scenario.bounds
        )
        # gradient with the same frozen factors: g = u - (s i (co_s - co_e), ...)
        from epictrl.optimize import GradientPair

        gradient = GradientPair(
            g_i=fixed.u_i - s_next * i_l * co_diff, g_e=fixed.u_e - s_next * e_l * co_diff
        )
        assert vi_residual(scenario, fixed, gradient) == 0.0

    def test_interior_point_residual_equals_gradient_norm(self):
        scenario = make_scenario(cells=4, steps=5)
        controls = half_max_controls(scenario)
        from epictrl.optimize import GradientPair

        gradient = GradientPair(
            g_i=np.full(scenario.control_shape(), 0.01),
            g_e=np.full(scenario.control_shape(), -0.01),
        )
        expected = l2q_norm_pair(
            scenario.mesh, scenario.time.dt, gradient.g_i, gradient.g_e
        )
        assert vi_residual(scenario, controls, gradient) == pytest.approx(expected, rel=1e-14)


class TestFdDirectionalDerivative:
    def test_zero_direction(self):
        scenario = make_scenario(cells=4, steps=10)
        controls = half_max_controls(scenario)
        shape = scenario.control_shape()
        direction = ControlVariation(np.zeros(shape), np.zeros(shape))
        assert fd_directional_derivative(scenario, controls, direction, 1e-3) == 0.0

    def test_exact_in_quadratic_regime(self, rng):
        # below threshold the cost is exactly quadratic in u, so the central
        # difference agrees with the inner product to roundoff
        scenario = make_scenario(cells=8, steps=20, lam=5.0)
        controls = half_max_controls(scenario)
        shape = scenario.control_shape()
        direction = ControlVariation(
            rng.uniform(-1, 1, shape), rng.uniform(-1, 1, shape)
        )
        fd = fd_directional_derivative(scenario, controls, direction, 1e-3)
        inner = l2q_inner_pair(
            scenario.mesh, scenario.time.dt,
            (controls.u_i, controls.u_e), (direction.h_i, direction.h_e),
        )
        assert abs(fd - inner) <= 1e-10 * max(abs(inner), 1.0)

    def test_unusable_direction_rejected(self):
        scenario = make_scenario(cells=4, steps=10)
        controls = zero_controls(scenario)  # at the lower boundary
        shape = scenario.control_shape()
        direction = ControlVariation(np.ones(shape), np.ones(shape))
        with pytest.raises(PreconditionError):
            fd_directional_derivative(scenario, controls, direction, 1e-3)


class TestProjectedGradientDescent:
    def test_stationary_start_terminates_immediately(self):
        scenario = make_scenario(cells=8, steps=50, lam=5.0)
        report = projected_gradient_descent(scenario, zero_controls(scenario))
        assert report.reason == "vi-converged"
        assert len(report.iterations) == 1
        assert report.iterations[0].vi_residual == 0.0
        assert report.final_cost == 0.0

    def test_pure_regularization_limit(self):
        # below threshold from the upper bound: the terminal term stays zero
        # and the quadratic effort drives the controls to the origin
        scenario = make_scenario(cells=8, steps=50, lam=5.0)
        start = ControlPair.at_fraction(
            scenario.time.steps, scenario.num_cells, scenario.bounds, 1.0
        )
        report = projected_gradient_descent(scenario, start)
        assert report.reason == "vi-converged"
        upper_i, upper_e = scenario.bounds.upper_arrays(*scenario.control_shape())
        bound_norm = l2q_norm_pair(scenario.mesh, scenario.time.dt, upper_i, upper_e)
        final_norm = l2q_norm_pair(
            scenario.mesh, scenario.time.dt,
            report.final_controls.u_i, report.final_controls.u_e,
        )
        assert final_norm <= 1e-6 * bound_norm

    def test_above_threshold_descent_is_self_certifying(self):
        scenario = reference_instance()
        options = OptimizerOptions(max_iters=60, vi_tolerance=1e-6)
        report = projected_gradient_descent(scenario, half_max_controls(scenario), options)
        assert report.reason == "vi-converged"
        assert report.final_residual <= options.vi_tolerance
        costs = report.cost_history()
        assert np.all(np.diff(costs) <= 0.0)
        assert report.fixed_point_gap <= 10.0 * options.vi_tolerance
        # the threshold is genuinely exceeded at the optimum
        assert report.iterations[-1].terminal_term > 0.0

    def test_every_trial_iterate_is_admissible(self, monkeypatch):
        import epictrl.optimize as opt

        scenario = make_scenario(cells=8, steps=30, s0=3.0, e0=0.2, i0=0.2, lam=0.05)
        seen = []
        real = opt.solve_forward

        def recording(scn, controls):
            seen.append(controls)
            return real(scn, controls)

        monkeypatch.setattr(opt, "solve_forward", recording)
        projected_gradient_descent(scenario, half_max_controls(scenario))
        assert seen
        for controls in seen:
            controls.check_admissible()

    def test_strict_armijo_forces_backtracking(self):
        scenario = make_scenario(cells=8, steps=30, lam=5.0)
        start = ControlPair.at_fraction(
            scenario.time.steps, scenario.num_cells, scenario.bounds, 1.0
        )
        options = OptimizerOptions(max_iters=300, armijo_c=0.9)
        report = projected_gradient_descent(scenario, start, options)
        assert report.reason == "vi-converged"
        assert max(row.backtracks for row in report.iterations) >= 1
        assert np.all(np.diff(report.cost_history()) <= 0.0)
