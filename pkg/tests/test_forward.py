import numpy as np
import pytest

from epictrl import (
    ConfigurationError,
    Field,
    NumericalError,
    continuous_dependence_probe,
    solve_forward,
    step,
    total_population,
)
from epictrl.forward import EpidemicState, OperatorBank, Trajectory

from conftest import half_max_controls, make_scenario, random_admissible_controls, zero_controls


def ode_limit_solution(t, rates, e0, i0, s0=0.9, r0=0.0):
    """Variation-of-constants solution of the u=0, gamma=0 uniform reduction."""
    a = rates.sigma + rates.phi_e
    b = rates.phi_r
    e = e0 * np.exp(-a * t)
    i = i0 * np.exp(-b * t) + rates.sigma * e0 * (np.exp(-a * t) - np.exp(-b * t)) / (b - a)
    int_e = e0 * (1 - np.exp(-a * t)) / a
    int_i = i0 * (1 - np.exp(-b * t)) / b + rates.sigma * e0 * (
        (1 - np.exp(-a * t)) / a - (1 - np.exp(-b * t)) / b
    ) / (b - a)
    r = r0 + rates.phi_e * int_e + rates.phi_r * int_i
    return s0, e, i, r


def uniform_state(mesh, s, e, i, r):
    return EpidemicState(*(Field.constant(mesh, v) for v in (s, e, i, r)))


class TestStep:
    def test_stationary_without_transfers(self):
        scenario = make_scenario(cells=1, gamma=0.0)
        state = uniform_state(scenario.mesh, 1.0, 0.0, 0.0, 0.0)
        after = step(state, (0.0, 0.0), 0.0, scenario)
        np.testing.assert_allclose(after.s.values, 1.0, rtol=1e-14)
        np.testing.assert_allclose(after.stacked()[1:], 0.0, atol=1e-15)

    def test_scalar_implicit_euler(self):
        # one cell, sinks only: e_{n+1} = e_n / (1 + dt (sigma + phi_e))
        scenario = make_scenario(cells=1, steps=10, horizon=1.0, sigma=0.2, phi_e=0.1, gamma=0.0)
        state = uniform_state(scenario.mesh, 0.0, 1.0, 0.0, 0.0)
        after = step(state, (0.0, 0.0), 0.0, scenario)
        np.testing.assert_allclose(after.e.values, 1.0 / 1.03, rtol=1e-14)

    def test_single_step_conserves_total(self, rng):
        scenario = make_scenario(cells=24, steps=50)
        u_i = rng.uniform(0, 0.6, scenario.num_cells)
        u_e = rng.uniform(0, 0.3, scenario.num_cells)
        state = EpidemicState(
            *(Field(scenario.mesh, rng.uniform(0, 1, scenario.num_cells)) for _ in range(4))
        )
        after = step(state, (u_i, u_e), 0.05, scenario)
        before_total = scenario.mesh.cell_volume * state.stacked().sum()
        after_total = scenario.mesh.cell_volume * after.stacked().sum()
        assert abs(after_total - before_total) <= 1e-13 * before_total

    def test_gamma_step_guard(self):
        scenario = make_scenario(cells=4, steps=10, horizon=1.0, gamma=0.05)
        state = uniform_state(scenario.mesh, 1.0, 0.0, 0.0, 0.0)
        with pytest.raises(ConfigurationError):
            step(state, (0.0, 0.0), 20.0, scenario)

    def test_aborts_below_roundoff_tolerance(self):
        scenario = make_scenario(cells=4)
        bad = np.zeros(scenario.num_cells)
        bad[0] = -1e-9
        state = EpidemicState(
            Field(scenario.mesh, bad),
            *(Field.constant(scenario.mesh, 0.0) for _ in range(3)),
        )
        with pytest.raises(NumericalError):
            step(state, (0.0, 0.0), 0.0, scenario)


class TestSolveForward:
    def test_ode_limit_matches_closed_form(self):
        scenario = make_scenario(cells=64, steps=1000, gamma=0.0)
        trajectory = solve_forward(scenario, zero_controls(scenario))
        terminal = trajectory.terminal()
        s_ex, e_ex, i_ex, r_ex = ode_limit_solution(1.0, scenario.rates, 0.05, 0.05)
        assert abs(terminal.s.values[0] - s_ex) / s_ex < 1e-12
        assert abs(terminal.e.values[0] - e_ex) / e_ex < 1e-4
        assert abs(terminal.i.values[0] - i_ex) / i_ex < 1e-4
        assert abs(terminal.r.values[0] - r_ex) / r_ex < 2e-4

    def test_zero_initial_data_stays_zero(self):
        scenario = make_scenario(cells=8, steps=20, s0=0.0, e0=0.0, i0=0.0, r0=0.0)
        trajectory = solve_forward(scenario, half_max_controls(scenario))
        np.testing.assert_array_equal(trajectory.states, 0.0)

    def test_first_order_in_time(self):
        # error against the exact ODE solution halves when dt halves
        errors = []
        for steps in (250, 500, 1000):
            scenario = make_scenario(cells=4, steps=steps, gamma=0.0)
            terminal = solve_forward(scenario, zero_controls(scenario)).terminal()
            _, e_ex, i_ex, _ = ode_limit_solution(1.0, scenario.rates, 0.05, 0.05)
            errors.append(abs(terminal.e.values[0] - e_ex) + abs(terminal.i.values[0] - i_ex))
        for coarse, fine in zip(errors, errors[1:]):
            assert 1.6 <= coarse / fine <= 2.4

    def test_conservation_along_random_runs(self, rng):
        scenario = make_scenario(cells=16, steps=100)
        controls = random_admissible_controls(scenario, rng)
        totals = total_population(solve_forward(scenario, controls))
        assert np.max(np.abs(totals - totals[0])) <= 1e-12 * totals[0]

    def test_positivity_under_gamma_restriction(self, rng):
        scenario = make_scenario(cells=16, steps=100, gamma=0.9)
        controls = random_admissible_controls(scenario, rng)
        trajectory = solve_forward(scenario, controls)
        assert trajectory.states.min() >= -1e-12

    def test_boundedness_uniform_in_controls(self, rng):
        scenario = make_scenario(cells=16, steps=100)
        baseline = solve_forward(scenario, zero_controls(scenario))
        mass = total_population(baseline)[0]
        bound = baseline.states.max() + mass
        sups = []
        for _ in range(10):
            controls = random_admissible_controls(scenario, rng)
            sups.append(solve_forward(scenario, controls).states.max())
        assert max(sups) <= bound


class TestTotalPopulation:
    def test_scales_linearly_with_initial_data(self):
        base = make_scenario(cells=8, steps=20)
        scaled = make_scenario(cells=8, steps=20, s0=1.8, e0=0.1, i0=0.1, r0=0.0)
        t_base = total_population(solve_forward(base, zero_controls(base)))
        t_scaled = total_population(solve_forward(scaled, zero_controls(scaled)))
        np.testing.assert_allclose(t_scaled, 2.0 * t_base, rtol=1e-12)

    def test_single_level_trajectory(self):
        scenario = make_scenario(cells=8, steps=20)
        states = np.stack([f.values for f in scenario.initial.fields()])[None]
        trajectory = Trajectory(scenario=scenario, states=states)
        totals = total_population(trajectory)
        assert totals.shape == (1,)
        assert totals[0] == pytest.approx(1.0)


class TestContinuousDependence:
    def test_identical_controls_flagged(self):
        scenario = make_scenario(cells=8, steps=40)
        u = half_max_controls(scenario)
        report = continuous_dependence_probe(scenario, u, u)
        assert report.identical_controls
        assert report.ratio == 0.0

    def test_ratio_stable_under_perturbation_size(self, rng):
        scenario = make_scenario(cells=16, steps=100)
        base = half_max_controls(scenario)
        direction = rng.uniform(-1.0, 1.0, (2,) + scenario.control_shape())
        ratios = []
        for eps in (1e-1, 1e-2, 1e-3):
            from epictrl import ControlPair

            perturbed = ControlPair(
                np.clip(base.u_i + eps * direction[0], 0.0, 0.6),
                np.clip(base.u_e + eps * direction[1], 0.0, 0.3),
                scenario.bounds,
            )
            ratios.append(continuous_dependence_probe(scenario, base, perturbed).ratio)
        assert max(ratios) / min(ratios) <= 1.25

    def test_ratios_uniformly_bounded(self, rng):
        scenario = make_scenario(cells=8, steps=50)
        base = half_max_controls(scenario)
        from epictrl import ControlPair

        ratios = []
        for _ in range(20):
            direction = rng.uniform(-1.0, 1.0, (2,) + scenario.control_shape())
            perturbed = ControlPair(
                np.clip(base.u_i + 1e-2 * direction[0], 0.0, 0.6),
                np.clip(base.u_e + 1e-2 * direction[1], 0.0, 0.3),
                scenario.bounds,
            )
            ratios.append(continuous_dependence_probe(scenario, base, perturbed).ratio)
        ratios = np.array(ratios)
        assert np.all(np.isfinite(ratios))
        assert ratios.max() <= 10.0 * np.median(ratios)


class TestOperatorBank:
    def test_constant_kappa_cached(self):
        scenario = make_scenario(cells=8, steps=10)
        bank = OperatorBank(scenario)
        assert bank.operator("s", 0) is bank.operator("s", 5)

    def test_time_dependent_kappa_reassembled(self):
        from epictrl import DiffusionSpec, validate_scenario

        base = make_scenario(cells=8, steps=10)
        kappa_t = np.linspace(0.01, 0.02, 10)[:, None] * np.ones((1, base.num_cells))
        diffusion = DiffusionSpec(kappa_t, 0.01, 0.01, 0.01, 1e-6, 10.0)
        scenario = validate_scenario(
            base.mesh, base.time, base.rates, base.waning, diffusion,
            base.initial, base.bounds, base.threshold,
        )
        bank = OperatorBank(scenario)
        first = bank.operator("s", 0).matrix.toarray()
        last = bank.operator("s", 9).matrix.toarray()
        assert not np.allclose(first, last)
        assert bank.operator("e", 0) is bank.operator("e", 9)
