import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epictrl import (
    ControlBounds,
    ControlPair,
    Field,
    ValidationError,
    transfer_fluxes,
)
from epictrl.forward import EpidemicState

from conftest import make_scenario


def uniform_state(mesh, s, e, i, r):
    return EpidemicState(*(Field.constant(mesh, v) for v in (s, e, i, r)))


class TestValidateScenario:
    def test_accepts_reference_values(self):
        scenario = make_scenario()
        assert scenario.rates.sigma == 0.2
        assert scenario.bounds.cap == 0.6

    def test_sigma_must_be_positive(self):
        with pytest.raises(ValidationError) as err:
            make_scenario(sigma=0.0)
        assert err.value.assumption == "sigma-positive"
        assert "sigma must be positive" in str(err.value)

    def test_negative_initial_data(self):
        scenario = make_scenario()
        bad = np.full(scenario.num_cells, 0.05)
        bad[3] = -0.1
        from epictrl import InitialData, validate_scenario

        initial = InitialData(
            scenario.initial.s0, scenario.initial.e0, Field(scenario.mesh, bad), scenario.initial.r0
        )
        with pytest.raises(ValidationError) as err:
            validate_scenario(
                scenario.mesh, scenario.time, scenario.rates, scenario.waning,
                scenario.diffusion, initial, scenario.bounds, scenario.threshold,
            )
        assert err.value.assumption == "initial-nonnegative"

    def test_gamma_step_restriction(self):
        with pytest.raises(ValidationError) as err:
            make_scenario(steps=4, horizon=1.0, gamma=8.0)
        assert err.value.assumption == "r-positivity-step-restriction"

    def test_negative_gamma(self):
        with pytest.raises(ValidationError) as err:
            make_scenario(gamma=-0.01)
        assert err.value.assumption == "gamma-nonnegative"

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValidationError) as err:
            make_scenario(lam=0.0)
        assert err.value.assumption == "threshold-positive"

    def test_inadmissible_controls_rejected(self):
        scenario = make_scenario()
        from epictrl import validate_scenario

        too_big = ControlPair(
            np.full(scenario.control_shape(), 0.7),
            np.zeros(scenario.control_shape()),
            scenario.bounds,
        )
        with pytest.raises(ValidationError) as err:
            validate_scenario(
                scenario.mesh, scenario.time, scenario.rates, scenario.waning,
                scenario.diffusion, scenario.initial, scenario.bounds, scenario.threshold,
                controls=too_big,
            )
        assert err.value.assumption == "controls-admissible"


class TestTransferFluxes:
    def test_infection_product(self):
        scenario = make_scenario(cells=4)
        state = uniform_state(scenario.mesh, 1.0, 0.0, 0.5, 0.0)
        fluxes = transfer_fluxes(state, np.full(4, 0.2), np.zeros(4), 0.0, scenario.rates)
        np.testing.assert_allclose(fluxes.infection_by_infected, 0.1)

    def test_zero_state_gives_zero_fluxes(self):
        scenario = make_scenario(cells=4)
        state = uniform_state(scenario.mesh, 0.0, 0.0, 0.0, 0.0)
        fluxes = transfer_fluxes(state, np.full(4, 0.2), np.full(4, 0.1), 0.3, scenario.rates)
        for _, term in fluxes.signed_terms():
            np.testing.assert_array_equal(term, 0.0)

    def test_incubation_and_recovery(self):
        scenario = make_scenario(cells=4, sigma=0.2, phi_e=0.1)
        state = uniform_state(scenario.mesh, 0.0, 2.0, 0.0, 0.0)
        fluxes = transfer_fluxes(state, np.zeros(4), np.zeros(4), 0.0, scenario.rates)
        np.testing.assert_allclose(fluxes.incubation, 0.4)
        np.testing.assert_allclose(fluxes.recovery_from_exposed, 0.2)

    @given(
        s=st.floats(0, 1e6), e=st.floats(0, 1e6), i=st.floats(0, 1e6), r=st.floats(0, 1e6),
        u_i=st.floats(0, 100), u_e=st.floats(0, 100), gamma=st.floats(0, 100),
    )
    @settings(max_examples=60, deadline=None)
    def test_signed_sum_cancels_bit_exactly(self, s, e, i, r, u_i, u_e, gamma):
        # every flux appears once with + and once with -, so the exactly
        # rounded sum of the signed terms is identically zero
        scenario = make_scenario(cells=2)
        state = uniform_state(scenario.mesh, s, e, i, r)
        fluxes = transfer_fluxes(
            state, np.full(2, u_i), np.full(2, u_e), gamma, scenario.rates
        )
        for cell in range(2):
            contributions = [sign * term[cell] for sign, term in fluxes.signed_terms()]
            assert math.fsum(contributions) == 0.0

    @given(
        s=st.floats(0, 1e3), e=st.floats(0, 1e3), i=st.floats(0, 1e3), r=st.floats(0, 1e3),
        u_i=st.floats(0, 10), u_e=st.floats(0, 10), gamma=st.floats(0, 10),
    )
    @settings(max_examples=40, deadline=None)
    def test_nonnegative_inputs_give_nonnegative_fluxes(self, s, e, i, r, u_i, u_e, gamma):
        scenario = make_scenario(cells=2)
        state = uniform_state(scenario.mesh, s, e, i, r)
        fluxes = transfer_fluxes(state, np.full(2, u_i), np.full(2, u_e), gamma, scenario.rates)
        for _, term in fluxes.signed_terms():
            assert np.all(term >= 0.0)


class TestControlPair:
    def test_admissibility(self):
        bounds = ControlBounds(0.6, 0.3)
        pair = ControlPair.at_fraction(5, 4, bounds, 0.5)
        pair.check_admissible()
        bad = ControlPair(np.full((5, 4), -0.1), np.zeros((5, 4)), bounds)
        with pytest.raises(ValidationError):
            bad.check_admissible()

    def test_cap_is_global_bound(self):
        bounds = ControlBounds(np.full((5, 4), 0.25), 0.9)
        assert bounds.cap == 0.9
