import numpy as np
import pytest

from epictrl import (
    ControlBounds,
    ControlPair,
    DiffusionSpec,
    Field,
    InitialData,
    RateConstants,
    ThresholdTarget,
    WaningRate,
    build_mesh,
    build_time_grid,
    validate_scenario,
)


def make_scenario(
    cells=32,
    steps=200,
    horizon=1.0,
    dimension=1,
    sigma=0.2,
    phi_e=0.1,
    phi_r=0.4,
    gamma=0.05,
    kappa=0.01,
    s0=0.9,
    e0=0.05,
    i0=0.05,
    r0=0.0,
    u_i_max=0.6,
    u_e_max=0.3,
    lam=5.0,
):
    if dimension == 1:
        mesh = build_mesh(1, [cells], [1.0])
    else:
        mesh = build_mesh(2, [cells, cells], [1.0, 1.0])
    tg = build_time_grid(horizon, steps)
    rates = RateConstants(sigma, phi_e, phi_r)
    waning = WaningRate.constant(gamma, steps)
    diffusion = DiffusionSpec(kappa, kappa, kappa, kappa, 1e-6, 10.0)
    initial = InitialData(*(Field.constant(mesh, v) for v in (s0, e0, i0, r0)))
    bounds = ControlBounds(u_i_max, u_e_max)
    return validate_scenario(mesh, tg, rates, waning, diffusion, initial, bounds, ThresholdTarget(lam))


def zero_controls(scenario):
    return ControlPair.zeros(scenario.time.steps, scenario.num_cells, scenario.bounds)


def half_max_controls(scenario):
    return ControlPair.at_fraction(scenario.time.steps, scenario.num_cells, scenario.bounds, 0.5)


def random_admissible_controls(scenario, rng):
    upper_i, upper_e = scenario.bounds.upper_arrays(*scenario.control_shape())
    return ControlPair(
        rng.uniform(0.0, 1.0, scenario.control_shape()) * upper_i,
        rng.uniform(0.0, 1.0, scenario.control_shape()) * upper_e,
        scenario.bounds,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
