"""Semi-implicit time stepping of the spatial SEIRS state system.

One step advances the four compartments with backward Euler in a Gauss-Seidel
sweep ordered s, e, i, r. Sinks sit on the implicit diagonal; every
cross-compartment source is evaluated once, from the latest available
iterate, and reused verbatim with the opposite sign in the receiving
equation. This pairing makes the total population exact up to linear-solver
roundoff, while the M-matrix structure of every implicit system keeps s, e, i
nonnegative unconditionally. The recovered compartment keeps the waning term
explicit on both sides (so it cancels), which costs the step restriction
dt * max(gamma) <= 1 enforced at validation time.

Each run is deterministic and single-threaded; distinct trajectories share no
mutable state, so probe solves may execute concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError
from .mesh import DiffusionOperator, Field, assemble_diffusion
from .model import ControlPair, Scenario
from .norms import l2q_norm_pair, trajectory_distance, unit_stencil

__all__ = [
    "ROUNDOFF_TOL",
    "EpidemicState",
    "Trajectory",
    "OperatorBank",
    "step",
    "solve_forward",
    "total_population",
    "ContinuousDependenceReport",
    "continuous_dependence_probe",
]

# States may dip this far below zero from solver roundoff; anything below
# aborts the run as an invariant violation.
ROUNDOFF_TOL = 1e-12


@dataclass(frozen=True)
class EpidemicState:
    """The four compartment fields at one time level."""

    s: Field
    e: Field
    i: Field
    r: Field

    def stacked(self) -> np.ndarray:
        return np.stack([self.s.values, self.e.values, self.i.values, self.r.values])

    def minimum(self) -> float:
        return float(self.stacked().min())


@dataclass(frozen=True)
class Trajectory:
    """All time levels of a forward run; ``states`` has shape (N+1, 4, cells)."""

    scenario: Scenario
    states: np.ndarray

    @property
    def num_levels(self) -> int:
        return self.states.shape[0]

    def state(self, level: int) -> EpidemicState:
        mesh = self.scenario.mesh
        s, e, i, r = self.states[level]
        return EpidemicState(Field(mesh, s), Field(mesh, e), Field(mesh, i), Field(mesh, r))

    def compartment(self, name: str) -> np.ndarray:
        """All levels of one compartment, shape (N+1, cells)."""
        return self.states[:, "seir".index(name), :]

    def terminal(self) -> EpidemicState:
        return self.state(self.num_levels - 1)


class OperatorBank:
    """Per-compartment diffusion operators, reassembled only when kappa varies in time."""

    def __init__(self, scenario: Scenario):
        self._scenario = scenario
        self._static: dict[str, DiffusionOperator] = {}
        for comp in "seir":
            if not scenario.diffusion.is_time_dependent(comp):
                self._static[comp] = self._assemble(comp, 0)

    def _assemble(self, comp: str, step_index: int) -> DiffusionOperator:
        scn = self._scenario
        kappa = Field(scn.mesh, scn.diffusion.values_at(comp, scn.mesh, step_index))
        return assemble_diffusion(scn.mesh, kappa, scn.diffusion.kappa_lo, scn.diffusion.kappa_hi)

    def operator(self, comp: str, step_index: int) -> DiffusionOperator:
        cached = self._static.get(comp)
        if cached is not None:
            return cached
        return self._assemble(comp, step_index)

    def operators_at(self, step_index: int) -> tuple[DiffusionOperator, ...]:
        return tuple(self.operator(comp, step_index) for comp in "seir")


def _check_roundoff(values: np.ndarray, what: str) -> None:
    low = float(values.min())
    if low < -ROUNDOFF_TOL:
        raise NumericalError(
            f"{what} fell below the roundoff tolerance: min = {low}", residual=low
        )


def _advance(
    current: np.ndarray,
    u_i_row: np.ndarray,
    u_e_row: np.ndarray,
    gamma_n: float,
    scenario: Scenario,
    ops: tuple[DiffusionOperator, ...],
    dt: float,
) -> np.ndarray:
    """One Gauss-Seidel backward-Euler sweep on raw (4, cells) arrays."""
    _check_roundoff(current, "a compartment")
    s_n, e_n, i_n, r_n = current
    # clamped copies feed coefficients and fluxes; mass terms keep the raw state
    clamped = np.maximum(current, 0.0)
    _, e_c, i_c, r_c = clamped
    op_s, op_e, op_i, op_r = ops
    rates = scenario.rates
    inv_dt = 1.0 / dt

    absorption_s = u_i_row * i_c + u_e_row * e_c
    flux_wane = gamma_n * r_c
    s_next = op_s.solve_shifted(inv_dt + absorption_s, s_n * inv_dt + flux_wane)

    flux_inf_i = u_i_row * i_c * s_next
    flux_inf_e = u_e_row * e_c * s_next
    e_next = op_e.solve_shifted(
        inv_dt + (rates.sigma + rates.phi_e), e_n * inv_dt + flux_inf_i + flux_inf_e
    )

    flux_incub = rates.sigma * e_next
    flux_rec_e = rates.phi_e * e_next
    i_next = op_i.solve_shifted(inv_dt + rates.phi_r, i_n * inv_dt + flux_incub)

    flux_rec_i = rates.phi_r * i_next
    r_next = op_r.solve_shifted(
        inv_dt, r_n * inv_dt + flux_rec_i + flux_rec_e - flux_wane
    )
    return np.stack([s_next, e_next, i_next, r_next])


def step(
    state: EpidemicState,
    controls_at_step: tuple[np.ndarray, np.ndarray],
    gamma_at_step: float,
    scenario: Scenario,
    dt: float | None = None,
    *,
    bank: OperatorBank | None = None,
    step_index: int = 0,
) -> EpidemicState:
    """Advance one state by one implicit step; see the module docstring."""
    dt = scenario.time.dt if dt is None else dt
    if dt * gamma_at_step > 1.0:
        raise ConfigurationError(
            f"dt * gamma = {dt * gamma_at_step} exceeds 1; the recovered compartment "
            "would lose positivity"
        )
    bank = bank if bank is not None else OperatorBank(scenario)
    u_i_row = np.broadcast_to(np.asarray(controls_at_step[0], dtype=float), (scenario.num_cells,))
    u_e_row = np.broadcast_to(np.asarray(controls_at_step[1], dtype=float), (scenario.num_cells,))
    advanced = _advance(
        state.stacked(), u_i_row, u_e_row, float(gamma_at_step), scenario,
        bank.operators_at(step_index), dt,
    )
    mesh = scenario.mesh
    return EpidemicState(*(Field(mesh, row) for row in advanced))


def solve_forward(scenario: Scenario, controls: ControlPair) -> Trajectory:
    """Run the full horizon and return every time level."""
    shape = scenario.control_shape()
    if controls.u_i.shape != shape:
        raise ConfigurationError(
            f"controls have shape {controls.u_i.shape}, expected {shape}"
        )
    steps = scenario.time.steps
    dt = scenario.time.dt
    bank = OperatorBank(scenario)
    states = np.empty((steps + 1, 4, scenario.num_cells))
    states[0] = np.stack([f.values for f in scenario.initial.fields()])
    gamma = scenario.waning.per_step
    for n in range(steps):
        states[n + 1] = _advance(
            states[n], controls.u_i[n], controls.u_e[n], gamma[n], scenario,
            bank.operators_at(n), dt,
        )
    _check_roundoff(states, "the trajectory")
    return Trajectory(scenario=scenario, states=states)


def total_population(trajectory: Trajectory) -> np.ndarray:
    """Integral of s+e+i+r at every level; constant for admissible runs."""
    vol = trajectory.scenario.mesh.cell_volume
    return vol * trajectory.states.sum(axis=(1, 2))


@dataclass(frozen=True)
class ContinuousDependenceReport:
    """Perturbation ratio between two forward runs differing only in controls."""

    state_distance: float
    control_distance: float
    ratio: float
    identical_controls: bool


def continuous_dependence_probe(
    scenario: Scenario, u1: ControlPair, u2: ControlPair
) -> ContinuousDependenceReport:
    """Measure || S(u1) - S(u2) || / || u1 - u2 || in the discrete norms.

    The numerator combines the C([0,T];H) and L2(0,T;V) distances of the two
    state trajectories (V seminorm taken with unit coefficient); the
    denominator is the L2(Q) distance of the controls. Identical controls are
    flagged and reported with ratio zero rather than dividing by zero.
    """
    u1.check_admissible()
    u2.check_admissible()
    sol1 = solve_forward(scenario, u1)
    sol2 = solve_forward(scenario, u2)
    mesh, dt = scenario.mesh, scenario.time.dt
    denominator = l2q_norm_pair(mesh, dt, u1.u_i - u2.u_i, u1.u_e - u2.u_e)
    if denominator == 0.0:
        return ContinuousDependenceReport(0.0, 0.0, 0.0, True)
    numerator = trajectory_distance(mesh, sol1.states, sol2.states, dt, unit_stencil(mesh))
    return ContinuousDependenceReport(numerator, denominator, numerator / denominator, False)
