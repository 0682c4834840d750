"""Interval-wise integrator with a time-shifted exposed compartment.

This scheme decouples the nonlinear system into four linear parabolic solves
per interval: the exposed density entering the transmission, incubation, and
exposed-recovery sources is read one shift ``tau`` back in time (constant
prehistory before t = 0), so each interval of length tau can be solved in the
order i, r, s, e with known coefficients. It exists to cross-check the
production stepper: its trajectories converge to the forward solution at
first order in tau, while its incubation/recovery source mismatch breaks
exact mass conservation by O(tau), which the convergence study reports.

The shift is restricted to integer multiples of dt so history lookups never
interpolate. Sweeping the four solves per substep gives bitwise the same
result as solving each compartment across the whole interval first, because
every solve only reads compartments earlier in the order at the same level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .forward import OperatorBank, Trajectory, _check_roundoff, total_population
from .mesh import Field
from .model import ControlPair, Scenario
from .norms import c0h_norm

__all__ = [
    "DelayedHistory",
    "delay_lookup",
    "solve_delay",
    "DelayConvergenceStudy",
    "convergence_study",
]


def _shift_steps(tau: float, dt: float) -> int:
    ratio = tau / dt
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(
            f"tau = {tau} is not a positive integer multiple of dt = {dt}"
        )
    return steps


@dataclass
class DelayedHistory:
    """Exposed-compartment values on [-tau, T]: constant prehistory plus levels.

    ``levels`` holds one row per computed time level; rows beyond
    ``filled_levels`` are not yet valid.
    """

    prehistory: Field
    levels: np.ndarray
    dt: float
    filled_levels: int

    @staticmethod
    def start(e0: Field, num_levels: int, dt: float) -> "DelayedHistory":
        levels = np.zeros((num_levels, e0.values.size))
        levels[0] = e0.values
        return DelayedHistory(prehistory=e0, levels=levels, dt=dt, filled_levels=1)

    def record(self, level: int, values: np.ndarray) -> None:
        self.levels[level] = values
        self.filled_levels = max(self.filled_levels, level + 1)

    def lookup_level(self, level: int, shift_steps: int) -> np.ndarray:
        """Exposed values ``shift_steps`` levels before ``level`` (prehistory below 0)."""
        past = level - shift_steps
        if past <= 0:
            return self.prehistory.values
        if past >= self.filled_levels:
            raise PreconditionError(
                f"history level {past} has not been computed yet (filled {self.filled_levels})"
            )
        return self.levels[past]


def delay_lookup(history: DelayedHistory, t: float, tau: float) -> Field:
    """The stored exposed field at time t - tau; t must sit on the time grid."""
    shift = _shift_steps(tau, history.dt)
    level_ratio = t / history.dt
    level = int(round(level_ratio))
    if t < 0.0 or abs(level_ratio - level) > 1e-9 * max(1.0, abs(level_ratio)):
        raise ConfigurationError(f"t = {t} does not sit on the time grid with dt = {history.dt}")
    return Field(history.prehistory.mesh, history.lookup_level(level, shift).copy())


def solve_delay(
    scenario: Scenario,
    controls: ControlPair,
    tau: float,
    *,
    undelayed_transfer_sources: bool = False,
) -> Trajectory:
    """Integrate the decoupled system on intervals of length tau.

    ``tau`` must equal horizon/n for an integer n and be an integer multiple
    of dt. With ``undelayed_transfer_sources`` the incubation and
    exposed-recovery sources use the previous time level instead of the
    shifted history (a diagnostic mode: combined with u_e = 0 it removes
    every tau dependence from the scheme).
    """
    time = scenario.time
    shift = _shift_steps(tau, time.dt)
    intervals = time.horizon / tau
    if abs(intervals - round(intervals)) > 1e-9 * max(1.0, intervals):
        raise ConfigurationError(
            f"tau = {tau} must divide the horizon {time.horizon} evenly"
        )
    if time.steps % shift != 0:
        raise ConfigurationError(
            f"tau spans {shift} steps, which must divide the {time.steps} total steps"
        )
    if controls.u_i.shape != scenario.control_shape():
        raise ConfigurationError(
            f"controls have shape {controls.u_i.shape}, expected {scenario.control_shape()}"
        )

    mesh = scenario.mesh
    rates = scenario.rates
    gamma = scenario.waning.per_step
    dt = time.dt
    inv_dt = 1.0 / dt
    bank = OperatorBank(scenario)
    states = np.empty((time.steps + 1, 4, mesh.num_cells))
    states[0] = np.stack([f.values for f in scenario.initial.fields()])
    history = DelayedHistory.start(scenario.initial.e0, time.steps + 1, dt)

    for n in range(time.steps):
        _check_roundoff(states[n], "a compartment (delay scheme)")
        s_n, e_n, i_n, r_n = states[n]
        if undelayed_transfer_sources:
            shifted_e = np.maximum(e_n, 0.0)
        else:
            shifted_e = np.maximum(history.lookup_level(n + 1, shift), 0.0)
        op_s, op_e, op_i, op_r = bank.operators_at(n)
        u_i_row, u_e_row = controls.at_step(n)
        gamma_n = gamma[n]

        i_next = op_i.solve_shifted(
            inv_dt + rates.phi_r, i_n * inv_dt + rates.sigma * shifted_e
        )
        r_next = op_r.solve_shifted(
            inv_dt + gamma_n,
            r_n * inv_dt + rates.phi_r * i_next + rates.phi_e * shifted_e,
        )
        absorption_s = u_i_row * i_next + u_e_row * shifted_e
        s_next = op_s.solve_shifted(
            inv_dt + absorption_s, s_n * inv_dt + gamma_n * r_next
        )
        e_next = op_e.solve_shifted(
            inv_dt + (rates.sigma + rates.phi_e),
            e_n * inv_dt + absorption_s * s_next,
        )
        states[n + 1] = np.stack([s_next, e_next, i_next, r_next])
        history.record(n + 1, e_next)

    _check_roundoff(states, "the trajectory (delay scheme)")
    return Trajectory(scenario=scenario, states=states)


@dataclass(frozen=True)
class DelayConvergenceStudy:
    """Per-tau distances to the forward reference, plus conservation defects."""

    taus: np.ndarray
    trajectory_errors: np.ndarray
    conservation_defects: np.ndarray
    orders: np.ndarray  # empirical order between consecutive rows; nan in row 0

    def rows(self):
        for k in range(self.taus.size):
            yield (
                float(self.taus[k]),
                float(self.trajectory_errors[k]),
                float(self.conservation_defects[k]),
                float(self.orders[k]),
            )


def convergence_study(
    scenario: Scenario,
    controls: ControlPair,
    tau_list: "list[float]",
    *,
    undelayed_transfer_sources: bool = False,
) -> DelayConvergenceStudy:
    """Measure the delay-scheme error against the forward solver at shared dt."""
    from .forward import solve_forward

    reference = solve_forward(scenario, controls)
    taus = np.asarray(sorted(tau_list, reverse=True), dtype=float)
    errors = np.empty(taus.size)
    defects = np.empty(taus.size)
    for k, tau in enumerate(taus):
        trajectory = solve_delay(
            scenario, controls, float(tau),
            undelayed_transfer_sources=undelayed_transfer_sources,
        )
        errors[k] = c0h_norm(scenario.mesh, trajectory.states - reference.states)
        totals = total_population(trajectory)
        defects[k] = abs(float(totals[-1] - totals[0]))
    orders = np.full(taus.size, np.nan)
    for k in range(1, taus.size):
        ratio = taus[k - 1] / taus[k]
        if errors[k] > 0.0 and errors[k - 1] > 0.0 and ratio > 1.0:
            orders[k] = np.log(errors[k - 1] / errors[k]) / np.log(ratio)
    return DelayConvergenceStudy(taus, errors, defects, orders)
