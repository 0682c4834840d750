"""Backward-in-time costate solver for the terminal-overshoot objective.

Discretizes the continuous adjoint system (optimize-then-discretize) with
backward Euler run in decreasing level index: implicit diffusion through the
same symmetric operators as the forward pass, implicit nonnegative diagonal
absorption, and Gauss-Seidel coupling in the order co_r, co_i, co_e, co_s,
the reverse of the forward data dependencies. Forward factors are read at
the time levels the forward scheme used for its matching nonlinear terms.
The mismatch against the exact transpose of the discrete forward map is
O(dt + h^2); the finite-difference gradient check is its acceptance gauge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError, PreconditionError
from .forward import OperatorBank, Trajectory
from .mesh import Field
from .model import ControlPair

__all__ = [
    "KINK_TOL",
    "AdjointState",
    "AdjointTrajectory",
    "terminal_conditions",
    "threshold_kink_cells",
    "solve_adjoint",
]

# proximity to the positive-part kink that gets flagged in diagnostics
KINK_TOL = 1e-9


@dataclass(frozen=True)
class AdjointState:
    """Costate fields paired with (s, e, i, r); no sign constraint."""

    co_s: Field
    co_e: Field
    co_i: Field
    co_r: Field

    def stacked(self) -> np.ndarray:
        return np.stack(
            [self.co_s.values, self.co_e.values, self.co_i.values, self.co_r.values]
        )


@dataclass(frozen=True)
class AdjointTrajectory:
    """Costates at all levels; the last level carries the terminal conditions.

    ``kink_cells`` lists the cells whose terminal overshoot sits within
    KINK_TOL of the positive-part kink, where gradient checks legitimately
    degrade.
    """

    states: np.ndarray  # (N+1, 4, cells), rows are (co_s, co_e, co_i, co_r)
    kink_cells: np.ndarray

    @property
    def num_levels(self) -> int:
        return self.states.shape[0]

    def component(self, name: str) -> np.ndarray:
        return self.states[:, ("co_s", "co_e", "co_i", "co_r").index(name), :]


def terminal_conditions(e_terminal: Field, i_terminal: Field, lam: float) -> AdjointState:
    """Zero costates for s and r; the positive overshoot part for e and i."""
    mesh = e_terminal.mesh
    overshoot = np.maximum(e_terminal.values + i_terminal.values - lam, 0.0)
    zero = Field.constant(mesh, 0.0)
    weight = Field(mesh, overshoot)
    return AdjointState(co_s=zero, co_e=weight, co_i=weight, co_r=zero)


def threshold_kink_cells(
    e_terminal: Field, i_terminal: Field, lam: float, tol: float = KINK_TOL
) -> np.ndarray:
    """Indices of cells whose terminal overshoot is within ``tol`` of the kink."""
    gap = e_terminal.values + i_terminal.values - lam
    return np.flatnonzero(np.abs(gap) <= tol)


def solve_adjoint(forward: Trajectory, controls: ControlPair, lam: float) -> AdjointTrajectory:
    """Integrate the costates backward along a completed forward trajectory."""
    scenario = forward.scenario
    steps = scenario.time.steps
    if forward.states.shape[0] != steps + 1:
        raise PreconditionError(
            f"forward trajectory has {forward.states.shape[0]} levels, expected {steps + 1}"
        )
    if controls.u_i.shape != scenario.control_shape():
        raise ConfigurationError(
            f"controls have shape {controls.u_i.shape}, expected {scenario.control_shape()}"
        )

    rates = scenario.rates
    gamma = scenario.waning.per_step
    dt = scenario.time.dt
    inv_dt = 1.0 / dt
    bank = OperatorBank(scenario)

    terminal_state = forward.terminal()
    terminal = terminal_conditions(terminal_state.e, terminal_state.i, lam)
    kinks = threshold_kink_cells(terminal_state.e, terminal_state.i, lam)

    states = np.zeros((steps + 1, 4, scenario.num_cells))
    states[steps] = terminal.stacked()

    for n in range(steps - 1, -1, -1):
        p_next, q_next, w_next, z_next = states[n + 1]
        base_n = np.maximum(forward.states[n], 0.0)
        e_c, i_c = base_n[1], base_n[2]
        s_next = forward.states[n + 1][0]
        u_i_row, u_e_row = controls.at_step(n)
        op_s, op_e, op_i, op_r = bank.operators_at(n)
        gamma_n = gamma[n]
        p_minus_q = p_next - q_next

        z_now = op_r.solve_shifted(inv_dt + gamma_n, z_next * inv_dt + gamma_n * p_next)
        w_now = op_i.solve_shifted(
            inv_dt + rates.phi_r,
            w_next * inv_dt + rates.phi_r * z_now - u_i_row * s_next * p_minus_q,
        )
        q_now = op_e.solve_shifted(
            inv_dt + (rates.sigma + rates.phi_e),
            q_next * inv_dt
            + rates.sigma * w_now
            + rates.phi_e * z_now
            - u_e_row * s_next * p_minus_q,
        )
        absorption_s = u_i_row * i_c + u_e_row * e_c
        p_now = op_s.solve_shifted(
            inv_dt + absorption_s, p_next * inv_dt + absorption_s * q_now
        )
        states[n] = np.stack([p_now, q_now, w_now, z_now])

    if not np.all(np.isfinite(states)):
        raise NumericalError("adjoint trajectory contains non-finite values")
    return AdjointTrajectory(states=states, kink_cells=kinks)
