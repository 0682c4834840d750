"""Cost functional, reduced gradient, and projected gradient descent.

The reduced gradient combines forward and costate trajectories pointwise on
the control grid: g_i = s i (co_e - co_s) + u_i and likewise with e for g_e,
with the forward factors read at the levels the forward scheme used for its
transmission fluxes and the costates at the lower level of the same step.
Descent iterates u <- P_box(u - alpha g) with Armijo backtracking on the
cost; the projection step is itself the first-order optimality map, so the
terminating iterate certifies its own stationarity through the variational
inequality residual and the projection fixed-point gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointTrajectory, solve_adjoint
from .errors import PreconditionError
from .forward import Trajectory, solve_forward
from .model import ControlBounds, ControlPair, Scenario
from .norms import l2q_norm_pair
from .tangent import ControlVariation

__all__ = [
    "CostBreakdown",
    "GradientPair",
    "OptimizerOptions",
    "IterationRecord",
    "OptimizationReport",
    "evaluate_cost",
    "reduced_gradient",
    "project_controls",
    "vi_residual",
    "projected_gradient_descent",
    "fd_directional_derivative",
]


@dataclass(frozen=True)
class CostBreakdown:
    """Terminal overshoot penalty plus quadratic control effort."""

    terminal_term: float
    control_term: float

    @property
    def total(self) -> float:
        return self.terminal_term + self.control_term


@dataclass(frozen=True)
class GradientPair:
    """Reduced-gradient components on the control grid."""

    g_i: np.ndarray
    g_e: np.ndarray


def evaluate_cost(trajectory: Trajectory, controls: ControlPair, lam: float) -> CostBreakdown:
    """Midpoint-quadrature discretization of both cost integrals."""
    scenario = trajectory.scenario
    vol = scenario.mesh.cell_volume
    dt = scenario.time.dt
    terminal = trajectory.states[-1]
    overshoot = np.maximum(terminal[1] + terminal[2] - lam, 0.0)
    terminal_term = 0.5 * vol * float(np.sum(overshoot * overshoot))
    control_term = 0.5 * dt * vol * float(
        np.sum(controls.u_i * controls.u_i) + np.sum(controls.u_e * controls.u_e)
    )
    return CostBreakdown(terminal_term=terminal_term, control_term=control_term)


def reduced_gradient(
    forward: Trajectory, adjoint: AdjointTrajectory, controls: ControlPair
) -> GradientPair:
    """Assemble g from the stored forward and costate trajectories."""
    steps = forward.states.shape[0] - 1
    if adjoint.states.shape != forward.states.shape:
        raise PreconditionError(
            f"adjoint shape {adjoint.states.shape} does not match forward "
            f"shape {forward.states.shape}"
        )
    if controls.u_i.shape != (steps, forward.states.shape[2]):
        raise PreconditionError(
            f"controls shape {controls.u_i.shape} does not match the trajectory grid"
        )
    s_next = forward.states[1:, 0, :]
    e_level = np.maximum(forward.states[:-1, 1, :], 0.0)
    i_level = np.maximum(forward.states[:-1, 2, :], 0.0)
    co_diff = adjoint.states[:-1, 1, :] - adjoint.states[:-1, 0, :]  # co_e - co_s
    return GradientPair(
        g_i=s_next * i_level * co_diff + controls.u_i,
        g_e=s_next * e_level * co_diff + controls.u_e,
    )


def project_controls(
    candidate_i: np.ndarray, candidate_e: np.ndarray, bounds: ControlBounds
) -> ControlPair:
    """Pointwise clamp onto [0, u_max]; the L2 projection onto the box."""
    upper_i, upper_e = bounds.upper_arrays(*candidate_i.shape)
    return ControlPair(
        np.clip(candidate_i, 0.0, upper_i), np.clip(candidate_e, 0.0, upper_e), bounds
    )


def vi_residual(scenario: Scenario, controls: ControlPair, gradient: GradientPair) -> float:
    """|| u - P_box(u - g) || in L2(Q) over both components (unnormalized)."""
    projected = project_controls(
        controls.u_i - gradient.g_i, controls.u_e - gradient.g_e, controls.bounds
    )
    return l2q_norm_pair(
        scenario.mesh,
        scenario.time.dt,
        controls.u_i - projected.u_i,
        controls.u_e - projected.u_e,
    )


def _bounds_scale(scenario: Scenario, bounds: ControlBounds) -> float:
    upper_i, upper_e = bounds.upper_arrays(*scenario.control_shape())
    return l2q_norm_pair(scenario.mesh, scenario.time.dt, upper_i, upper_e) + 1.0


@dataclass(frozen=True)
class OptimizerOptions:
    max_iters: int = 100
    vi_tolerance: float = 1e-6
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    step_collapse: float = 1e-12


@dataclass
class IterationRecord:
    index: int
    cost: float
    terminal_term: float
    control_term: float
    vi_residual: float  # normalized
    step_length: float  # step taken FROM this iterate (0 on the last row)
    backtracks: int


@dataclass
class OptimizationReport:
    iterations: "list[IterationRecord]" = field(default_factory=list)
    final_controls: "ControlPair | None" = None
    reason: str = ""
    final_cost: float = np.nan
    final_residual: float = np.nan
    fixed_point_gap: float = np.nan
    forward_solves: int = 0
    adjoint_solves: int = 0

    def cost_history(self) -> np.ndarray:
        return np.array([row.cost for row in self.iterations])


def projected_gradient_descent(
    scenario: Scenario,
    initial_controls: ControlPair,
    options: "OptimizerOptions | None" = None,
) -> OptimizationReport:
    """Minimize the cost over the admissible box from an admissible start.

    Each Armijo trial costs one forward solve; each accepted iterate one
    adjoint solve. Terminates on normalized VI residual below tolerance, on
    the iteration cap, or on step collapse; the report is returned in every
    case with the reason recorded.
    """
    opts = options or OptimizerOptions()
    initial_controls.check_admissible()
    lam = scenario.threshold.lam
    scale = _bounds_scale(scenario, initial_controls.bounds)
    report = OptimizationReport()

    controls = initial_controls
    trajectory = solve_forward(scenario, controls)
    report.forward_solves += 1
    cost = evaluate_cost(trajectory, controls, lam)

    for index in range(opts.max_iters + 1):
        adjoint = solve_adjoint(trajectory, controls, lam)
        report.adjoint_solves += 1
        gradient = reduced_gradient(trajectory, adjoint, controls)
        residual = vi_residual(scenario, controls, gradient) / scale
        record = IterationRecord(
            index=index,
            cost=cost.total,
            terminal_term=cost.terminal_term,
            control_term=cost.control_term,
            vi_residual=residual,
            step_length=0.0,
            backtracks=0,
        )
        report.iterations.append(record)

        if residual <= opts.vi_tolerance:
            report.reason = "vi-converged"
            break
        if index == opts.max_iters:
            report.reason = "max-iterations"
            break

        alpha = opts.initial_step
        backtracks = 0
        accepted = None
        while True:
            candidate = project_controls(
                controls.u_i - alpha * gradient.g_i,
                controls.u_e - alpha * gradient.g_e,
                controls.bounds,
            )
            step_sq = l2q_norm_pair(
                scenario.mesh, scenario.time.dt,
                candidate.u_i - controls.u_i, candidate.u_e - controls.u_e,
            ) ** 2
            if step_sq == 0.0:
                # the projection arc is stationary at this step size
                report.reason = "projection-stationary"
                break
            trial_trajectory = solve_forward(scenario, candidate)
            report.forward_solves += 1
            trial_cost = evaluate_cost(trial_trajectory, candidate, lam)
            if cost.total - trial_cost.total >= (opts.armijo_c / alpha) * step_sq:
                accepted = (candidate, trial_trajectory, trial_cost)
                break
            alpha *= opts.backtrack_factor
            backtracks += 1
            if alpha < opts.step_collapse:
                report.reason = "step-collapse"
                break
        if accepted is None:
            break

        controls, trajectory, cost = accepted
        record.step_length = alpha
        record.backtracks = backtracks

    final = report.iterations[-1]
    report.final_controls = controls
    report.final_cost = final.cost
    report.final_residual = final.vi_residual
    report.fixed_point_gap = _projection_fixed_point_gap(scenario, trajectory, controls, lam)
    return report


def _projection_fixed_point_gap(
    scenario: Scenario, trajectory: Trajectory, controls: ControlPair, lam: float
) -> float:
    """|| u - P_box(s i (co_s - co_e), s e (co_s - co_e)) || at the final iterate."""
    adjoint = solve_adjoint(trajectory, controls, lam)
    s_next = trajectory.states[1:, 0, :]
    e_level = np.maximum(trajectory.states[:-1, 1, :], 0.0)
    i_level = np.maximum(trajectory.states[:-1, 2, :], 0.0)
    co_diff = adjoint.states[:-1, 0, :] - adjoint.states[:-1, 1, :]  # co_s - co_e
    projected = project_controls(
        s_next * i_level * co_diff, s_next * e_level * co_diff, controls.bounds
    )
    return l2q_norm_pair(
        scenario.mesh,
        scenario.time.dt,
        controls.u_i - projected.u_i,
        controls.u_e - projected.u_e,
    )


def fd_directional_derivative(
    scenario: Scenario,
    controls: ControlPair,
    direction: ControlVariation,
    epsilon: float,
) -> float:
    """Central-difference directional derivative of the cost, two forward solves.

    The step is shrunk if u +/- eps h would leave the admissible box; a
    direction that admits no positive step raises a precondition error.
    """
    if epsilon <= 0.0:
        raise PreconditionError("epsilon must be positive")
    upper_i, upper_e = controls.bounds.upper_arrays(*controls.u_i.shape)
    eps = float(epsilon)
    for _ in range(200):
        ok = True
        for sign in (1.0, -1.0):
            u_i = controls.u_i + sign * eps * direction.h_i
            u_e = controls.u_e + sign * eps * direction.h_e
            if (
                np.any(u_i < 0.0) or np.any(u_e < 0.0)
                or np.any(u_i > upper_i) or np.any(u_e > upper_e)
            ):
                ok = False
                break
        if ok:
            break
        eps *= 0.5
    else:
        raise PreconditionError(
            "controls +/- eps * direction cannot be made admissible by shrinking eps"
        )

    lam = scenario.threshold.lam
    values = []
    for sign in (1.0, -1.0):
        shifted = ControlPair(
            controls.u_i + sign * eps * direction.h_i,
            controls.u_e + sign * eps * direction.h_e,
            controls.bounds,
        )
        trajectory = solve_forward(scenario, shifted)
        values.append(evaluate_cost(trajectory, shifted, lam).total)
    return (values[0] - values[1]) / (2.0 * eps)
