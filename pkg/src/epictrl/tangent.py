"""Linearization of the control-to-state map around a forward trajectory.

The tangent system mirrors the forward stepper term for term: same operator
bank, same Gauss-Seidel order, same implicit/explicit split, and every frozen
coefficient evaluated at the time level its nonlinear counterpart used. The
integrator is therefore the exact derivative of the discrete forward map up
to linear-solver roundoff, which is what makes the second-order remainder
test sharp instead of drowned in O(dt) discretization mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError, PreconditionError
from .forward import OperatorBank, Trajectory, solve_forward
from .model import ControlPair, Scenario
from .norms import c0h_norm

__all__ = [
    "ControlVariation",
    "TangentTrajectory",
    "solve_tangent",
    "FrechetRemainderTable",
    "frechet_remainder_check",
]


@dataclass(frozen=True)
class ControlVariation:
    """A direction in control space; same (steps, cells) shape, any sign."""

    h_i: np.ndarray
    h_e: np.ndarray

    def __post_init__(self):
        h_i = np.asarray(self.h_i, dtype=float)
        h_e = np.asarray(self.h_e, dtype=float)
        if h_i.shape != h_e.shape or h_i.ndim != 2:
            raise ConfigurationError(
                f"variation components must be matching (steps, cells) arrays, "
                f"got {h_i.shape} and {h_e.shape}"
            )
        if not (np.all(np.isfinite(h_i)) and np.all(np.isfinite(h_e))):
            raise NumericalError("variation contains non-finite values")
        object.__setattr__(self, "h_i", h_i)
        object.__setattr__(self, "h_e", h_e)

    def scaled(self, factor: float) -> "ControlVariation":
        return ControlVariation(factor * self.h_i, factor * self.h_e)


@dataclass(frozen=True)
class TangentTrajectory:
    """State-perturbation quadruplets at all levels; level 0 is identically zero."""

    scenario: Scenario
    states: np.ndarray  # (N+1, 4, cells), rows track (s, e, i, r) perturbations

    def component(self, name: str) -> np.ndarray:
        return self.states[:, "seir".index(name), :]

    def terminal_exposed_plus_infected(self) -> np.ndarray:
        return self.states[-1, 1, :] + self.states[-1, 2, :]


def solve_tangent(
    base: Trajectory, base_controls: ControlPair, variation: ControlVariation
) -> TangentTrajectory:
    """Integrate the linearized system along a stored base trajectory."""
    scenario = base.scenario
    shape = scenario.control_shape()
    if base_controls.u_i.shape != shape or variation.h_i.shape != shape:
        raise ConfigurationError(
            f"controls/variation shape mismatch: expected {shape}, got "
            f"{base_controls.u_i.shape} and {variation.h_i.shape}"
        )
    if base.states.shape[0] != scenario.time.steps + 1:
        raise ConfigurationError("base trajectory does not cover the scenario time grid")

    rates = scenario.rates
    gamma = scenario.waning.per_step
    dt = scenario.time.dt
    inv_dt = 1.0 / dt
    bank = OperatorBank(scenario)
    tangent = np.zeros((scenario.time.steps + 1, 4, scenario.num_cells))

    for n in range(scenario.time.steps):
        xi_n, eta_n, iota_n, rho_n = tangent[n]
        # the forward step clamped its level-n coefficients at zero; the
        # derivative of that clamp vanishes on the (roundoff-rare) clamped cells
        base_n = base.states[n]
        clamp_mask = base_n >= 0.0
        e_c = np.maximum(base_n[1], 0.0)
        i_c = np.maximum(base_n[2], 0.0)
        eta_eff = np.where(clamp_mask[1], eta_n, 0.0)
        iota_eff = np.where(clamp_mask[2], iota_n, 0.0)
        rho_eff = np.where(clamp_mask[3], rho_n, 0.0)
        s_next = base.states[n + 1][0]
        u_i_row, u_e_row = base_controls.at_step(n)
        h_i_row, h_e_row = variation.h_i[n], variation.h_e[n]
        op_s, op_e, op_i, op_r = bank.operators_at(n)
        gamma_n = gamma[n]

        absorption_s = u_i_row * i_c + u_e_row * e_c
        d_wane = gamma_n * rho_eff
        d_absorption = u_i_row * iota_eff + u_e_row * eta_eff + h_i_row * i_c + h_e_row * e_c
        xi_next = op_s.solve_shifted(
            inv_dt + absorption_s,
            xi_n * inv_dt + d_wane - d_absorption * s_next,
        )

        d_infection = d_absorption * s_next + absorption_s * xi_next
        eta_next = op_e.solve_shifted(
            inv_dt + (rates.sigma + rates.phi_e), eta_n * inv_dt + d_infection
        )

        d_incub = rates.sigma * eta_next
        d_rec_e = rates.phi_e * eta_next
        iota_next = op_i.solve_shifted(inv_dt + rates.phi_r, iota_n * inv_dt + d_incub)

        d_rec_i = rates.phi_r * iota_next
        rho_next = op_r.solve_shifted(
            inv_dt, rho_n * inv_dt + d_rec_i + d_rec_e - d_wane
        )
        tangent[n + 1] = np.stack([xi_next, eta_next, iota_next, rho_next])

    if not np.all(np.isfinite(tangent)):
        raise NumericalError("tangent trajectory contains non-finite values")
    return TangentTrajectory(scenario=scenario, states=tangent)


@dataclass(frozen=True)
class FrechetRemainderTable:
    """Remainders R(eps) = ||S(u+eps h) - S(u) - eps * tangent|| and halving ratios."""

    epsilons: np.ndarray
    remainders: np.ndarray
    half_remainders: np.ndarray
    ratios: np.ndarray  # R(eps) / R(eps/2); approx 4 for a quadratic remainder
    dropped_epsilons: tuple[float, ...]

    def rows(self):
        for k in range(self.epsilons.size):
            yield (
                float(self.epsilons[k]),
                float(self.remainders[k]),
                float(self.half_remainders[k]),
                float(self.ratios[k]),
            )


def _admissible(controls: ControlPair, u_i: np.ndarray, u_e: np.ndarray) -> bool:
    upper_i, upper_e = controls.bounds.upper_arrays(*u_i.shape)
    return bool(
        np.all(u_i >= 0.0) and np.all(u_e >= 0.0)
        and np.all(u_i <= upper_i) and np.all(u_e <= upper_e)
    )


def frechet_remainder_check(
    scenario: Scenario,
    base_controls: ControlPair,
    variation: ControlVariation,
    epsilons: "list[float]",
) -> FrechetRemainderTable:
    """Second-order remainder probe of the control-to-state differentiability.

    Epsilons whose perturbed controls leave the admissible box are dropped
    (the map is only probed one-sidedly inside its domain); if none survive a
    precondition error is raised.
    """
    base = solve_forward(scenario, base_controls)
    tangent = solve_tangent(base, base_controls, variation)
    mesh = scenario.mesh

    kept: list[float] = []
    dropped: list[float] = []
    for eps in epsilons:
        candidate_i = base_controls.u_i + eps * variation.h_i
        candidate_e = base_controls.u_e + eps * variation.h_e
        half_i = base_controls.u_i + (eps / 2.0) * variation.h_i
        half_e = base_controls.u_e + (eps / 2.0) * variation.h_e
        if _admissible(base_controls, candidate_i, candidate_e) and _admissible(
            base_controls, half_i, half_e
        ):
            kept.append(float(eps))
        else:
            dropped.append(float(eps))
    if not kept:
        raise PreconditionError(
            "no requested epsilon keeps the perturbed controls admissible"
        )

    def remainder(eps: float) -> float:
        perturbed = ControlPair(
            base_controls.u_i + eps * variation.h_i,
            base_controls.u_e + eps * variation.h_e,
            base_controls.bounds,
        )
        states = solve_forward(scenario, perturbed).states
        return c0h_norm(mesh, states - base.states - eps * tangent.states)

    remainders = np.array([remainder(eps) for eps in kept])
    half_remainders = np.array([remainder(eps / 2.0) for eps in kept])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(
            half_remainders > 0.0, remainders / half_remainders, np.nan
        )
    return FrechetRemainderTable(
        epsilons=np.array(kept),
        remainders=remainders,
        half_remainders=half_remainders,
        ratios=ratios,
        dropped_epsilons=tuple(dropped),
    )
