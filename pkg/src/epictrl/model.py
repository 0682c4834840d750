"""Model data for the spatial SEIRS system and its admissible controls.

Groups every coefficient the reaction-diffusion system needs, validates the
structural assumptions they must satisfy, and evaluates the five compartment
transfer terms. All containers are immutable values; validation failures
raise :class:`~epictrl.errors.ValidationError` with a distinct assumption
name per violated requirement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from .errors import ConfigurationError, ModelAssumptionError, ValidationError
from .mesh import Field, Mesh, TimeGrid, assemble_diffusion

if TYPE_CHECKING:  # pragma: no cover
    from .forward import EpidemicState

__all__ = [
    "RateConstants",
    "WaningRate",
    "DiffusionSpec",
    "InitialData",
    "ControlBounds",
    "ControlPair",
    "ThresholdTarget",
    "TransferFluxes",
    "Scenario",
    "validate_scenario",
    "transfer_fluxes",
]

# Scalar coefficient, one value per cell, or one row of cell values per step.
CoefficientSpec = Union[float, np.ndarray]


@dataclass(frozen=True)
class RateConstants:
    """Incubation rate and the two recovery rates, all 1/time."""

    sigma: float
    phi_e: float
    phi_r: float


@dataclass(frozen=True)
class WaningRate:
    """Immunity-waning rate, piecewise constant in time (one value per step)."""

    per_step: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "per_step", np.asarray(self.per_step, dtype=float))

    @property
    def maximum(self) -> float:
        return float(np.max(self.per_step)) if self.per_step.size else 0.0

    def at_step(self, n: int) -> float:
        return float(self.per_step[n])

    @staticmethod
    def constant(value: float, steps: int) -> "WaningRate":
        return WaningRate(np.full(steps, float(value)))


@dataclass(frozen=True)
class DiffusionSpec:
    """Per-compartment diffusion coefficients with their admissible range.

    Each coefficient may be a scalar, a per-cell array of shape (num_cells,),
    or a per-cell-per-step array of shape (steps, num_cells).
    """

    kappa_s: CoefficientSpec
    kappa_e: CoefficientSpec
    kappa_i: CoefficientSpec
    kappa_r: CoefficientSpec
    kappa_lo: float
    kappa_hi: float

    def coefficient(self, compartment: str) -> CoefficientSpec:
        return getattr(self, f"kappa_{compartment}")

    def is_time_dependent(self, compartment: str) -> bool:
        coeff = self.coefficient(compartment)
        return isinstance(coeff, np.ndarray) and coeff.ndim == 2

    def values_at(self, compartment: str, mesh: Mesh, step: int) -> np.ndarray:
        coeff = self.coefficient(compartment)
        if isinstance(coeff, np.ndarray):
            row = coeff[step] if coeff.ndim == 2 else coeff
            return np.asarray(row, dtype=float)
        return np.full(mesh.num_cells, float(coeff))


@dataclass(frozen=True)
class InitialData:
    """Nonnegative starting densities for the four compartments."""

    s0: Field
    e0: Field
    i0: Field
    r0: Field

    def fields(self) -> tuple[Field, Field, Field, Field]:
        return (self.s0, self.e0, self.i0, self.r0)


@dataclass(frozen=True)
class ControlBounds:
    """Upper box bounds for the two transmission-rate controls.

    Scalar, per-cell (num_cells,), or full (steps, num_cells) arrays; the
    first two broadcast in time. The derived cap is the global constant
    bounding both controls in sup norm.
    """

    u_i_max: CoefficientSpec
    u_e_max: CoefficientSpec

    @property
    def cap(self) -> float:
        return max(_sup(self.u_i_max), _sup(self.u_e_max))

    def upper_arrays(self, steps: int, num_cells: int) -> tuple[np.ndarray, np.ndarray]:
        shape = (steps, num_cells)
        return (
            np.broadcast_to(np.asarray(self.u_i_max, dtype=float), shape).copy(),
            np.broadcast_to(np.asarray(self.u_e_max, dtype=float), shape).copy(),
        )


def _sup(coeff: CoefficientSpec) -> float:
    return float(np.max(np.asarray(coeff, dtype=float)))


@dataclass(frozen=True)
class ControlPair:
    """Space-time transmission-rate controls, shape (steps, num_cells) each."""

    u_i: np.ndarray
    u_e: np.ndarray
    bounds: ControlBounds

    def __post_init__(self):
        u_i = np.asarray(self.u_i, dtype=float)
        u_e = np.asarray(self.u_e, dtype=float)
        if u_i.shape != u_e.shape or u_i.ndim != 2:
            raise ConfigurationError(
                f"controls must be matching (steps, cells) arrays, got {u_i.shape} and {u_e.shape}"
            )
        object.__setattr__(self, "u_i", u_i)
        object.__setattr__(self, "u_e", u_e)

    @property
    def steps(self) -> int:
        return self.u_i.shape[0]

    def at_step(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return self.u_i[n], self.u_e[n]

    def check_admissible(self) -> None:
        upper_i, upper_e = self.bounds.upper_arrays(*self.u_i.shape)
        if np.any(self.u_i < 0.0) or np.any(self.u_e < 0.0):
            raise ValidationError("controls-nonnegative", "controls must be nonnegative")
        if np.any(self.u_i > upper_i) or np.any(self.u_e > upper_e):
            raise ValidationError(
                "controls-admissible", "controls must not exceed their upper bounds"
            )

    @staticmethod
    def zeros(steps: int, num_cells: int, bounds: ControlBounds) -> "ControlPair":
        shape = (steps, num_cells)
        return ControlPair(np.zeros(shape), np.zeros(shape), bounds)

    @staticmethod
    def at_fraction(
        steps: int, num_cells: int, bounds: ControlBounds, fraction: float
    ) -> "ControlPair":
        upper_i, upper_e = bounds.upper_arrays(steps, num_cells)
        return ControlPair(fraction * upper_i, fraction * upper_e, bounds)


@dataclass(frozen=True)
class ThresholdTarget:
    """Terminal threshold for the exposed plus infected density."""

    lam: float


@dataclass(frozen=True)
class TransferFluxes:
    """The five cellwise transfer terms of one time instant.

    Each array is nonnegative whenever the state and controls are, and each
    is meant to be computed once and applied with opposite signs to the two
    compartments it couples.
    """

    infection_by_infected: np.ndarray  # u_i * s * i, leaves s, enters e
    infection_by_exposed: np.ndarray  # u_e * s * e, leaves s, enters e
    incubation: np.ndarray  # sigma * e, leaves e, enters i
    recovery_from_exposed: np.ndarray  # phi_e * e, leaves e, enters r
    recovery_from_infected: np.ndarray  # phi_r * i, leaves i, enters r
    waning: np.ndarray  # gamma * r, leaves r, enters s

    def signed_terms(self) -> list[tuple[float, np.ndarray]]:
        """Every flux with both of its signs, for exact-cancellation checks."""
        return [
            (-1.0, self.infection_by_infected),
            (-1.0, self.infection_by_exposed),
            (+1.0, self.waning),
            (+1.0, self.infection_by_infected),
            (+1.0, self.infection_by_exposed),
            (-1.0, self.incubation),
            (-1.0, self.recovery_from_exposed),
            (+1.0, self.incubation),
            (-1.0, self.recovery_from_infected),
            (+1.0, self.recovery_from_exposed),
            (+1.0, self.recovery_from_infected),
            (-1.0, self.waning),
        ]


@dataclass(frozen=True)
class Scenario:
    """A fully validated problem instance. Construct via :func:`validate_scenario`."""

    mesh: Mesh
    time: TimeGrid
    rates: RateConstants
    waning: WaningRate
    diffusion: DiffusionSpec
    initial: InitialData
    bounds: ControlBounds
    threshold: ThresholdTarget

    @property
    def num_cells(self) -> int:
        return self.mesh.num_cells

    def control_shape(self) -> tuple[int, int]:
        return (self.time.steps, self.mesh.num_cells)


def _require(condition: bool, assumption: str, message: str) -> None:
    if not condition:
        raise ValidationError(assumption, message)


def validate_scenario(
    mesh: Mesh,
    time: TimeGrid,
    rates: RateConstants,
    waning: WaningRate,
    diffusion: DiffusionSpec,
    initial: InitialData,
    bounds: ControlBounds,
    threshold: ThresholdTarget,
    controls: "ControlPair | None" = None,
) -> Scenario:
    """Check every structural assumption and return the validated scenario.

    Each violated assumption raises a ValidationError naming it; the optional
    control pair, when given, is checked for admissibility against ``bounds``.
    """
    _require(np.isfinite(rates.sigma) and rates.sigma > 0.0, "sigma-positive", "sigma must be positive")
    _require(np.isfinite(rates.phi_e) and rates.phi_e > 0.0, "phi_e-positive", "phi_e must be positive")
    _require(np.isfinite(rates.phi_r) and rates.phi_r > 0.0, "phi_r-positive", "phi_r must be positive")

    gamma = waning.per_step
    _require(gamma.shape == (time.steps,), "gamma-shape",
             f"gamma must carry one value per time step ({time.steps}), got shape {gamma.shape}")
    _require(bool(np.all(np.isfinite(gamma))), "gamma-bounded", "gamma must be finite")
    _require(bool(np.all(gamma >= 0.0)), "gamma-nonnegative", "gamma must be nonnegative")
    _require(
        time.dt * waning.maximum <= 1.0,
        "r-positivity-step-restriction",
        f"dt * max(gamma) = {time.dt * waning.maximum} exceeds 1; refine the time grid "
        "(required for positivity of the recovered compartment)",
    )

    _require(
        np.isfinite(diffusion.kappa_lo) and diffusion.kappa_lo > 0.0,
        "diffusion-bounds", "kappa_lo must be positive",
    )
    _require(
        np.isfinite(diffusion.kappa_hi) and diffusion.kappa_hi >= diffusion.kappa_lo,
        "diffusion-bounds", "kappa_hi must be finite and >= kappa_lo",
    )
    for comp in "seir":
        coeff = np.asarray(diffusion.coefficient(comp), dtype=float)
        if coeff.ndim == 1:
            _require(coeff.shape == (mesh.num_cells,), "diffusion-shape",
                     f"kappa_{comp} per-cell array has shape {coeff.shape}")
        elif coeff.ndim == 2:
            _require(coeff.shape == (time.steps, mesh.num_cells), "diffusion-shape",
                     f"kappa_{comp} space-time array has shape {coeff.shape}")
        if np.any(coeff < diffusion.kappa_lo) or np.any(coeff > diffusion.kappa_hi):
            raise ModelAssumptionError(
                "diffusion-bounds",
                f"kappa_{comp} must lie in [{diffusion.kappa_lo}, {diffusion.kappa_hi}]",
            )

    for name, init_field in zip(("s0", "e0", "i0", "r0"), initial.fields()):
        _require(init_field.mesh == mesh, "initial-mesh", f"{name} lives on a different mesh")
        _require(bool(np.all(init_field.values >= 0.0)), "initial-nonnegative",
                 "initial data must be nonnegative")

    for name, bound in (("u_i_max", bounds.u_i_max), ("u_e_max", bounds.u_e_max)):
        arr = np.asarray(bound, dtype=float)
        _require(bool(np.all(np.isfinite(arr))), "control-bounds-finite", f"{name} must be finite")
        _require(bool(np.all(arr >= 0.0)), "control-bounds-nonnegative",
                 f"{name} must be nonnegative")
        if arr.ndim not in (0, 1, 2):
            raise ValidationError(
                "control-bounds-shape",
                f"{name} must be a scalar, a per-cell array, or a (steps, cells) array",
            )
        if arr.ndim == 1:
            _require(arr.shape == (mesh.num_cells,), "control-bounds-shape",
                     f"{name} has shape {arr.shape}, expected ({mesh.num_cells},)")
        if arr.ndim == 2:
            _require(arr.shape == (time.steps, mesh.num_cells), "control-bounds-shape",
                     f"{name} has shape {arr.shape}, expected {(time.steps, mesh.num_cells)}")

    _require(np.isfinite(threshold.lam) and threshold.lam > 0.0, "threshold-positive",
             "lambda must be positive")

    scenario = Scenario(mesh, time, rates, waning, diffusion, initial, bounds, threshold)
    if controls is not None:
        if controls.u_i.shape != scenario.control_shape():
            raise ValidationError(
                "controls-shape",
                f"controls have shape {controls.u_i.shape}, expected {scenario.control_shape()}",
            )
        controls.check_admissible()
    # assembling once validates the bound compatibility of the operators as well
    for comp in "seir":
        assemble_diffusion(
            mesh,
            Field(mesh, diffusion.values_at(comp, mesh, 0)),
            diffusion.kappa_lo,
            diffusion.kappa_hi,
        )
    return scenario


def transfer_fluxes(
    state: "EpidemicState",
    u_i_at_step: np.ndarray,
    u_e_at_step: np.ndarray,
    gamma_at_step: float,
    rates: RateConstants,
) -> TransferFluxes:
    """Evaluate the five transfer terms at one instant; pure in its inputs."""
    s, e, i, r = (f.values for f in (state.s, state.e, state.i, state.r))
    return TransferFluxes(
        infection_by_infected=u_i_at_step * s * i,
        infection_by_exposed=u_e_at_step * s * e,
        incubation=rates.sigma * e,
        recovery_from_exposed=rates.phi_e * e,
        recovery_from_infected=rates.phi_r * i,
        waning=gamma_at_step * r,
    )
