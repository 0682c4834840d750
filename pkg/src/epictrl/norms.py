"""Discrete norms shared by the solvers and their verification probes.

Spatial integrals use midpoint quadrature (cell centers); the V seminorm is
the quadratic form of the unit-coefficient diffusion stencil; time integrals
over (0, T] use the right-endpoint rule matching the implicit Euler levels.
Space-time (control-like) arrays are piecewise constant per step, for which
the dt-weighted sum is the exact integral.
"""

from __future__ import annotations

import numpy as np

from .mesh import DiffusionOperator, Field, Mesh, assemble_diffusion

__all__ = [
    "unit_stencil",
    "h_norm",
    "c0h_norm",
    "l2v_norm",
    "l2q_norm",
    "l2q_norm_pair",
    "l2q_inner_pair",
    "trajectory_distance",
]


def unit_stencil(mesh: Mesh) -> DiffusionOperator:
    """Diffusion operator with kappa = 1, used as the V-seminorm stencil."""
    return assemble_diffusion(mesh, Field.constant(mesh, 1.0), 1.0, 1.0)


def h_norm(mesh: Mesh, values: np.ndarray) -> float:
    """Discrete L2(Omega) norm; trailing axis must be the cell axis."""
    return float(np.sqrt(mesh.cell_volume * np.sum(values * values)))


def c0h_norm(mesh: Mesh, levels: np.ndarray) -> float:
    """Discrete C([0,T]; H) norm: max over time levels of the H norm.

    ``levels`` has shape (num_levels, ..., num_cells); any axes between the
    level axis and the cell axis (e.g. the four compartments) are folded into
    the H norm of that level.
    """
    flat = levels.reshape(levels.shape[0], -1)
    per_level = np.sqrt(mesh.cell_volume * np.sum(flat * flat, axis=1))
    return float(np.max(per_level))


def l2v_norm(mesh: Mesh, levels: np.ndarray, dt: float, stencil: DiffusionOperator) -> float:
    """Discrete L2(0,T; V) norm over levels 1..N (right-endpoint rule)."""
    total = 0.0
    for level in levels[1:]:
        block = level.reshape(-1, levels.shape[-1])
        for row in block:
            total += mesh.cell_volume * float(row @ row) + stencil.quadratic_form(row)
    return float(np.sqrt(dt * total))


def l2q_norm(mesh: Mesh, dt: float, spacetime: np.ndarray) -> float:
    """Discrete L2(Q) norm of a per-step space-time array."""
    return float(np.sqrt(dt * mesh.cell_volume * np.sum(spacetime * spacetime)))


def l2q_norm_pair(mesh: Mesh, dt: float, first: np.ndarray, second: np.ndarray) -> float:
    return float(
        np.sqrt(dt * mesh.cell_volume * (np.sum(first * first) + np.sum(second * second)))
    )


def l2q_inner_pair(
    mesh: Mesh,
    dt: float,
    a_pair: tuple[np.ndarray, np.ndarray],
    b_pair: tuple[np.ndarray, np.ndarray],
) -> float:
    """L2(Q)^2 inner product of two control-like pairs."""
    return float(
        dt
        * mesh.cell_volume
        * (np.sum(a_pair[0] * b_pair[0]) + np.sum(a_pair[1] * b_pair[1]))
    )


def trajectory_distance(
    mesh: Mesh,
    levels_a: np.ndarray,
    levels_b: np.ndarray,
    dt: float,
    stencil: DiffusionOperator | None = None,
) -> float:
    """Distance in the intersection norm C([0,T];H) + L2(0,T;V).

    With ``stencil`` omitted only the C([0,T];H) part is measured.
    """
    diff = levels_a - levels_b
    out = c0h_norm(mesh, diff)
    if stencil is not None:
        out += l2v_norm(mesh, diff, dt, stencil)
    return out
