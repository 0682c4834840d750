"""Uniform cell-centered grids, scalar fields, and zero-flux diffusion operators.

The spatial discretization is a finite-volume two-point flux scheme on a
uniform rectangular grid (1D or 2D). A diffusion operator represents the map
v -> -div(kappa grad v) with zero-flux boundaries, assembled so that it is
symmetric, has zero row sums, and has nonpositive off-diagonal entries. The
last two properties make every implicit-step matrix an M-matrix, which is what
guarantees the discrete maximum principle used by the time steppers.

All types here are immutable values after construction and safe to share
across threads; each solve is single-threaded, but independent solves may run
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solveh_banded
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .errors import ConfigurationError, ModelAssumptionError, NumericalError, PreconditionError

__all__ = [
    "Mesh",
    "TimeGrid",
    "Field",
    "DiffusionOperator",
    "build_mesh",
    "build_time_grid",
    "integrate",
    "assemble_diffusion",
    "solve_implicit",
]


@dataclass(frozen=True)
class Mesh:
    """Uniform cell-centered rectangular grid in one or two dimensions."""

    dimension: int
    cells_per_axis: tuple[int, ...]
    domain_lengths: tuple[float, ...]

    @property
    def num_cells(self) -> int:
        out = 1
        for n in self.cells_per_axis:
            out *= n
        return out

    @property
    def cell_volume(self) -> float:
        return self.domain_measure / self.num_cells

    @property
    def domain_measure(self) -> float:
        out = 1.0
        for length in self.domain_lengths:
            out *= length
        return out

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(
            length / n for length, n in zip(self.domain_lengths, self.cells_per_axis)
        )


def build_mesh(
    dimension: int,
    cells_per_axis: "list[int] | tuple[int, ...]",
    domain_lengths: "list[float] | tuple[float, ...]",
) -> Mesh:
    """Validate the grid description and derive cell geometry."""
    if dimension not in (1, 2):
        raise ConfigurationError(f"mesh dimension must be 1 or 2, got {dimension}")
    cells = tuple(int(n) for n in cells_per_axis)
    lengths = tuple(float(x) for x in domain_lengths)
    if len(cells) != dimension or len(lengths) != dimension:
        raise ConfigurationError(
            f"expected {dimension} cell counts and lengths, got {len(cells)} and {len(lengths)}"
        )
    if any(n < 1 for n in cells):
        raise ConfigurationError(f"cell counts must be >= 1, got {cells}")
    if any(not np.isfinite(x) or x <= 0.0 for x in lengths):
        raise ConfigurationError(f"domain lengths must be positive, got {lengths}")
    return Mesh(dimension=dimension, cells_per_axis=cells, domain_lengths=lengths)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, horizon] into ``steps`` implicit-Euler steps."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0.0:
            raise ConfigurationError(f"time horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ConfigurationError(f"time steps must be >= 1, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)


def build_time_grid(horizon: float, steps: int) -> TimeGrid:
    return TimeGrid(horizon=float(horizon), steps=int(steps))


@dataclass(frozen=True)
class Field:
    """One real value per cell of a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.num_cells,):
            raise ConfigurationError(
                f"field has {values.shape} values for a mesh with {self.mesh.num_cells} cells"
            )
        if not np.all(np.isfinite(values)):
            raise NumericalError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    @staticmethod
    def constant(mesh: Mesh, value: float) -> "Field":
        return Field(mesh, np.full(mesh.num_cells, float(value)))


def integrate(field: Field) -> float:
    """Midpoint-quadrature integral of a field over the whole domain."""
    return field.mesh.cell_volume * float(np.sum(field.values))


class DiffusionOperator:
    """Sparse symmetric realization of v -> -div(kappa grad v), zero-flux boundary.

    Face conductivity is the arithmetic mean of the two adjacent cell kappa
    values divided by the squared spacing of that axis; boundary faces carry
    no flux, so constants lie in the kernel and row sums vanish.
    """

    def __init__(
        self,
        mesh: Mesh,
        matrix: csc_matrix,
        diag_positions: np.ndarray,
        super_diag: "np.ndarray | None" = None,
    ):
        self.mesh = mesh
        self._matrix = matrix
        self._diag_positions = diag_positions
        self._diag = matrix.diagonal()
        self._off = super_diag

    @property
    def matrix(self) -> csc_matrix:
        return self._matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Matrix-vector product A v on raw cell values."""
        return self._matrix @ values

    def apply_field(self, field: Field) -> Field:
        return Field(self.mesh, self.apply(field.values))

    def quadratic_form(self, values: np.ndarray) -> float:
        """<A v, v> in the discrete L2 pairing (includes the cell volume)."""
        return self.mesh.cell_volume * float(values @ self.apply(values))

    def solve_shifted(self, shift: "np.ndarray | float", rhs: np.ndarray) -> np.ndarray:
        """Solve (diag(shift) + A) x = rhs; shift must be positive cellwise.

        The shifted matrix is a nonsingular M-matrix, so nonnegative ``rhs``
        yields nonnegative ``x`` up to solver roundoff.
        """
        n = self.mesh.num_cells
        if n == 1:
            # single cell has no faces, A = 0
            return rhs / shift
        if self.mesh.dimension == 1:
            ab = np.empty((2, n))
            ab[0, 0] = 0.0
            ab[0, 1:] = self._off
            ab[1] = self._diag + shift
            try:
                out = solveh_banded(ab, rhs, lower=False, check_finite=False)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
                raise NumericalError(f"banded solve failed: {exc}") from exc
        else:
            data = self._matrix.data.copy()
            data[self._diag_positions] += shift
            shifted = csc_matrix(
                (data, self._matrix.indices, self._matrix.indptr), shape=self._matrix.shape
            )
            try:
                out = splu(shifted).solve(rhs)
            except RuntimeError as exc:  # pragma: no cover - defensive
                raise NumericalError(f"sparse factorization failed: {exc}") from exc
        if not np.all(np.isfinite(out)):
            residual = float("nan")
            raise NumericalError("implicit solve produced non-finite values", residual=residual)
        return out


def _face_weights_1d(kappa: np.ndarray, spacing: float) -> np.ndarray:
    return 0.5 * (kappa[:-1] + kappa[1:]) / spacing**2


def assemble_diffusion(
    mesh: Mesh,
    kappa: Field,
    kappa_lo: float,
    kappa_hi: float,
) -> DiffusionOperator:
    """Assemble the two-point flux operator for a coefficient field kappa.

    ``kappa`` must lie in [kappa_lo, kappa_hi] cellwise with kappa_lo > 0;
    violating the bounds is a model-assumption error, not a numerical one.
    """
    if kappa.mesh is not mesh and kappa.mesh != mesh:
        raise ConfigurationError("kappa field lives on a different mesh")
    if not (np.isfinite(kappa_lo) and np.isfinite(kappa_hi)) or kappa_lo <= 0.0:
        raise ModelAssumptionError(
            "diffusion-bounds", f"kappa bounds must be positive finite, got [{kappa_lo}, {kappa_hi}]"
        )
    values = kappa.values
    if np.any(values < kappa_lo) or np.any(values > kappa_hi):
        raise ModelAssumptionError(
            "diffusion-bounds",
            f"kappa values must lie in [{kappa_lo}, {kappa_hi}]; "
            f"observed range [{values.min()}, {values.max()}]",
        )

    n = mesh.num_cells
    super_diag = None
    if mesh.dimension == 1:
        (h,) = mesh.spacings
        w = _face_weights_1d(values, h) if n > 1 else np.zeros(0)
        idx = np.arange(n)
        diag = np.zeros(n)
        np.add.at(diag, idx[:-1], w)
        np.add.at(diag, idx[1:], w)
        rows = np.concatenate([idx, idx[:-1], idx[1:]])
        cols = np.concatenate([idx, idx[1:], idx[:-1]])
        vals = np.concatenate([diag, -w, -w])
        super_diag = -w
    else:
        nx, ny = mesh.cells_per_axis
        hx, hy = mesh.spacings
        kap = values.reshape(nx, ny)
        idx = np.arange(n).reshape(nx, ny)
        wx = (0.5 * (kap[:-1, :] + kap[1:, :]) / hx**2).ravel()
        wy = (0.5 * (kap[:, :-1] + kap[:, 1:]) / hy**2).ravel()
        ix_lo, ix_hi = idx[:-1, :].ravel(), idx[1:, :].ravel()
        iy_lo, iy_hi = idx[:, :-1].ravel(), idx[:, 1:].ravel()
        diag = np.zeros(n)
        np.add.at(diag, ix_lo, wx)
        np.add.at(diag, ix_hi, wx)
        np.add.at(diag, iy_lo, wy)
        np.add.at(diag, iy_hi, wy)
        flat = np.arange(n)
        rows = np.concatenate([flat, ix_lo, ix_hi, iy_lo, iy_hi])
        cols = np.concatenate([flat, ix_hi, ix_lo, iy_hi, iy_lo])
        vals = np.concatenate([diag, -wx, -wx, -wy, -wy])

    matrix = csc_matrix((vals, (rows, cols)), shape=(n, n))
    matrix.sum_duplicates()
    diag_positions = _diagonal_positions(matrix)
    return DiffusionOperator(mesh, matrix, diag_positions, super_diag=super_diag)


def _diagonal_positions(matrix: csc_matrix) -> np.ndarray:
    n = matrix.shape[0]
    positions = np.empty(n, dtype=np.int64)
    indptr, indices = matrix.indptr, matrix.indices
    for j in range(n):
        lo, hi = indptr[j], indptr[j + 1]
        k = lo + int(np.searchsorted(indices[lo:hi], j))
        if k >= hi or indices[k] != j:  # pragma: no cover - diagonal always assembled
            raise NumericalError(f"missing structural diagonal entry in column {j}")
        positions[j] = k
    return positions


def solve_implicit(
    op: DiffusionOperator,
    mass_scale: float,
    reaction_diag: Field,
    rhs: Field,
) -> Field:
    """Solve (mass_scale I + diag(reaction) + A) v = rhs.

    The system matrix is a nonsingular M-matrix whenever mass_scale > 0 and
    the reaction diagonal is nonnegative, so nonnegative right-hand sides
    produce nonnegative solutions.
    """
    if not np.isfinite(mass_scale) or mass_scale <= 0.0:
        raise PreconditionError(f"mass_scale must be positive, got {mass_scale}")
    if np.any(reaction_diag.values < 0.0):
        raise PreconditionError("reaction diagonal must be nonnegative cellwise")
    if reaction_diag.mesh != op.mesh or rhs.mesh != op.mesh:
        raise ConfigurationError("fields live on a different mesh than the operator")
    shift = mass_scale + reaction_diag.values
    return Field(op.mesh, op.solve_shifted(shift, rhs.values))
