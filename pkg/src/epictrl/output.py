"""Deterministic CSV emission for fields, states, tables, and run metadata.

Every artifact is byte-reproducible: floats carry 17 significant digits
(enough to round-trip IEEE doubles), rows follow a fixed order, newlines are
always "\\n", and no timestamps are written. Each CSV starts with '#' comment
lines carrying the metadata block of the run that produced it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .mesh import Field, Mesh, build_mesh

__all__ = [
    "format_float",
    "write_table",
    "write_metadata",
    "write_snapshot",
    "read_snapshot",
    "write_state_snapshot",
    "write_spacetime",
    "read_spacetime",
]


def format_float(value: float) -> str:
    return f"{float(value):.17g}"


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format_float(value)


def _comment_lines(metadata: "dict | None") -> list[str]:
    if not metadata:
        return []
    return [f"# {key} = {metadata[key]}" for key in sorted(metadata)]


def write_table(path: "str | Path", columns: "list[str]", rows, metadata: "dict | None" = None) -> None:
    """Write a CSV table with a '#' metadata header block."""
    lines = _comment_lines(metadata)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_metadata(path: "str | Path", metadata: dict) -> None:
    """Canonical JSON metadata (sorted keys, no timestamps)."""
    text = json.dumps(metadata, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8", newline="\n")


def _snapshot_header(mesh: Mesh, time_level: int) -> dict:
    return {
        "dimension": mesh.dimension,
        "cells": " ".join(str(n) for n in mesh.cells_per_axis),
        "lengths": " ".join(format_float(x) for x in mesh.domain_lengths),
        "time_level": time_level,
    }


def write_snapshot(
    field: Field,
    path: "str | Path",
    time_level: int = 0,
    metadata: "dict | None" = None,
) -> None:
    """One cell value per row, row-major, with the grid described up front."""
    meta = dict(metadata or {})
    meta.update(_snapshot_header(field.mesh, time_level))
    write_table(path, ["value"], ((v,) for v in field.values), metadata=meta)


def write_state_snapshot(
    state,
    path: "str | Path",
    time_level: int,
    metadata: "dict | None" = None,
) -> None:
    """Four-column variant of write_snapshot for one epidemic or costate level."""
    stacked = state.stacked()
    names = (
        ["s", "e", "i", "r"]
        if hasattr(state, "s")
        else ["co_s", "co_e", "co_i", "co_r"]
    )
    meta = dict(metadata or {})
    mesh = (state.s if hasattr(state, "s") else state.co_s).mesh
    meta.update(_snapshot_header(mesh, time_level))
    write_table(path, names, zip(*stacked), metadata=meta)


def _parse_comments(lines: "list[str]") -> dict:
    header = {}
    for line in lines:
        if not line.startswith("#"):
            break
        body = line[1:].strip()
        if "=" in body:
            key, _, value = body.partition("=")
            header[key.strip()] = value.strip()
    return header


def read_snapshot(path: "str | Path", mesh: "Mesh | None" = None) -> Field:
    """Parse a snapshot written by write_snapshot; round-trips bitwise.

    With ``mesh`` given, the header must describe the same grid; otherwise the
    grid is rebuilt from the header.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read snapshot {path}: {exc}") from exc
    header = _parse_comments(lines)
    for key in ("dimension", "cells", "lengths"):
        if key not in header:
            raise FormatError(f"snapshot {path} is missing the '{key}' header")
    try:
        dimension = int(header["dimension"])
        cells = [int(tok) for tok in header["cells"].split()]
        lengths = [float(tok) for tok in header["lengths"].split()]
    except ValueError as exc:
        raise FormatError(f"snapshot {path} has a malformed header: {exc}") from exc
    described = build_mesh(dimension, cells, lengths)
    if mesh is not None and (
        described.dimension != mesh.dimension
        or described.cells_per_axis != mesh.cells_per_axis
        or described.domain_lengths != mesh.domain_lengths
    ):
        raise FormatError(
            f"snapshot {path} describes mesh {described.cells_per_axis}, "
            f"expected {mesh.cells_per_axis}"
        )
    target = mesh or described

    data_lines = [line for line in lines if line and not line.startswith("#")]
    if not data_lines or data_lines[0].split(",")[0] != "value":
        raise FormatError(f"snapshot {path} is missing the 'value' column header")
    try:
        values = np.array([float(line.split(",")[0]) for line in data_lines[1:]])
    except ValueError as exc:
        raise FormatError(f"snapshot {path} has malformed data: {exc}") from exc
    if values.size != target.num_cells:
        raise FormatError(
            f"snapshot {path} holds {values.size} values for {target.num_cells} cells"
        )
    return Field(target, values)


def write_spacetime(array: np.ndarray, path: "str | Path", metadata: "dict | None" = None) -> None:
    """A (steps, cells) array as step,cell,value rows in fixed order."""
    steps, cells = array.shape
    meta = dict(metadata or {})
    meta.update({"steps": steps, "cells_total": cells})
    rows = (
        (n, c, array[n, c]) for n in range(steps) for c in range(cells)
    )
    write_table(path, ["step", "cell", "value"], rows, metadata=meta)


def read_spacetime(path: "str | Path") -> np.ndarray:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read table {path}: {exc}") from exc
    header = _parse_comments(lines)
    if "steps" not in header or "cells_total" not in header:
        raise FormatError(f"table {path} is missing steps/cells_total headers")
    steps, cells = int(header["steps"]), int(header["cells_total"])
    data_lines = [line for line in lines if line and not line.startswith("#")]
    if not data_lines or data_lines[0] != "step,cell,value":
        raise FormatError(f"table {path} is missing the step,cell,value header")
    out = np.empty((steps, cells))
    if len(data_lines) - 1 != steps * cells:
        raise FormatError(f"table {path} has {len(data_lines) - 1} rows, expected {steps * cells}")
    for line in data_lines[1:]:
        step_tok, cell_tok, value_tok = line.split(",")
        out[int(step_tok), int(cell_tok)] = float(value_tok)
    return out
