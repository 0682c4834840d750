"""TOML scenario configuration: parsing, defaults, and the resolved hash.

The configuration tree mirrors the scenario structure (mesh, time, rates,
waning, diffusion, initial, control, threshold, optimizer, output). Scalar
coefficient entries may instead name a snapshot file holding one value per
cell. Parsing resolves every file reference, validates all modelling
assumptions, and fingerprints the fully resolved data with a SHA-256 hash so
emitted artifacts can state exactly what produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .errors import ConfigurationError
from .mesh import Field, Mesh, build_mesh, build_time_grid
from .model import (
    ControlBounds,
    ControlPair,
    DiffusionSpec,
    InitialData,
    RateConstants,
    Scenario,
    ThresholdTarget,
    WaningRate,
    validate_scenario,
)
from .optimize import OptimizerOptions
from .output import read_snapshot

__all__ = ["ScenarioConfig", "parse_config", "initial_controls"]

_GUESS_MODES = ("zero", "half-max", "max")


@dataclass(frozen=True)
class ScenarioConfig:
    """A validated scenario plus run options and the resolved config hash."""

    scenario: Scenario
    initial_guess: str
    optimizer: OptimizerOptions
    output_dir: str
    snapshots: bool
    seed: int
    config_hash: str
    source: str


def _section(tree: dict, name: str) -> dict:
    value = tree.get(name)
    if not isinstance(value, dict):
        raise ConfigurationError(f"missing or malformed [{name}] section")
    return value


def _get(section: dict, section_name: str, key: str, kinds, default=None, required=True):
    if key not in section:
        if required:
            raise ConfigurationError(f"missing key '{key}' in [{section_name}]")
        return default
    value = section[key]
    if not isinstance(value, kinds) or isinstance(value, bool) and bool not in (
        kinds if isinstance(kinds, tuple) else (kinds,)
    ):
        raise ConfigurationError(
            f"key '{key}' in [{section_name}] has type {type(value).__name__}"
        )
    return value


def _coefficient(section: dict, section_name: str, key: str, mesh: Mesh, base: Path) -> "float | np.ndarray":
    """A scalar, or the per-cell values of a referenced snapshot file."""
    value = _get(section, section_name, key, (int, float, str))
    if isinstance(value, str):
        field = read_snapshot(base / value, mesh=mesh)
        return field.values
    return float(value)


def parse_config(path: "str | Path") -> ScenarioConfig:
    """Read, resolve, and validate a scenario configuration file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    try:
        tree = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"TOML parse error in {path}: {exc}") from exc
    return build_config(tree, base=path.parent, source=str(path))


def build_config(tree: dict, base: "Path | None" = None, source: str = "<dict>") -> ScenarioConfig:
    """Resolve a configuration tree (already parsed TOML) into a scenario."""
    base = base or Path(".")

    mesh_sec = _section(tree, "mesh")
    dimension = _get(mesh_sec, "mesh", "dimension", int)
    cells = _get(mesh_sec, "mesh", "cells", list)
    lengths = _get(mesh_sec, "mesh", "lengths", list)
    mesh = build_mesh(dimension, cells, lengths)

    time_sec = _section(tree, "time")
    time_grid = build_time_grid(
        _get(time_sec, "time", "horizon", (int, float)),
        _get(time_sec, "time", "steps", int),
    )

    rates_sec = _section(tree, "rates")
    rates = RateConstants(
        sigma=float(_get(rates_sec, "rates", "sigma", (int, float))),
        phi_e=float(_get(rates_sec, "rates", "phi_e", (int, float))),
        phi_r=float(_get(rates_sec, "rates", "phi_r", (int, float))),
    )

    waning_sec = _section(tree, "waning")
    gamma_raw = _get(waning_sec, "waning", "gamma", (int, float, list))
    if isinstance(gamma_raw, list):
        waning = WaningRate(np.asarray(gamma_raw, dtype=float))
    else:
        waning = WaningRate.constant(float(gamma_raw), time_grid.steps)

    diff_sec = _section(tree, "diffusion")
    diffusion = DiffusionSpec(
        kappa_s=_coefficient(diff_sec, "diffusion", "kappa_s", mesh, base),
        kappa_e=_coefficient(diff_sec, "diffusion", "kappa_e", mesh, base),
        kappa_i=_coefficient(diff_sec, "diffusion", "kappa_i", mesh, base),
        kappa_r=_coefficient(diff_sec, "diffusion", "kappa_r", mesh, base),
        kappa_lo=float(_get(diff_sec, "diffusion", "kappa_lo", (int, float))),
        kappa_hi=float(_get(diff_sec, "diffusion", "kappa_hi", (int, float))),
    )

    init_sec = _section(tree, "initial")
    initial_fields = []
    for key in ("s", "e", "i", "r"):
        coeff = _coefficient(init_sec, "initial", key, mesh, base)
        values = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.num_cells,)).copy()
        initial_fields.append(Field(mesh, values))
    initial = InitialData(*initial_fields)

    control_sec = _section(tree, "control")
    bounds = ControlBounds(
        u_i_max=_coefficient(control_sec, "control", "u_i_max", mesh, base),
        u_e_max=_coefficient(control_sec, "control", "u_e_max", mesh, base),
    )
    guess = _get(control_sec, "control", "initial_guess", str, default="half-max", required=False)
    if guess not in _GUESS_MODES:
        raise ConfigurationError(
            f"control.initial_guess must be one of {_GUESS_MODES}, got '{guess}'"
        )

    threshold_sec = _section(tree, "threshold")
    threshold = ThresholdTarget(lam=float(_get(threshold_sec, "threshold", "lambda", (int, float))))

    opt_sec = tree.get("optimizer", {})
    defaults = OptimizerOptions()
    optimizer = OptimizerOptions(
        max_iters=int(_get(opt_sec, "optimizer", "max_iters", int, defaults.max_iters, False)),
        vi_tolerance=float(
            _get(opt_sec, "optimizer", "vi_tolerance", (int, float), defaults.vi_tolerance, False)
        ),
        armijo_c=float(_get(opt_sec, "optimizer", "armijo_c", (int, float), defaults.armijo_c, False)),
        backtrack_factor=float(
            _get(opt_sec, "optimizer", "backtrack_factor", (int, float), defaults.backtrack_factor, False)
        ),
        initial_step=float(
            _get(opt_sec, "optimizer", "initial_step", (int, float), defaults.initial_step, False)
        ),
    )

    out_sec = tree.get("output", {})
    output_dir = _get(out_sec, "output", "directory", str, "out", False)
    snapshots = bool(_get(out_sec, "output", "snapshots", bool, False, False))
    seed = int(tree.get("seed", 0))

    bounds_u_i, bounds_u_e = bounds.u_i_max, bounds.u_e_max
    scenario = validate_scenario(
        mesh, time_grid, rates, waning, diffusion, initial, bounds, threshold
    )
    config_hash = _resolved_hash(
        mesh, time_grid, rates, waning, diffusion, initial,
        bounds_u_i, bounds_u_e, guess, threshold, optimizer, seed,
    )
    return ScenarioConfig(
        scenario=scenario,
        initial_guess=guess,
        optimizer=optimizer,
        output_dir=output_dir,
        snapshots=snapshots,
        seed=seed,
        config_hash=config_hash,
        source=source,
    )


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def _resolved_hash(mesh, time_grid, rates, waning, diffusion, initial,
                   bound_i, bound_e, guess, threshold, optimizer, seed) -> str:
    payload = {
        "mesh": [mesh.dimension, list(mesh.cells_per_axis), list(mesh.domain_lengths)],
        "time": [time_grid.horizon, time_grid.steps],
        "rates": [rates.sigma, rates.phi_e, rates.phi_r],
        "gamma": waning.per_step.tolist(),
        "kappa": [
            _jsonable(diffusion.kappa_s), _jsonable(diffusion.kappa_e),
            _jsonable(diffusion.kappa_i), _jsonable(diffusion.kappa_r),
            diffusion.kappa_lo, diffusion.kappa_hi,
        ],
        "initial": [f.values.tolist() for f in initial.fields()],
        "bounds": [_jsonable(bound_i), _jsonable(bound_e)],
        "guess": guess,
        "lambda": threshold.lam,
        "optimizer": [
            optimizer.max_iters, optimizer.vi_tolerance, optimizer.armijo_c,
            optimizer.backtrack_factor, optimizer.initial_step,
        ],
        "seed": seed,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def initial_controls(config: ScenarioConfig) -> ControlPair:
    """The configured control guess: zero, half the bounds, or the bounds."""
    scenario = config.scenario
    fraction = {"zero": 0.0, "half-max": 0.5, "max": 1.0}[config.initial_guess]
    if fraction == 0.0:
        return ControlPair.zeros(scenario.time.steps, scenario.num_cells, scenario.bounds)
    return ControlPair.at_fraction(
        scenario.time.steps, scenario.num_cells, scenario.bounds, fraction
    )
