"""Command-line driver for the four workflows.

    epictrl <simulate|optimize|gradcheck|convergence> --config <path>
            [--out <dir>] [--dump-adjoint] [--dt <override>] [--tau-list a,b,c]

Exit status: 0 on success, 2 on configuration/validation errors, 3 on
numerical failures. Failures also emit one machine-readable JSON record on
stderr. All artifacts are byte-deterministic for a fixed config and seed;
EPICTRL_THREADS caps internal parallelism (the solvers are single-threaded,
so any positive cap is honored as-is).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adjoint import solve_adjoint
from .config import ScenarioConfig, build_config, initial_controls, parse_config
from .delay import convergence_study
from .errors import (
    ConfigurationError,
    EpictrlError,
    FormatError,
    NumericalError,
    PreconditionError,
    ValidationError,
)
from .adjoint import AdjointState
from .forward import Trajectory, solve_forward
from .mesh import Field, TimeGrid
from .model import (
    ControlBounds,
    ControlPair,
    DiffusionSpec,
    Scenario,
    WaningRate,
    validate_scenario,
)
from .norms import l2q_inner_pair
from .optimize import (
    fd_directional_derivative,
    projected_gradient_descent,
    reduced_gradient,
)
from .output import (
    write_metadata,
    write_spacetime,
    write_state_snapshot,
    write_table,
)
from .tangent import ControlVariation, frechet_remainder_check

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

REMAINDER_EPSILONS = [1e-1, 1e-2, 1e-3, 1e-4]


def _thread_cap() -> int:
    raw = os.environ.get("EPICTRL_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        return 1
    return max(1, min(cap, 1))  # solvers are single-threaded


def _metadata(config: ScenarioConfig, command: str) -> dict:
    scenario = config.scenario
    return {
        "command": command,
        "config_hash": config.config_hash,
        "package_version": __version__,
        "seed": config.seed,
        "dimension": scenario.mesh.dimension,
        "cells": list(scenario.mesh.cells_per_axis),
        "lengths": list(scenario.mesh.domain_lengths),
        "horizon": scenario.time.horizon,
        "steps": scenario.time.steps,
        "dt": scenario.time.dt,
        "scheme": "gauss-seidel-backward-euler",
        "lin_solver": "banded" if scenario.mesh.dimension == 1 else "sparse_lu",
        "lin_solver_kind": "direct",
        "threads": _thread_cap(),
    }


def _csv_header(config: ScenarioConfig, command: str) -> dict:
    return {"config_hash": config.config_hash, "command": command, "seed": config.seed}


def _write_timeseries(path: Path, trajectory: Trajectory, header: dict) -> None:
    scenario = trajectory.scenario
    vol = scenario.mesh.cell_volume
    times = scenario.time.times()
    sums = vol * trajectory.states.sum(axis=2)
    mins = trajectory.states.min(axis=2)
    maxs = trajectory.states.max(axis=2)
    total = sums.sum(axis=1)
    rows = (
        (
            times[k], sums[k, 0], sums[k, 1], sums[k, 2], sums[k, 3], total[k],
            mins[k, 0], mins[k, 1], mins[k, 2], mins[k, 3],
            maxs[k, 0], maxs[k, 1], maxs[k, 2], maxs[k, 3],
        )
        for k in range(times.size)
    )
    columns = [
        "t", "int_s", "int_e", "int_i", "int_r", "total",
        "min_s", "min_e", "min_i", "min_r",
        "max_s", "max_e", "max_i", "max_r",
    ]
    write_table(path, columns, rows, metadata=header)


def run_simulate(config: ScenarioConfig, out_dir: Path, dump_adjoint: bool) -> None:
    scenario = config.scenario
    controls = initial_controls(config)
    trajectory = solve_forward(scenario, controls)
    header = _csv_header(config, "simulate")
    _write_timeseries(out_dir / "timeseries.csv", trajectory, header)
    if config.snapshots:
        write_state_snapshot(trajectory.state(0), out_dir / "snapshot_initial.csv", 0, header)
        write_state_snapshot(
            trajectory.terminal(), out_dir / "snapshot_terminal.csv",
            scenario.time.steps, header,
        )
    if dump_adjoint:
        _dump_adjoint(config, out_dir, trajectory, controls, header)
    meta = _metadata(config, "simulate")
    meta["control_guess"] = config.initial_guess
    write_metadata(out_dir / "metadata.json", meta)


def _dump_adjoint(config, out_dir, trajectory, controls, header) -> None:
    adjoint = solve_adjoint(trajectory, controls, config.scenario.threshold.lam)
    steps = config.scenario.time.steps
    mesh = config.scenario.mesh
    for label, level in (("terminal", steps), ("initial", 0)):
        state = AdjointState(*(Field(mesh, row) for row in adjoint.states[level]))
        write_state_snapshot(state, out_dir / f"adjoint_{label}.csv", level, header)


def run_optimize(config: ScenarioConfig, out_dir: Path, dump_adjoint: bool) -> None:
    scenario = config.scenario
    start = initial_controls(config)
    report = projected_gradient_descent(scenario, start, config.optimizer)
    header = _csv_header(config, "optimize")
    write_table(
        out_dir / "iterations.csv",
        ["iteration", "cost", "terminal_term", "control_term", "vi_residual",
         "step_length", "backtracks"],
        (
            (row.index, row.cost, row.terminal_term, row.control_term,
             row.vi_residual, row.step_length, row.backtracks)
            for row in report.iterations
        ),
        metadata=header,
    )
    final = report.final_controls
    write_spacetime(final.u_i, out_dir / "control_u_i.csv", metadata=header)
    write_spacetime(final.u_e, out_dir / "control_u_e.csv", metadata=header)
    trajectory = solve_forward(scenario, final)
    _write_timeseries(out_dir / "timeseries.csv", trajectory, header)
    if dump_adjoint:
        _dump_adjoint(config, out_dir, trajectory, final, header)
    meta = _metadata(config, "optimize")
    meta.update(
        {
            "reason": report.reason,
            "iterations": len(report.iterations),
            "final_cost": report.final_cost,
            "final_residual": report.final_residual,
            "fixed_point_gap": report.fixed_point_gap,
            "forward_solves": report.forward_solves,
            "adjoint_solves": report.adjoint_solves,
            "vi_tolerance": config.optimizer.vi_tolerance,
        }
    )
    write_metadata(out_dir / "metadata.json", meta)


def _refined(scenario: Scenario) -> Scenario:
    """The same scenario with every time step halved."""
    time = TimeGrid(scenario.time.horizon, scenario.time.steps * 2)
    waning = WaningRate(np.repeat(scenario.waning.per_step, 2))

    def refine_coeff(coeff):
        if isinstance(coeff, np.ndarray) and coeff.ndim == 2:
            return np.repeat(coeff, 2, axis=0)
        return coeff

    diffusion = DiffusionSpec(
        kappa_s=refine_coeff(scenario.diffusion.kappa_s),
        kappa_e=refine_coeff(scenario.diffusion.kappa_e),
        kappa_i=refine_coeff(scenario.diffusion.kappa_i),
        kappa_r=refine_coeff(scenario.diffusion.kappa_r),
        kappa_lo=scenario.diffusion.kappa_lo,
        kappa_hi=scenario.diffusion.kappa_hi,
    )
    bounds = ControlBounds(
        u_i_max=refine_coeff(scenario.bounds.u_i_max),
        u_e_max=refine_coeff(scenario.bounds.u_e_max),
    )
    return validate_scenario(
        scenario.mesh, time, scenario.rates, waning, diffusion,
        scenario.initial, bounds, scenario.threshold,
    )


def _adjoint_vs_fd(scenario: Scenario, controls: ControlPair, direction: ControlVariation):
    trajectory = solve_forward(scenario, controls)
    adjoint = solve_adjoint(trajectory, controls, scenario.threshold.lam)
    gradient = reduced_gradient(trajectory, adjoint, controls)
    inner = l2q_inner_pair(
        scenario.mesh, scenario.time.dt,
        (gradient.g_i, gradient.g_e), (direction.h_i, direction.h_e),
    )
    fd = fd_directional_derivative(scenario, controls, direction, 1e-5)
    rel = abs(inner - fd) / max(abs(fd), 1e-300)
    return inner, fd, rel


def run_gradcheck(config: ScenarioConfig, out_dir: Path, tangent_mode: bool) -> None:
    scenario = config.scenario
    controls = initial_controls(config)
    rng = np.random.default_rng(config.seed)
    shape = scenario.control_shape()
    upper_i, upper_e = scenario.bounds.upper_arrays(*shape)
    direction = ControlVariation(
        rng.uniform(-1.0, 1.0, shape) * upper_i / 4.0,
        rng.uniform(-1.0, 1.0, shape) * upper_e / 4.0,
    )
    header = _csv_header(config, "gradcheck")

    if tangent_mode:
        table = frechet_remainder_check(scenario, controls, direction, REMAINDER_EPSILONS)
        write_table(
            out_dir / "remainder_table.csv",
            ["epsilon", "remainder", "half_remainder", "ratio"],
            table.rows(),
            metadata=header,
        )
    else:
        inner, fd, rel = _adjoint_vs_fd(scenario, controls, direction)
        fine = _refined(scenario)
        fine_controls = ControlPair(
            np.repeat(controls.u_i, 2, axis=0), np.repeat(controls.u_e, 2, axis=0),
            fine.bounds,
        )
        fine_direction = ControlVariation(
            np.repeat(direction.h_i, 2, axis=0), np.repeat(direction.h_e, 2, axis=0)
        )
        inner2, fd2, rel2 = _adjoint_vs_fd(fine, fine_controls, fine_direction)
        write_table(
            out_dir / "gradient_check.csv",
            ["dt", "adjoint_derivative", "fd_derivative", "rel_error"],
            [
                (scenario.time.dt, inner, fd, rel),
                (fine.time.dt, inner2, fd2, rel2),
            ],
            metadata=header,
        )
    meta = _metadata(config, "gradcheck")
    meta["mode"] = "tangent-remainder" if tangent_mode else "adjoint-vs-fd"
    write_metadata(out_dir / "metadata.json", meta)


def run_convergence(config: ScenarioConfig, out_dir: Path, tau_list: "list[float] | None") -> None:
    scenario = config.scenario
    horizon = scenario.time.horizon
    taus = tau_list or [horizon / 4, horizon / 8, horizon / 16, horizon / 32]
    controls = initial_controls(config)
    study = convergence_study(scenario, controls, taus)
    header = _csv_header(config, "convergence")
    write_table(
        out_dir / "delay_error.csv",
        ["tau", "trajectory_error", "conservation_defect", "order"],
        study.rows(),
        metadata=header,
    )
    meta = _metadata(config, "convergence")
    meta["tau_list"] = [float(t) for t in study.taus]
    write_metadata(out_dir / "metadata.json", meta)


def _load_config(args) -> ScenarioConfig:
    path = Path(args.config)
    if args.dt is None:
        return parse_config(path)
    try:
        tree = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"TOML parse error in {path}: {exc}") from exc
    time_sec = tree.get("time")
    if not isinstance(time_sec, dict) or "horizon" not in time_sec:
        raise ConfigurationError("missing [time] section with a horizon")
    horizon = float(time_sec["horizon"])
    steps = int(round(horizon / args.dt))
    if steps < 1 or abs(horizon / steps - args.dt) > 1e-9 * args.dt:
        raise ConfigurationError(
            f"--dt {args.dt} does not divide the horizon {horizon} evenly"
        )
    gamma = tree.get("waning", {}).get("gamma")
    if isinstance(gamma, list) and len(gamma) != steps:
        raise ConfigurationError(
            "--dt cannot override a config whose gamma is a per-step list"
        )
    time_sec["steps"] = steps
    return build_config(tree, base=path.parent, source=str(path))


def _parse_tau_list(raw: "str | None") -> "list[float] | None":
    if raw is None:
        return None
    try:
        taus = [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"malformed --tau-list '{raw}': {exc}") from exc
    if not taus:
        raise ConfigurationError("--tau-list is empty")
    return taus


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epictrl",
        description="Spatial SEIRS epidemic solver with adjoint-based optimal control",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "run the forward model and emit the population time series"),
        ("optimize", "run projected gradient descent on the transmission controls"),
        ("gradcheck", "verify gradients against finite differences or the tangent"),
        ("convergence", "measure the delay-scheme convergence to the forward solver"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="scenario TOML file")
        cmd.add_argument("--out", default=None, help="output directory (overrides config)")
        cmd.add_argument("--dump-adjoint", action="store_true", help="dump costate snapshots")
        cmd.add_argument("--dt", type=float, default=None, help="override the time step")
        if name == "convergence":
            cmd.add_argument("--tau-list", default=None, help="comma-separated shifts")
        if name == "gradcheck":
            cmd.add_argument(
                "--tangent", action="store_true",
                help="emit the second-order remainder table instead",
            )
    return parser


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        out_dir = Path(args.out) if args.out else Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            run_simulate(config, out_dir, args.dump_adjoint)
        elif args.command == "optimize":
            run_optimize(config, out_dir, args.dump_adjoint)
        elif args.command == "gradcheck":
            run_gradcheck(config, out_dir, args.tangent)
        else:
            run_convergence(config, out_dir, _parse_tau_list(args.tau_list))
    except NumericalError as exc:
        _report_error(exc)
        return 3
    except (ValidationError, ConfigurationError, FormatError, PreconditionError) as exc:
        _report_error(exc)
        return 2
    return 0


def _report_error(exc: EpictrlError) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    assumption = getattr(exc, "assumption", None)
    if assumption:
        record["assumption"] = assumption
    residual = getattr(exc, "residual", None)
    if residual is not None:
        record["residual"] = residual
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
