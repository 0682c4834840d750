"""Spatial SEIRS reaction-diffusion solver with adjoint-based optimal control."""

from .errors import (
    ConfigurationError,
    EpictrlError,
    FormatError,
    ModelAssumptionError,
    NumericalError,
    PreconditionError,
    ValidationError,
)
from .mesh import (
    DiffusionOperator,
    Field,
    Mesh,
    TimeGrid,
    assemble_diffusion,
    build_mesh,
    build_time_grid,
    integrate,
    solve_implicit,
)
from .model import (
    ControlBounds,
    ControlPair,
    DiffusionSpec,
    InitialData,
    RateConstants,
    Scenario,
    ThresholdTarget,
    TransferFluxes,
    WaningRate,
    transfer_fluxes,
    validate_scenario,
)
from .forward import (
    EpidemicState,
    OperatorBank,
    Trajectory,
    continuous_dependence_probe,
    solve_forward,
    step,
    total_population,
)
from .delay import DelayedHistory, convergence_study, delay_lookup, solve_delay
from .tangent import (
    ControlVariation,
    TangentTrajectory,
    frechet_remainder_check,
    solve_tangent,
)
from .adjoint import (
    AdjointState,
    AdjointTrajectory,
    solve_adjoint,
    terminal_conditions,
    threshold_kink_cells,
)
from .optimize import (
    CostBreakdown,
    GradientPair,
    OptimizationReport,
    OptimizerOptions,
    evaluate_cost,
    fd_directional_derivative,
    project_controls,
    projected_gradient_descent,
    reduced_gradient,
    vi_residual,
)
from .config import ScenarioConfig, initial_controls, parse_config
from .output import read_snapshot, write_snapshot

__version__ = "0.1.0"
