"""Sequential mean-field particle systems: simulation, entropy and fluctuation diagnostics."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    Config,
    ConfigError,
    DiffusionSpec,
    DriftSpec,
    InitialLaw,
    KernelSpec,
    TimeGrid,
    kernel_convolve_measure,
    kernel_eval,
    validate_config,
)
from .rng import RngContract, Tag  # noqa: E402
from .weights import WeightScheme, threshold_diagnostics, weights_for  # noqa: E402
from .particles import (  # noqa: E402
    SimulationError,
    TrajectoryStore,
    drift_mismatch,
    extend_particles,
    simulate_classical,
    simulate_iid_limit,
    simulate_sequential,
)
from .pde import CflError, Grid1D, MeanFieldSolution, solve_nfp  # noqa: E402

__all__ = [
    "__version__",
    "Config",
    "ConfigError",
    "DiffusionSpec",
    "DriftSpec",
    "InitialLaw",
    "KernelSpec",
    "TimeGrid",
    "kernel_convolve_measure",
    "kernel_eval",
    "validate_config",
    "RngContract",
    "Tag",
    "WeightScheme",
    "threshold_diagnostics",
    "weights_for",
    "SimulationError",
    "TrajectoryStore",
    "drift_mismatch",
    "extend_particles",
    "simulate_classical",
    "simulate_iid_limit",
    "simulate_sequential",
    "CflError",
    "Grid1D",
    "MeanFieldSolution",
    "solve_nfp",
]
