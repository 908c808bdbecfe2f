"""Monotonically convergent optimal control of time-dependent targets."""
__version__ = "0.1.0"

from ._jit import BACKEND
from .state import (
    ControlField,
    EigenSystem,
    Grid,
    QuantumState,
    TimeGrid,
    expectation_position,
    inner_product,
    occupations,
)
from .propagation import GridAtom, MaskFunction, StateTrajectory, TwoLevelSystem, propagate
from .targets import (
    Follower,
    LocalDensity,
    MovingDensity,
    Projector,
    TargetSpec,
    cosine_target,
    step_target,
    v_shape,
)
from .control import ControlParams, MemoryLimitError, OptimizationTrace, optimize
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiments import run_experiment, run_sweep, validate

__all__ = [
    "BACKEND",
    "ConfigError",
    "ControlField",
    "ControlParams",
    "EigenSystem",
    "ExperimentConfig",
    "Follower",
    "Grid",
    "GridAtom",
    "LocalDensity",
    "MaskFunction",
    "MemoryLimitError",
    "MovingDensity",
    "OptimizationTrace",
    "Projector",
    "QuantumState",
    "StateTrajectory",
    "TargetSpec",
    "TimeGrid",
    "TwoLevelSystem",
    "cosine_target",
    "expectation_position",
    "inner_product",
    "load_config",
    "occupations",
    "optimize",
    "parse_config",
    "propagate",
    "run_experiment",
    "run_sweep",
    "step_target",
    "v_shape",
    "validate",
]
