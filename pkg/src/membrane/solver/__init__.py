"""Method-of-lines evolution of the membrane equation inside the cone."""

from .config import ConfigError, Profile, ScenarioConfig, load_config, parse_config
from .equation import Background, DegeneracyError, acceleration, decompose, operator
from .grid import (
    BlowupError,
    GridState,
    Stepper,
    exact_solution,
    initial_data,
    load_checkpoint,
    mms_forcing,
    rhs,
    save_checkpoint,
    step,
)

__all__ = [
    "Background",
    "BlowupError",
    "ConfigError",
    "DegeneracyError",
    "GridState",
    "Profile",
    "ScenarioConfig",
    "Stepper",
    "acceleration",
    "decompose",
    "exact_solution",
    "initial_data",
    "load_checkpoint",
    "load_config",
    "mms_forcing",
    "operator",
    "parse_config",
    "rhs",
    "save_checkpoint",
    "step",
]
