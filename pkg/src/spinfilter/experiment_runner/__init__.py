"""Configuration, scenario execution and the ``spinfilter`` command line."""

from .config import (
    ConfigError,
    ExperimentConfig,
    OutputFormat,
    Scenario,
    build_config,
    load_config,
    load_profile,
    parse_config_text,
)
from .runner import output_paths, run
from .scenarios import plan_jobs, sample_deviation, trajectory_seed

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "OutputFormat",
    "Scenario",
    "build_config",
    "load_config",
    "load_profile",
    "output_paths",
    "parse_config_text",
    "plan_jobs",
    "run",
    "sample_deviation",
    "trajectory_seed",
]
