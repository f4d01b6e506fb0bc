"""Experiment orchestration: configuration, scenarios, twin runs and reports."""

from .config import ConfigError, ExperimentConfig, default_config, parse_config, parse_text
from .twin import TwinReport, calibrate, measure_frequency, run_single, run_twin, sweep_epsilon, with_constants

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "TwinReport",
    "calibrate",
    "default_config",
    "measure_frequency",
    "parse_config",
    "parse_text",
    "run_single",
    "run_twin",
    "sweep_epsilon",
    "with_constants",
]
