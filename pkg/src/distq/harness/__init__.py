"""Experiment configuration, Monte-Carlo evaluation, sweeps and the CLI."""

from .config import ExperimentConfig, config_from_dict, load_config
from .experiment import CSV_HEADER, ResultRow, emit_artifacts, read_rows, sweep
from .simulate import McResult, Scenario, run_monte_carlo

__all__ = [
    "ExperimentConfig",
    "config_from_dict",
    "load_config",
    "CSV_HEADER",
    "ResultRow",
    "emit_artifacts",
    "read_rows",
    "sweep",
    "McResult",
    "Scenario",
    "run_monte_carlo",
]
