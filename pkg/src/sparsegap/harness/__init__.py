"""Sweeps, persistence and the command-line interface."""

from .config import ConfigError, ExperimentConfig, default_config, load_config
from .experiments import ExperimentRecord, run_cell, run_experiment
from .report import emit_report, read_records_csv, write_records_csv

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentRecord", "default_config", "emit_report", "load_config",
    "read_records_csv", "run_cell", "run_experiment", "write_records_csv",
]
