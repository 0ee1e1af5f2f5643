from .config import ConfigError, ExperimentConfig, dumps, load, loads
from .experiment import (
    COLUMNS,
    TrialMetrics,
    comm_trial,
    radar_trial,
    read_metrics,
    run_experiment,
    run_to_directory,
    write_metrics,
)
from .plots import emit_plots

__all__ = [
    "COLUMNS", "ConfigError", "ExperimentConfig", "TrialMetrics", "comm_trial", "dumps",
    "emit_plots", "load", "loads", "radar_trial", "read_metrics", "run_experiment",
    "run_to_directory", "write_metrics",
]
