"""Experiment harness: configs, lambda sweeps, CSV/SVG output and the ``ds`` CLI."""

from .config import ExperimentConfig, dump_config, load_config, parse_config
from .experiment import ExperimentResult, SweepRow, build_guided, run_sweep, run_training_pipeline, sweep_lambda
from .modelspec import ConfigError, load_predictor, parse_analytic_spec

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "SweepRow",
    "build_guided",
    "dump_config",
    "load_config",
    "load_predictor",
    "parse_analytic_spec",
    "parse_config",
    "run_sweep",
    "run_training_pipeline",
    "sweep_lambda",
]
