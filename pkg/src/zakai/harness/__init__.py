"""Configuration, orchestration and reporting of experiments."""

from .config import KINDS, ConfigError, RunConfig, defaults_for, dump_config, load_config
from .plots import emit_plots
from .reporting import RunReport, Table
from .runner import HypothesisFailure, RunAborted, run

__all__ = [
    "KINDS",
    "ConfigError",
    "RunConfig",
    "defaults_for",
    "dump_config",
    "load_config",
    "emit_plots",
    "RunReport",
    "Table",
    "HypothesisFailure",
    "RunAborted",
    "run",
]
