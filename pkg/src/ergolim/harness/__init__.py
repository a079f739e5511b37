"""Config parsing, replica-parallel execution, pipelines, reports and the CLI."""
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .parallel import replica_map
from .pipelines import run_experiment
from .report import Report

__all__ = ["ConfigError", "ExperimentConfig", "Report", "load_config", "parse_config",
           "replica_map", "run_experiment"]
