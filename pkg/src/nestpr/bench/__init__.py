"""Config-driven benchmark harness and CLI."""

from .config import ConfigError, ExperimentConfig, load_config, shipped_configs
from .harness import converge_beta, run_sweep, synthesize_dataset

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "shipped_configs",
           "converge_beta", "run_sweep", "synthesize_dataset"]
