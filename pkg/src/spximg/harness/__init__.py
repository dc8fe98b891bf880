"""Experiment configuration, seeded pipelines and the command-line front end."""
from .config import ExperimentConfig, load_config, parse_config
from .pipeline import ArtifactWriter, run, run_compare, run_sweep, simulate

__all__ = ["ArtifactWriter", "ExperimentConfig", "load_config", "parse_config", "run", "run_compare", "run_sweep",
           "simulate"]
