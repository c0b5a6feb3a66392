"""Configuration files, experiment runner and command-line interface."""

from .config import AnalyticConfig, ExperimentConfig, load_file, load_preset, preset_names
from .runner import compare_methods, run_analytic, run_experiment
