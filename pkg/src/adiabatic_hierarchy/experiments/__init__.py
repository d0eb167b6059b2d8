"""Experiment definitions, configuration, orchestration and the command-line interface."""
from .config import (ConfigError, ExperimentConfig, load_config, load_preset, parse_config, preset_names,
                     resolve_output_dir)
from .runner import (RunSummary, compare_hierarchy, loglog_slope, run_experiment, run_sweep,
                     summarize_outputs)

__all__ = [
    "ConfigError", "ExperimentConfig", "RunSummary", "compare_hierarchy", "load_config", "load_preset",
    "loglog_slope", "parse_config", "preset_names", "resolve_output_dir", "run_experiment", "run_sweep",
    "summarize_outputs",
]
