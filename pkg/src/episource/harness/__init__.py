"""Experiment orchestration: configs, caching, pipelines, CLI."""

from .cache import StageCache, cache_key
from .config import (ExperimentConfig, builtin_config, load_config,
                     override, parse_config)
from .experiments import (run_benchmark, run_detectability, run_scaling,
                          run_timing, run_uncertain_t)

__all__ = [
    "StageCache", "cache_key", "ExperimentConfig", "builtin_config",
    "load_config", "override", "parse_config", "run_benchmark",
    "run_detectability", "run_scaling", "run_timing", "run_uncertain_t",
]
