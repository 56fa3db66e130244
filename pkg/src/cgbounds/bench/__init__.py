"""Experiment harness: configuration, scenario and sweep pipelines, CLI."""

from .config import Config, load_config, parse_config
from .pipeline import ScenarioResult, SweepAborted, SweepResult, run_scenario, sweep_epsilon

__all__ = ["Config", "ScenarioResult", "SweepAborted", "SweepResult", "load_config", "parse_config",
           "run_scenario", "sweep_epsilon"]
