"""Scenario configuration, execution, metrics, traces and the command line."""

from .config import ScenarioConfig, load_config, reference_config
from .runner import ScenarioResult, periodic_baseline_schedule, run_scenario

__all__ = ["ScenarioConfig", "ScenarioResult", "load_config", "periodic_baseline_schedule",
           "reference_config", "run_scenario"]
