"""Deterministic multi-robot simulation: truth, sensors, scenarios and the runner."""

from .config import ScenarioConfig, builtin_scenarios, load_config, parse_config
from .runner import RunArtifacts, run_scenario

__all__ = ["RunArtifacts", "ScenarioConfig", "builtin_scenarios", "load_config", "parse_config", "run_scenario"]
