"""Scenario simulation, metrics and baseline comparison."""

from .config import ChurnEvent, ConfigError, ScenarioConfig, config_from_dict, load_config
from .engine import HEADER_BYTES, RunResult, Simulator, run_baseline, run_scenario
from .metrics import (
    Comparison,
    MetricsReport,
    compare,
    load_reference_tables,
    total_power,
    total_time,
)

__all__ = [
    "ChurnEvent",
    "Comparison",
    "ConfigError",
    "HEADER_BYTES",
    "MetricsReport",
    "RunResult",
    "ScenarioConfig",
    "Simulator",
    "compare",
    "config_from_dict",
    "load_config",
    "load_reference_tables",
    "run_baseline",
    "run_scenario",
    "total_power",
    "total_time",
]
