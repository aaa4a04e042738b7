"""Event-driven safe and resilient control of a two-CAV lane change next to a human driver."""
from .config import ConfigError, ScenarioConfig, default_config, load_config_dict, parse_config
from .sim import RunSummary, TrajectoryLog, check_termination, compute_metrics, run_simulation

__all__ = [
    "ConfigError", "ScenarioConfig", "RunSummary", "TrajectoryLog", "check_termination",
    "compute_metrics", "default_config", "load_config_dict", "parse_config", "run_simulation",
]
__version__ = "0.1.0"
