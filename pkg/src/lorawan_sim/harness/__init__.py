from .config import ConfigInvalid, ScenarioConfig, load_config, parse_config, shipped_scenario
from .engine import RunArtifacts, Simulation, refeed, run

__all__ = [
    "ConfigInvalid",
    "RunArtifacts",
    "ScenarioConfig",
    "Simulation",
    "load_config",
    "parse_config",
    "refeed",
    "run",
    "shipped_scenario",
]
