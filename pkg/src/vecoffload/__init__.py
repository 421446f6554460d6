"""Twin-assisted vehicular task offloading: simulator, drift-plus-penalty objective and a MAPPO trainer."""

from .config import ConfigError, ScenarioConfig, load_config

__all__ = ["ConfigError", "ScenarioConfig", "load_config"]
__version__ = "0.1.0"
