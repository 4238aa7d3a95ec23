"""Delay-aware movable-antenna throughput maximization."""

from .channel import (ChannelVector, DomainError, channel_vector, f_coefficients,
                      gain_closed_form)
from .scenario import (ConfigError, ScenarioConfig, UserChannel, load_config,
                       sample_scenario, virtual_aoa)

__all__ = [
    "ChannelVector", "ConfigError", "DomainError", "ScenarioConfig", "UserChannel",
    "channel_vector", "f_coefficients", "gain_closed_form", "load_config",
    "sample_scenario", "virtual_aoa",
]
__version__ = "0.1.0"
