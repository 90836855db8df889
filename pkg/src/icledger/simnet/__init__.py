"""Deterministic simulated network and scenario runner."""

from .config import AdversarySpec, ConfigError, SimConfig
from .kernel import US, Event, Network, Simulator, rng_for, seconds_to_us, us_to_seconds
from .runner import SimulationTrace, run

__all__ = [
    "AdversarySpec",
    "ConfigError",
    "Event",
    "Network",
    "SimConfig",
    "SimulationTrace",
    "Simulator",
    "US",
    "rng_for",
    "run",
    "seconds_to_us",
    "us_to_seconds",
]
