"""Decentralized clearing of a joint peer-to-peer energy, reserve and carbon allowance market."""

from .coordinator import run
from .scenario import ScenarioConfig, load_scenario
from .validation import solve_centralized

__all__ = ["ScenarioConfig", "load_scenario", "run", "solve_centralized"]
__version__ = "0.1.0"
