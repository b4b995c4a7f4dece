"""Packet-level simulation of a mixed static/rotor/demand-aware network."""
from __future__ import annotations

from .config import Reassignment, SimConfig, TrafficPhase, config_from_dict, dump_config, load_config
from .engine import Simulator, SimulationError, run

__all__ = [
    "Reassignment",
    "SimConfig",
    "SimulationError",
    "Simulator",
    "TrafficPhase",
    "config_from_dict",
    "dump_config",
    "load_config",
    "run",
]
