"""Analysis and simulation tools for datacenter networks that mix static,
rotor and demand-aware circuit ports."""
from __future__ import annotations

__version__ = "0.1.0"
