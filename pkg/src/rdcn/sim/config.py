"""Run configuration for the packet simulator, loadable from YAML."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

MTU = 1500


@dataclass(frozen=True)
class TrafficPhase:
    """From ``start`` on, skewed traffic makes up ``share`` of the load."""

    start: float
    share: float


@dataclass(frozen=True)
class Reassignment:
    """Convert one port between the demand-aware and rotor classes at the
    first rotor slot boundary at or after ``time``."""

    time: float
    from_class: str
    to_class: str

    def __post_init__(self):
        ok = {("da", "rotor"), ("rotor", "da")}
        if (self.from_class, self.to_class) not in ok:
            raise ValueError("only demand-aware <-> rotor reassignments are allowed")


@dataclass(frozen=True)
class SimConfig:
    # topology
    n: int = 8
    k_s: int = 2
    k_r: int = 1
    k_d: int = 1
    # link and timing (desk scale: 100 Mb/s links, ~1 ms rotor slots)
    r: float = 100e6
    delta: float = 0.96e-3
    R_r: float = 0.96e-3 / 54.56
    R_d: float = 1e-3
    da_period: float = 20e-3  # circuit hold of a demand-aware configuration
    da_threshold: int = 50_000  # bytes of remaining demand to earn a DA link
    prop: float = 500e-9
    control_latency: float = 20e-6
    queue_packets: int = 50
    mtu: int = MTU
    # scheduling
    scheduler: str = "llb"  # "llb" | "rlb"
    d_off: float | None = None  # bytes; default C/k
    offload: bool = True
    # classification
    ss_da_threshold: int = 100_000  # desk scale; full-rate runs use 1 MB
    bulk_threshold: int | None = None  # skewed flows at or above go to the rotor (RLB baseline)
    info_delay: int = 0
    error_rate: float = 0.0
    flowlet: float = float("inf")
    # traffic
    load: float = 0.4
    share: float = 0.7
    phases: tuple[TrafficPhase, ...] = ()
    cdf: str = "datamining"
    cdf_max: float | None = 500_000
    uniform_bytes: int = 15_000  # ten packets; full-size matrices take too long at desk rates
    duration: float = 0.1
    drain: float = 0.0  # extra simulated time after arrivals stop
    warmup: float = 0.0
    seed: int = 0
    # transports
    ss_initial_window: int = 8
    da_initial_window: int = 10
    da_rto: float = 2e-3
    da_max_window: int = 8  # receive window cap in packets (a few bandwidth-delay products at desk scale)
    # dynamic partitioning
    reassignments: tuple[Reassignment, ...] = ()
    # metrics
    goodput_window: float = 10e-3
    trace_events: bool = False

    def __post_init__(self):
        if min(self.k_s, self.k_r, self.k_d) < 0 or self.k_s < 1:
            raise ValueError("need k_s >= 1 and non-negative port counts")
        if self.scheduler not in ("llb", "rlb"):
            raise ValueError("scheduler must be 'llb' or 'rlb'")
        if self.delta <= 0 or self.R_r < 0 or self.r <= 0:
            raise ValueError("rates and slot times must be positive")
        if not 0 < self.load:
            raise ValueError("load must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for p in self.phases:
            if not 0.0 <= p.share <= 1.0:
                raise ValueError("phase share must lie in [0, 1]")

    @property
    def k(self) -> int:
        return self.k_s + self.k_r + self.k_d

    @property
    def hosts(self) -> int:
        return self.n * self.k

    @property
    def slot(self) -> float:
        return self.delta + self.R_r

    @property
    def C_bytes(self) -> float:
        return self.r * self.delta / 8.0

    @property
    def eta(self) -> float:
        return self.delta / self.slot

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["phases"] = [asdict(p) for p in self.phases]
        d["reassignments"] = [asdict(p) for p in self.reassignments]
        return d


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    """Accept a flat mapping or one grouped under topology/params/traffic/
    transports/metrics sections."""
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict) and key in ("topology", "params", "traffic", "transports", "metrics", "scheduling"):
            flat.update(value)
        else:
            flat[key] = value
    known = {f.name for f in fields(SimConfig)}
    unknown = set(flat) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "phases" in flat:
        flat["phases"] = tuple(TrafficPhase(**p) for p in flat["phases"] or ())
    if "reassignments" in flat:
        flat["reassignments"] = tuple(Reassignment(**p) for p in flat["reassignments"] or ())
    for key in ("r", "delta", "R_r", "R_d", "da_period", "prop", "control_latency", "load", "share", "duration", "drain", "warmup", "da_rto", "goodput_window", "flowlet", "error_rate"):
        if key in flat and flat[key] is not None:
            flat[key] = float(flat[key])
    return SimConfig(**flat)


def load_config(path: str | Path) -> SimConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    return config_from_dict(data)


def dump_config(cfg: SimConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
