"""Rotor matchings: n - 1 cyclic shifts cycled by every rotor port, each port
running the same sequence under its own time offset."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property

from .core import SystemParams


def rotor_matchings(n: int) -> list[tuple[int, ...]]:
    """Matching s - 1 (s = 1..n-1) sends ToR i to (i + s) mod n."""
    if n < 2:
        raise ValueError("need at least two ToRs")
    return [tuple((i + s) % n for i in range(n)) for s in range(1, n)]


def port_shift(j: int, k_r: int, n: int) -> int:
    return (j * (n - 1)) // k_r


def active_matching(j: int, t: int, k_r: int, n: int) -> int:
    """Index (0-based, shift = index + 1) of the matching on rotor port j
    during global slot t."""
    if not 0 <= j < k_r:
        raise ValueError(f"port {j} out of range for k_r={k_r}")
    return (t + port_shift(j, k_r, n)) % (n - 1)


def slot_timing(params: SystemParams) -> tuple[float, float, float]:
    return params.delta, params.R_r, params.eta


@dataclass(frozen=True)
class RotorSchedule:
    n: int
    k_r: int
    delta: float = 1.0
    R_r: float = 0.0

    def __post_init__(self):
        if self.n < 2 or self.k_r < 0:
            raise ValueError("invalid rotor schedule dimensions")

    @cached_property
    def matchings(self) -> list[tuple[int, ...]]:
        return rotor_matchings(self.n)

    @property
    def cycle(self) -> int:
        return self.n - 1

    @property
    def slot_period(self) -> float:
        return self.delta + self.R_r

    @property
    def port_shifts(self) -> list[int]:
        return [port_shift(j, self.k_r, self.n) for j in range(self.k_r)]

    def shift(self, port: int, t: int) -> int:
        """Cyclic shift s in 1..n-1 active on ``port`` in slot t."""
        return active_matching(port, t, self.k_r, self.n) + 1

    def peer(self, port: int, t: int, src: int) -> int:
        return (src + self.shift(port, t)) % self.n

    def label(self, t: int) -> int:
        """Slot label carried by rotor packets sent in slot t (1..n-1)."""
        return t % (self.n - 1) + 1

    def label_peer(self, port: int, label: int, src: int) -> int:
        return self.peer(port, label - 1, src)

    def ports_to(self, t: int, src: int, dst: int) -> list[int]:
        return [j for j in range(self.k_r) if self.peer(j, t, src) == dst]

    def slot_at(self, time: float) -> int:
        return int(math.floor(time / self.slot_period))

    def dump_csv(self, slots: int) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "port", "src", "dst"])
        for t in range(slots):
            for j in range(self.k_r):
                for i in range(self.n):
                    w.writerow([t, j, i, self.peer(j, t, i)])
        return buf.getvalue()


def max_visit_gap(n: int, k_r: int) -> int:
    """Longest run of slots any ordered pair waits between rotor connections,
    measured over one full cycle of the schedule."""
    sched = RotorSchedule(n, k_r)
    worst = 0
    for s in range(1, n):
        active = [t for t in range(n - 1) if any(sched.shift(j, t) == s for j in range(k_r))]
        gaps = [(active[(i + 1) % len(active)] - active[i]) % (n - 1) or (n - 1) for i in range(len(active))]
        worst = max(worst, max(gaps))
    return worst
