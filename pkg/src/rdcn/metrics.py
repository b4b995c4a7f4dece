"""Run metrics: goodput series, FCT percentiles, sequence gaps and
retransmission rates, plus their CSV forms."""
from __future__ import annotations

import csv
import hashlib
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SMALL_MAX = 100_000
LARGE_MIN = 100_000_000
PROTOCOLS = ("SS", "ROTOR", "DA")


@dataclass(frozen=True)
class FctRecord:
    flow: int
    size: int
    cls: str
    tag: str
    arrival: float
    completion: float

    @property
    def fct(self) -> float:
        return self.completion - self.arrival


@dataclass(frozen=True)
class SizeBucket:
    name: str
    lo: float  # exclusive, except for the first bucket
    hi: float  # inclusive
    q: float  # percentile reported (0..100)

    def contains(self, size: float) -> bool:
        return self.lo < size <= self.hi


DEFAULT_BUCKETS = (
    SizeBucket("small", -np.inf, SMALL_MAX, 99.0),
    SizeBucket("medium", SMALL_MAX, LARGE_MIN - 1e-9, 99.0),
    SizeBucket("large", LARGE_MIN - 1e-9, np.inf, 50.0),
)


def percentile(values: Sequence[float], q: float) -> float:
    """Linear interpolation between closest ranks."""
    if len(values) == 0:
        raise ValueError("percentile of an empty sample")
    return float(np.percentile(np.asarray(values, dtype=float), q, method="linear"))


def fct_percentiles(records: Iterable[FctRecord], buckets: Sequence[SizeBucket] = DEFAULT_BUCKETS) -> dict[str, float | None]:
    """FCT percentile per size bucket; a bucket without flows maps to None."""
    recs = list(records)
    out: dict[str, float | None] = {}
    for b in buckets:
        vals = [r.fct for r in recs if b.contains(r.size)]
        out[b.name] = percentile(vals, b.q) if vals else None
    return out


def ideal_fct(size: int, r: float, hops: int, prop: float, mtu: int = 1500) -> float:
    """Serialization at rate r plus store-and-forward of one packet per extra
    hop and propagation on every link."""
    first = min(size, mtu)
    return 8.0 * size / r + hops * prop + max(hops - 1, 0) * 8.0 * first / r


def sequence_deltas(arrivals: Sequence[int]) -> list[int]:
    """Per-packet (received - expected) where expected is one past the
    highest sequence number seen so far in the flow."""
    out = []
    top = -1
    for s in arrivals:
        out.append(s - (top + 1))
        top = max(top, s)
    return out


def sequence_gap_histogram(logs: Iterable[Sequence[int]]) -> Counter:
    hist: Counter = Counter()
    for arr in logs:
        hist.update(sequence_deltas(arr))
    return hist


def gap_summary(hist: Mapping[int, int]) -> dict[str, float]:
    """Fractions of arrivals with negative, zero and positive gaps."""
    total = sum(hist.values())
    if total == 0:
        return {"neg": 0.0, "zero": 0.0, "pos": 0.0, "count": 0}
    neg = sum(c for d, c in hist.items() if d < 0)
    pos = sum(c for d, c in hist.items() if d > 0)
    return {"neg": neg / total, "zero": hist.get(0, 0) / total, "pos": pos / total, "count": total}


def windowed_sum(times: Sequence[float], values: Sequence[float], window: float, end: float) -> np.ndarray:
    bins = max(1, int(np.ceil(end / window - 1e-12)))
    out = np.zeros(bins)
    if len(times):
        idx = np.minimum((np.asarray(times) / window).astype(int), bins - 1)
        np.add.at(out, idx, np.asarray(values, dtype=float))
    return out


@dataclass
class MetricsBundle:
    window: float
    end: float
    goodput_bits: np.ndarray  # first-delivery bits per window
    offered_bits: np.ndarray  # bits of flows arriving per window
    normalized_goodput: float
    fct: list[FctRecord]
    seq_gaps: Counter
    retx: dict[str, np.ndarray]  # retransmitted packets per window
    sent: dict[str, np.ndarray]  # transmitted packets per window (incl. retransmissions)
    losses: dict[str, np.ndarray]  # drops per window, i.e. retransmissions by the time of their cause
    counters: dict[str, int]
    reconfigs: list[tuple[float, float, str]] = field(default_factory=list)  # (start, end, kind)
    violations: list[str] = field(default_factory=list)
    events: list[tuple] = field(default_factory=list)  # optional debugging trace

    @property
    def goodput(self) -> np.ndarray:
        return self.goodput_bits / self.window

    @property
    def window_starts(self) -> np.ndarray:
        return np.arange(len(self.goodput_bits)) * self.window

    def retx_rate(self, proto: str) -> np.ndarray:
        sent = self.sent[proto]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(sent > 0, self.retx[proto] / np.maximum(sent, 1), 0.0)

    def goodput_between(self, t0: float, t1: float) -> float:
        """Mean goodput (bits/s) over the whole windows inside [t0, t1)."""
        s = self.window_starts
        sel = (s >= t0 - 1e-12) & (s + self.window <= t1 + 1e-12)
        if not sel.any():
            raise ValueError("no complete window in the interval")
        return float(self.goodput_bits[sel].sum() / (sel.sum() * self.window))

    def spikes(self, threshold: int, series: str = "losses") -> list[float]:
        """Start times of windows whose summed count reaches ``threshold``."""
        data = self.losses if series == "losses" else self.retx
        tot = sum(data[p] for p in PROTOCOLS)
        return [float(t) for t, v in zip(self.window_starts, tot) if v >= threshold]

    def in_reconfig(self, t0: float, t1: float, slack: float = 0.0) -> bool:
        """Whether [t0, t1) overlaps any reconfiguration window (extended by slack)."""
        return any(t0 < b + slack and a < t1 for a, b, _ in self.reconfigs)

    @property
    def conserved(self) -> bool:
        c = self.counters
        return c["injected"] == c["delivered"] + c["dropped"] + c["in_flight"]

    @property
    def in_order_fraction(self) -> float:
        return gap_summary(self.seq_gaps)["zero"]

    # --- CSV ---------------------------------------------------------------

    def tables(self) -> dict[str, str]:
        out = {}
        rows = [["window_start_s", "goodput_bps", "offered_bps"]]
        for t, g, o in zip(self.window_starts, self.goodput_bits, self.offered_bits):
            rows.append([repr(float(t)), repr(float(g / self.window)), repr(float(o / self.window))])
        out["goodput.csv"] = _csv(rows)
        rows = [["flow", "size_bytes", "class", "tag", "arrival_s", "completion_s", "fct_s"]]
        for r in self.fct:
            rows.append([r.flow, r.size, r.cls, r.tag, repr(r.arrival), repr(r.completion), repr(r.fct)])
        out["fct.csv"] = _csv(rows)
        rows = [["delta", "count"]] + [[d, self.seq_gaps[d]] for d in sorted(self.seq_gaps)]
        out["seq_gaps.csv"] = _csv(rows)
        rows = [["window_start_s", "protocol", "sent", "retransmitted", "rate", "lost"]]
        for p in PROTOCOLS:
            rate = self.retx_rate(p)
            for i, t in enumerate(self.window_starts):
                rows.append([repr(float(t)), p, int(self.sent[p][i]), int(self.retx[p][i]), repr(float(rate[i])), int(self.losses[p][i])])
        out["retransmissions.csv"] = _csv(rows)
        rows = [["name", "value"], ["normalized_goodput", repr(self.normalized_goodput)]]
        rows += [[k, self.counters[k]] for k in sorted(self.counters)]
        out["summary.csv"] = _csv(rows)
        rows = [["start_s", "end_s", "kind"]] + [[repr(a), repr(b), k] for a, b, k in self.reconfigs]
        out["reconfigs.csv"] = _csv(rows)
        if self.events:
            rows = [["time_s", "event", "flow", "seq", "class", "from_rack", "to_rack", "label", "info"]]
            rows += [[repr(e[0])] + list(e[1:]) for e in self.events]
            out["events.csv"] = _csv(rows)
        return out

    def write(self, directory: str | Path) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in self.tables().items():
            p = d / name
            p.write_text(text)
            paths.append(p)
        return paths

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, text in sorted(self.tables().items()):
            h.update(name.encode())
            h.update(text.encode())
        return h.hexdigest()


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()
