"""Workload synthesis: Poisson skewed flows mixed with repeated all-to-all
matrices, flow classification and flowlet splitting.

Hosts have global ids ``rack * k + j``. Sizes are in bytes, times in seconds,
link rates in bits/s.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNIFORM_FLOW_BYTES = 112_500
SS_DA_THRESHOLD = 1_000_000


class Tag(str, Enum):
    UNIFORM = "uniform"
    SKEWED = "skewed"


class FlowClass(str, Enum):
    SS = "SS"
    DA = "DA"
    ROTOR = "ROTOR"


@dataclass(frozen=True)
class Flow:
    id: int
    src: int
    dst: int
    size: int
    arrival: float
    tag: Tag = Tag.SKEWED
    cls: FlowClass | None = None
    parent: int | None = None  # id of the flow this one was cut from

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("flow size must be positive")
        if self.src == self.dst:
            raise ValueError("flow source and destination must differ")


class FlowSizeCdf:
    """Piecewise-linear flow size CDF. A first breakpoint with positive
    probability is an atom at that size."""

    def __init__(self, breakpoints: Sequence[tuple[float, float]], name: str = ""):
        pts = [(float(s), float(p)) for s, p in breakpoints]
        if not pts:
            raise ValueError("empty CDF")
        sizes = np.array([s for s, _ in pts])
        probs = np.array([p for _, p in pts])
        if np.any(np.diff(sizes) < 0) or np.any(np.diff(probs) < 0):
            raise ValueError("CDF breakpoints must be non-decreasing in size and probability")
        if not math.isclose(probs[-1], 1.0, abs_tol=1e-12) or probs[0] < 0 or sizes[0] <= 0:
            raise ValueError("CDF must end at probability 1 with positive sizes")
        probs[-1] = 1.0
        self.sizes, self.probs, self.name = sizes, probs, name

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.sizes.tolist(), self.probs.tolist()))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        # right-continuous: the last breakpoint at or below x decides
        idx = np.searchsorted(self.sizes, x, side="right") - 1
        out = np.zeros_like(x)
        inside = (idx >= 0) & (idx < len(self.sizes) - 1)
        i = idx[inside]
        s0, s1 = self.sizes[i], self.sizes[i + 1]
        p0, p1 = self.probs[i], self.probs[i + 1]
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(s1 > s0, (x[inside] - s0) / (s1 - s0), 1.0)
        out[inside] = p0 + frac * (p1 - p0)
        out[idx >= len(self.sizes) - 1] = 1.0
        return out

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        probs = np.concatenate([[0.0], self.probs])
        sizes = np.concatenate([[self.sizes[0]], self.sizes])
        # keep the last size for repeated probabilities (zero-mass gaps)
        keep = np.append(probs[1:] != probs[:-1], True)
        return np.interp(u, probs[keep], sizes[keep])

    def sample(self, rng: np.random.Generator, size: int | None = None):
        return self.ppf(rng.random(size))

    def mean(self) -> float:
        total = self.probs[0] * self.sizes[0]
        dp = np.diff(self.probs)
        mids = (self.sizes[:-1] + self.sizes[1:]) / 2.0
        return float(total + np.sum(dp * mids))

    def truncated(self, max_size: float) -> "FlowSizeCdf":
        """Same shape below ``max_size``; the mass above becomes an atom there."""
        pts = [(s, p) for s, p in self.breakpoints if s < max_size]
        p_at = float(self.cdf(np.array([max_size]))[0]) if pts else 0.0
        if pts:
            pts.append((max_size, p_at))
        pts.append((max_size, 1.0))
        return FlowSizeCdf(pts, f"{self.name}<= {max_size:g}")

    def scaled(self, factor: float) -> "FlowSizeCdf":
        return FlowSizeCdf([(s * factor, p) for s, p in self.breakpoints], f"{self.name}x{factor:g}")

    def __repr__(self) -> str:
        return f"FlowSizeCdf({self.name or 'custom'}, mean={self.mean():.4g} B)"


def read_cdf_csv(text: str, name: str = "") -> FlowSizeCdf:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return FlowSizeCdf([(float(r[0]), float(r[1])) for r in rows], name)


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


BUILTIN_CDFS = ("datamining", "websearch", "hadoop")


def load_cdf(name_or_path: str | Path) -> FlowSizeCdf:
    """Built-in reconstructions by name, or a CSV file of (size_bytes, cum_prob)."""
    key = str(name_or_path).lower()
    if key in BUILTIN_CDFS:
        text = resources.files("rdcn.data").joinpath(f"{key}.csv").read_text()
        return read_cdf_csv(text, key)
    path = Path(name_or_path)
    return read_cdf_csv(path.read_text(), path.stem)


# --- generation -------------------------------------------------------------------------


def uniform_matrix_period(load: float, share: float, n: int, k: int, r: float, flow_bytes: int = UNIFORM_FLOW_BYTES) -> float:
    """Seconds between consecutive all-to-all matrices."""
    h = n * k
    volume_bits = 8.0 * flow_bytes * h * (h - k)
    return volume_bits / ((1.0 - share) * load * h * r)


def generate(
    load: float,
    share: float,
    cdf: FlowSizeCdf | None,
    n: int,
    k: int,
    r: float,
    duration: float,
    seed: int = 0,
    uniform_bytes: int = UNIFORM_FLOW_BYTES,
) -> list[Flow]:
    """Flows offered at ``load`` times the total host rate n k r, a fraction
    ``share`` of it as skewed Poisson flows and the rest as all-to-all
    matrices of ``uniform_bytes`` flows between hosts of different racks."""
    if not 0.0 <= share <= 1.0:
        raise ValueError("share must lie in [0, 1]")
    if load <= 0 or duration <= 0:
        raise ValueError("load and duration must be positive")
    if n < 2 or k < 1:
        raise ValueError("need at least two racks and one host per rack")
    h = n * k
    ss_skew, ss_uni = np.random.SeedSequence(seed).spawn(2)
    flows: list[tuple[float, int, int, int, Tag]] = []

    if share > 0:
        if cdf is None:
            raise ValueError("skewed traffic needs a flow size distribution")
        rng = np.random.default_rng(ss_skew)
        rate = share * load * h * r / (8.0 * cdf.mean())
        t = 0.0
        while True:
            t += rng.exponential(1.0 / rate)
            if t >= duration:
                break
            src = int(rng.integers(h))
            other = int(rng.integers(h - k))
            base = (src // k) * k
            dst = other if other < base else other + k
            size = max(1, int(round(float(cdf.sample(rng)))))
            flows.append((t, src, dst, size, Tag.SKEWED))

    if share < 1:
        rng = np.random.default_rng(ss_uni)
        period = uniform_matrix_period(load, share, n, k, r, uniform_bytes)
        pairs = [(s, d) for s in range(h) for d in range(h) if s // k != d // k]
        m = 0
        while m * period < duration:
            offs = rng.random(len(pairs)) * period + m * period
            for (s, d), t in zip(pairs, offs):
                if t < duration:
                    flows.append((float(t), s, d, uniform_bytes, Tag.UNIFORM))
            m += 1

    flows.sort(key=lambda f: (f[0], f[1], f[2]))
    return [Flow(i, s, d, size, t, tag) for i, (t, s, d, size, tag) in enumerate(flows)]


def offered_bits(flows: Iterable[Flow]) -> int:
    return 8 * sum(f.size for f in flows)


# --- classification ---------------------------------------------------------------------


@dataclass(frozen=True)
class Classified:
    """Pieces a flow turns into after classification (one, or two when the
    size information is delayed)."""

    parts: tuple[Flow, ...]
    misclassified: bool = False


def classify(
    flow: Flow,
    threshold_ss_da: int = SS_DA_THRESHOLD,
    info_delay: int = 0,
    error_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    r: float = 10e9,
) -> Classified:
    """Uniform-tagged flows ride the rotor unless misclassified (then they go
    to the static part); skewed flows below the threshold are SS, others DA.

    With ``info_delay`` > 0 the first ``info_delay`` bytes of a skewed flow
    are sent as an SS flow; the rest is re-announced as a second arrival once
    that prefix would have finished on an ideal link of rate r.
    """
    if flow.tag is Tag.UNIFORM:
        if error_rate > 0:
            if rng is None:
                raise ValueError("error_rate > 0 needs a random generator")
            if rng.random() < error_rate:
                return Classified((replace(flow, cls=FlowClass.SS),), misclassified=True)
        return Classified((replace(flow, cls=FlowClass.ROTOR),))
    final = FlowClass.SS if flow.size < threshold_ss_da else FlowClass.DA
    if info_delay <= 0 or flow.size <= info_delay:
        cls = final if info_delay <= 0 else FlowClass.SS
        return Classified((replace(flow, cls=cls),))
    head = replace(flow, size=info_delay, cls=FlowClass.SS)
    tail = replace(
        flow,
        size=flow.size - info_delay,
        arrival=flow.arrival + 8.0 * info_delay / r,
        cls=final,
        parent=flow.id,
    )
    return Classified((head, tail))


def flowlet_split(flow: Flow, flowlet_size: float, r: float) -> list[Flow]:
    """Chunks of ``flowlet_size`` bytes arriving one ideal transmission time
    apart; the first chunk keeps the flow's arrival."""
    if flowlet_size <= 0:
        raise ValueError("flowlet size must be positive")
    if math.isinf(flowlet_size) or flow.size <= flowlet_size:
        return [flow]
    size = int(flowlet_size)
    gap = 8.0 * size / r
    out = []
    left, i = flow.size, 0
    while left > 0:
        chunk = min(size, left)
        out.append(replace(flow, size=chunk, arrival=flow.arrival + i * gap, parent=flow.id if i else flow.parent))
        left -= chunk
        i += 1
    return out


def renumber(flows: Iterable[Flow]) -> list[Flow]:
    """Sort by arrival and assign fresh consecutive ids (keeping parents)."""
    ordered = sorted(flows, key=lambda f: (f.arrival, f.id, f.size))
    return [replace(f, id=i) for i, f in enumerate(ordered)]


# --- trace files ----------------------------------------------------------------------------


def write_trace(flows: Iterable[Flow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arrival_s", "src_host", "dst_host", "size_bytes", "tag"])
    for f in flows:
        w.writerow([repr(f.arrival), f.src, f.dst, f.size, f.tag.value])
    return buf.getvalue()


def read_trace(text: str) -> list[Flow]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        Flow(i, int(r["src_host"]), int(r["dst_host"]), int(r["size_bytes"]), float(r["arrival_s"]), Tag(r.get("tag") or "skewed"))
        for i, r in enumerate(rows)
    ]
