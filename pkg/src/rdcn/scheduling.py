"""Rotor packet scheduling for one slot: offloading, 1-D and 2-D fair share,
the rack-local LocalLB and the globally negotiated RotorLB baseline.

Volumes are unit-agnostic (the simulator passes bytes). Hosts have global ids
``rack * k + j``; a rack's buffers are k x h arrays indexed by (local source
host j, global destination host).
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .rotor import RotorSchedule

FS2D_MAX_ITERS = 100
FS2D_TOL = 1e-9


def fair_share_1d(demands, capacity: float) -> np.ndarray:
    """Max-min fair split of ``capacity`` over ``demands`` (progressive filling)."""
    d = np.asarray(demands, dtype=float)
    out = np.zeros_like(d)
    if capacity <= 0 or d.size == 0:
        return out
    order = np.argsort(d, kind="stable")
    left = float(capacity)
    remaining = int(np.count_nonzero(d > 0))
    for idx in order:
        if d[idx] <= 0:
            continue
        share = left / remaining
        give = min(d[idx], share)
        out[idx] = give
        left -= give
        remaining -= 1
    return out


def waterfill_rows(D: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Row-wise :func:`fair_share_1d` for a whole matrix at once."""
    D = np.asarray(D, dtype=float)
    caps = np.maximum(np.asarray(caps, dtype=float), 0.0)
    N, M = D.shape
    if M == 0:
        return np.zeros_like(D)
    S = np.sort(D, axis=1)
    before = np.concatenate([np.zeros((N, 1)), np.cumsum(S, axis=1)[:, :-1]], axis=1)
    used_at = before + S * (M - np.arange(M))
    short = caps[:, None] < used_at
    first = np.where(short.any(axis=1), short.argmax(axis=1), M)
    level = np.full(N, np.inf)
    rows = np.nonzero(first < M)[0]
    p = first[rows]
    level[rows] = (caps[rows] - before[rows, p]) / (M - p)
    return np.minimum(D, level[:, None])


def fs2d(W, c0, c1, max_iters: int = FS2D_MAX_ITERS, tol: float = FS2D_TOL) -> np.ndarray:
    """Two-dimensional fair share: sweep rows, then columns, repeatedly,
    dropping rows/columns whose capacity is used up."""
    I = np.array(W, dtype=float)
    c0 = np.asarray(c0, dtype=float)
    c1 = np.asarray(c1, dtype=float)
    N, M = I.shape
    O = np.zeros_like(I)
    scale = max(float(I.max(initial=0.0)), float(c0.max(initial=0.0)), float(c1.max(initial=0.0)), 1e-300)
    eps = tol * scale
    I[I <= eps] = 0.0
    it = 0
    while np.any(I > 0) and it < max_iters:
        it += 1
        t = waterfill_rows(I, c0 - O.sum(axis=1))
        t = waterfill_rows(t.T, c1 - O.sum(axis=0)).T
        if not np.any(t > 0):
            break
        O += t
        I = np.maximum(I - t, 0.0)
        I[(c0 - O.sum(axis=1)) <= eps, :] = 0.0
        I[:, (c1 - O.sum(axis=0)) <= eps] = 0.0
        I[I <= eps] = 0.0
    return O


def offload(D_l_vu: float, D_n_vu: float, d_off: float, C: float, k: int) -> float:
    """Non-local volume host v should push to the backbone for destination u."""
    if D_l_vu > d_off:
        return D_n_vu
    if D_l_vu + D_n_vu > d_off:
        return min(D_n_vu, max(0.0, D_l_vu + D_n_vu - C / k))
    return 0.0


@dataclass(frozen=True)
class SlotBudget:
    """Per-slot volumes: C on a circuit, C_bar per host across its rotor
    ports, C/k per (receiving host, port)."""

    C: float
    k: int
    k_r: int

    @property
    def C_bar(self) -> float:
        return self.C * self.k_r / self.k

    @property
    def per_path(self) -> float:
        return self.C / self.k

    @classmethod
    def from_params(cls, params, k: int | None = None, k_r: int | None = None, unit: str = "bits") -> "SlotBudget":
        C = params.C if unit == "bits" else params.C / 8.0
        return cls(C, k if k is not None else params.k, k_r if k_r is not None else params.k_r)


@dataclass
class RackBufferState:
    """Rotor buffers of the k hosts on one ToR."""

    rack: int
    n: int
    k: int
    D_l: np.ndarray  # k x (n k)
    D_n: np.ndarray  # k x (n k)

    def __post_init__(self):
        h = self.n * self.k
        self.D_l = np.array(self.D_l, dtype=float).reshape(self.k, h)
        self.D_n = np.array(self.D_n, dtype=float).reshape(self.k, h)
        if np.any(self.D_l < 0) or np.any(self.D_n < 0):
            raise ValueError("demands must be non-negative")

    @classmethod
    def empty(cls, rack: int, n: int, k: int) -> "RackBufferState":
        return cls(rack, n, k, np.zeros((k, n * k)), np.zeros((k, n * k)))

    def host(self, j: int) -> int:
        return self.rack * self.k + j

    def copy(self) -> "RackBufferState":
        return RackBufferState(self.rack, self.n, self.k, self.D_l.copy(), self.D_n.copy())

    def snapshot(self) -> bytes:
        return self.D_l.tobytes() + self.D_n.tobytes() + bytes([self.rack % 256])


@dataclass
class SlotAllocation:
    """Volumes released for one slot. Keys use global host ids; ``port`` is
    the rotor port index."""

    rack: int
    direct: dict[tuple[int, int, int], float] = field(default_factory=dict)  # (port, src, dst)
    nonlocal_: dict[tuple[int, int, int], float] = field(default_factory=dict)  # (port, src, dst)
    indirect: dict[tuple[int, int, int, int], float] = field(default_factory=dict)  # (port, src, via, dst)
    offloaded: dict[tuple[int, int], float] = field(default_factory=dict)  # (src, dst)
    messages: int = 0

    def _add(self, table: dict, key: tuple, vol: float) -> None:
        if vol > 0:
            table[key] = table.get(key, 0.0) + float(vol)

    def tx_by_host(self) -> dict[int, float]:
        out: dict[int, float] = defaultdict(float)
        for (_, s, _), v in self.direct.items():
            out[s] += v
        for (_, s, _), v in self.nonlocal_.items():
            out[s] += v
        for (_, s, _, _), v in self.indirect.items():
            out[s] += v
        return dict(out)

    def rx_by_port_host(self) -> dict[tuple[int, int], float]:
        out: dict[tuple[int, int], float] = defaultdict(float)
        for (b, _, d), v in self.direct.items():
            out[(b, d)] += v
        for (b, _, d), v in self.nonlocal_.items():
            out[(b, d)] += v
        for (b, _, a, _), v in self.indirect.items():
            out[(b, a)] += v
        return dict(out)

    def tx_by_port(self) -> dict[int, float]:
        out: dict[int, float] = defaultdict(float)
        for key, v in [*self.direct.items(), *self.nonlocal_.items(), *self.indirect.items()]:
            out[key[0]] += v
        return dict(out)

    @property
    def total(self) -> float:
        return sum(self.direct.values()) + sum(self.nonlocal_.values()) + sum(self.indirect.values())


def check_budgets(alloc: SlotAllocation, budget: SlotBudget, tol: float = 1e-6, per_port_tx: bool = False) -> list[str]:
    """Human-readable budget violations (empty when the allocation is safe)."""
    errs = []
    for host, v in alloc.tx_by_host().items():
        if v > budget.C_bar + tol:
            errs.append(f"host {host} sends {v} > C_bar {budget.C_bar}")
    for (b, host), v in alloc.rx_by_port_host().items():
        if v > budget.per_path + tol:
            errs.append(f"host {host} receives {v} on port {b} > C/k {budget.per_path}")
    for b, v in alloc.tx_by_port().items():
        if v > budget.C + tol:
            errs.append(f"port {b} carries {v} > C {budget.C}")
    return errs


def offload_rack(state: RackBufferState, budget: SlotBudget, d_off: float | None = None) -> tuple[RackBufferState, dict[tuple[int, int], float]]:
    """Apply offloading to every (host, remote destination) of a rack.
    Returns the reduced state and the moved volumes."""
    d_off = budget.per_path if d_off is None else d_off
    out = state.copy()
    moved: dict[tuple[int, int], float] = {}
    lo, hi = state.rack * state.k, (state.rack + 1) * state.k
    for j in range(state.k):
        for u in range(state.n * state.k):
            if lo <= u < hi:
                continue
            vol = offload(out.D_l[j, u], out.D_n[j, u], d_off, budget.C, budget.k)
            if vol > 0:
                out.D_n[j, u] -= vol
                moved[(state.host(j), u)] = vol
    return out, moved


def _phase_direct(state: RackBufferState, sched: RotorSchedule, t: int, C_tx: np.ndarray, C_rx: np.ndarray, alloc: SlotAllocation, tx_cap=None) -> None:
    k = state.k
    for which, D, table in (("n", state.D_n, alloc.nonlocal_), ("l", state.D_l, alloc.direct)):
        for b in range(sched.k_r):
            T = sched.peer(b, t, state.rack)
            if T == state.rack:
                continue
            cols = slice(T * k, (T + 1) * k)
            W = D[:, cols]
            caps = C_tx if tx_cap is None else np.minimum(C_tx, tx_cap[b])
            S = fs2d(W, caps, C_rx[b])
            D[:, cols] = np.maximum(W - S, 0.0)
            C_tx -= S.sum(axis=1)
            C_rx[b] -= S.sum(axis=0)
            if tx_cap is not None:
                tx_cap[b] -= S.sum(axis=1)
            np.maximum(C_tx, 0.0, out=C_tx)
            np.maximum(C_rx[b], 0.0, out=C_rx[b])
            for i in range(k):
                for j in range(k):
                    alloc._add(table, (b, state.host(i), T * k + j), S[i, j])


def local_lb(state: RackBufferState, sched: RotorSchedule, t: int, budget: SlotBudget, rr_cursor: int = 0) -> SlotAllocation:
    """LocalLB for one ToR and slot t. A pure function of the rack's buffers,
    the slot index and the round-robin cursor; emits no messages."""
    st = state.copy()
    k = st.k
    alloc = SlotAllocation(st.rack)
    C_tx = np.full(k, budget.C_bar)
    C_rx = np.full((sched.k_r, k), budget.per_path)
    _phase_direct(st, sched, t, C_tx, C_rx, alloc)

    own = slice(st.rack * k, (st.rack + 1) * k)
    for b in range(sched.k_r):
        T = sched.peer(b, t, st.rack)
        if T == st.rack:
            continue
        for step in range(k):
            aj = (rr_cursor + step) % k
            a = T * k + aj
            v = st.D_l - budget.per_path
            v[v < 0] = 0.0
            v[:, own] = 0.0
            v[:, T * k:(T + 1) * k] = 0.0
            y = np.argmax(v, axis=1)
            z = np.minimum(v[np.arange(k), y], C_tx)
            z[z < 0] = 0.0
            order = [i for i in np.argsort(z, kind="stable") if z[i] > 0]
            n_z = len(order)
            for pos, i in enumerate(order):
                if z[i] > C_rx[b, aj]:
                    share = C_rx[b, aj] / n_z
                    for i2 in order[pos:]:
                        C_rx[b, aj] -= _take(st, alloc, b, i2, a, int(y[i2]), share, C_tx)
                    C_rx[b, aj] = max(C_rx[b, aj], 0.0)
                    break
                C_rx[b, aj] -= _take(st, alloc, b, i, a, int(y[i]), z[i], C_tx)
                n_z -= 1
    return alloc


def _take(st: RackBufferState, alloc: SlotAllocation, b: int, i: int, via: int, dst: int, vol: float, C_tx: np.ndarray) -> float:
    vol = min(vol, st.D_l[i, dst], C_tx[i])
    if vol <= 0:
        return 0.0
    st.D_l[i, dst] -= vol
    C_tx[i] -= vol
    alloc._add(alloc.indirect, (b, st.host(i), via, dst), vol)
    return vol


def rotor_lb(
    states: list[RackBufferState],
    sched: RotorSchedule,
    t: int,
    budget: SlotBudget,
    racks: list[int] | None = None,
) -> list[SlotAllocation]:
    """RotorLB baseline over all racks for slot t.

    Direct phases fair-share each host's per-port share C/k. Indirect traffic
    is negotiated per active link: the sender offers its remaining local
    demand, the intermediate rack accepts per (intermediate, final
    destination) at most C/k minus what that intermediate already holds for
    the destination, and the accepted volume is fair-shared and scaled to
    the receive budget. Each active link exchanges one offer and one accept.
    ``racks`` restricts the output to some senders (peers are still read).
    """
    by_rack = {s.rack: s for s in states}
    allocs = []
    for s in states:
        if racks is not None and s.rack not in racks:
            continue
        st = s.copy()
        k = st.k
        alloc = SlotAllocation(st.rack)
        C_tx = np.full(k, budget.C_bar)
        C_rx = np.full((sched.k_r, k), budget.per_path)
        tx_cap = np.full((sched.k_r, k), budget.per_path)
        _phase_direct(st, sched, t, C_tx, C_rx, alloc, tx_cap=tx_cap)
        own = slice(st.rack * k, (st.rack + 1) * k)
        for b in range(sched.k_r):
            T = sched.peer(b, t, st.rack)
            if T == st.rack:
                continue
            alloc.messages += 2
            peer = by_rack.get(T)
            held = peer.D_n if peer is not None else np.zeros_like(st.D_n)
            for aj in range(k):
                a = T * k + aj
                if C_rx[b, aj] <= 0:
                    continue
                W = st.D_l.copy()
                W[:, own] = 0.0
                W[:, T * k:(T + 1) * k] = 0.0
                accept = np.maximum(budget.per_path - held[aj], 0.0)
                caps = np.minimum(C_tx, tx_cap[b])
                S = fs2d(W, caps, accept)
                tot = S.sum()
                if tot > C_rx[b, aj]:
                    S *= C_rx[b, aj] / tot
                for i, m in zip(*np.nonzero(S > 0)):
                    vol = min(S[i, m], st.D_l[i, m], C_tx[i], tx_cap[b, i])
                    if vol <= 0:
                        continue
                    st.D_l[i, m] -= vol
                    C_tx[i] -= vol
                    tx_cap[b, i] -= vol
                    C_rx[b, aj] -= vol
                    alloc._add(alloc.indirect, (b, st.host(int(i)), a, int(m)), vol)
                C_rx[b, aj] = max(C_rx[b, aj], 0.0)
        allocs.append(alloc)
    return allocs
