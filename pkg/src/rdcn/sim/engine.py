"""Packet-level discrete-event simulator of a ToR layer whose uplinks are
split into static (backbone), rotor and demand-aware ports.

Packets are served from three strict-priority class queues per egress port
(SS, then rotor, then demand-aware). Rotor traffic waits in per-destination
host buffers until the ToR agent pulls it for the next slot; pulled packets
carry the slot label and are only sent on the rotor port whose matching for
that label reaches the next rack. Everything else carries label 0 and follows
shortest paths: SS and offloaded rotor traffic over the static backbone, DA
traffic over the backbone plus the current demand-aware links.
"""
from __future__ import annotations

import heapq
import math
from collections import Counter, defaultdict, deque
from dataclasses import dataclass

import numpy as np

from ..debruijn import DA, STATIC, Port, Router, make_static_topology
from ..metrics import PROTOCOLS, FctRecord, MetricsBundle, windowed_sum
from ..rotor import RotorSchedule
from ..scheduling import RackBufferState, SlotBudget, local_lb, offload_rack, rotor_lb
from ..traffic import Flow, FlowClass, Tag, classify, flowlet_split, generate, load_cdf, renumber
from .config import SimConfig

SS_C, ROT_C, DA_C = 0, 1, 2
CLASS_OF = {FlowClass.SS: SS_C, FlowClass.ROTOR: ROT_C, FlowClass.DA: DA_C}
CLASS_NAME = {SS_C: "SS", ROT_C: "ROTOR", DA_C: "DA"}


class SimulationError(RuntimeError):
    pass


class Packet:
    __slots__ = ("flow", "seq", "size", "cls", "dst", "final", "label", "port", "leg", "injector", "retx", "t_enq", "nxt")

    def __init__(self, flow: int, seq: int, size: int, cls: int, dst: int):
        self.flow = flow
        self.seq = seq
        self.size = size
        self.cls = cls
        self.dst = dst  # host ending the current traversal
        self.final = dst
        self.label = 0
        self.port = -1  # rotor port chosen by the agent
        self.leg = "L"  # rotor packets: taken from a Local or Non-local buffer
        self.injector = -1
        self.retx = False
        self.t_enq = 0.0
        self.nxt = None


class FlowState:
    __slots__ = (
        "flow", "cls", "npk", "got", "ngot", "top", "done", "next_seq", "pending", "inflight",
        "cwnd", "ssthresh", "last_cut",
    )

    def __init__(self, flow: Flow, cls: int, mtu: int):
        self.flow = flow
        self.cls = cls
        self.npk = -(-flow.size // mtu)
        self.got = bytearray(self.npk)
        self.ngot = 0
        self.top = -1
        self.done = False
        self.next_seq = 0
        self.pending: deque[int] = deque()  # sequence numbers to resend
        self.inflight = 0
        self.cwnd = 0.0
        self.ssthresh = math.inf
        self.last_cut = -math.inf

    def pkt_size(self, seq: int, mtu: int) -> int:
        if seq < self.npk - 1:
            return mtu
        return self.flow.size - mtu * (self.npk - 1)

    def has_data(self) -> bool:
        return bool(self.pending) or self.next_seq < self.npk


class Link:
    """Egress port with three class queues and a fixed far end."""

    __slots__ = ("sim", "queues", "cap", "busy", "rate", "target", "up", "tor_port")

    def __init__(self, sim: "Simulator", rate: float, cap: int | None, target=None, tor_port: bool = False):
        self.sim = sim
        self.queues = (deque(), deque(), deque())
        self.cap = cap
        self.busy = False
        self.rate = rate
        self.target = target
        self.up = True
        self.tor_port = tor_port

    def enqueue(self, pkt: Packet) -> None:
        q = self.queues[pkt.cls]
        if self.cap is not None and len(q) >= self.cap:
            self.sim.drop(pkt, "overflow")
            return
        pkt.t_enq = self.sim.now
        q.append(pkt)
        if not self.busy and self.up:
            self.start()

    def start(self) -> None:
        for q in self.queues:
            if q:
                pkt = q.popleft()
                break
        else:
            return
        sim = self.sim
        if self.tor_port:
            sim.qdelay[pkt.cls] += sim.now - pkt.t_enq
            sim.qcount[pkt.cls] += 1
        self.busy = True
        pkt.nxt = self.target
        sim.in_wire += 1
        sim.at(sim.now + pkt.size * 8.0 / self.rate, self.done, pkt)

    def done(self, pkt: Packet) -> None:
        self.busy = False
        self.sim.at(self.sim.now + self.sim.cfg.prop, self.sim.arrive, pkt)
        if self.up:
            self.start()

    def flush(self) -> list[Packet]:
        out = []
        for q in self.queues:
            out.extend(q)
            q.clear()
        return out

    def __len__(self) -> int:
        return sum(len(q) for q in self.queues)


class RotorPort:
    """Rotor uplink j of one ToR: serves the queue of the active slot label
    during the circuit window of every slot."""

    __slots__ = ("sim", "tor", "j", "queues", "busy", "label", "peer", "window_end")

    def __init__(self, sim: "Simulator", tor: "Tor", j: int):
        self.sim = sim
        self.tor = tor
        self.j = j
        self.queues: dict[int, deque] = {}
        self.busy = False
        self.label = 0
        self.peer = -1
        self.window_end = -1.0

    def enqueue(self, pkt: Packet) -> None:
        q = self.queues.setdefault(pkt.label, deque())
        if len(q) >= self.sim.cfg.queue_packets:
            self.sim.drop(pkt, "overflow")
            return
        q.append(pkt)
        if pkt.label == self.label:
            self.kick()

    def open(self, t: int) -> None:
        sim = self.sim
        self.label = sim.sched.label(t)
        self.peer = sim.sched.peer(self.j, t, self.tor.rack)
        self.window_end = sim.now + sim.cfg.delta
        self.kick()

    def kick(self) -> None:
        if self.busy:
            return
        sim = self.sim
        q = self.queues.get(self.label)
        if not q:
            return
        pkt = q[0]
        tx = pkt.size * 8.0 / sim.cfg.r
        if sim.now + tx > self.window_end + 1e-12:
            return
        q.popleft()
        if pkt.label != self.label or pkt.dst // sim.k != self.peer:
            sim.slot_violations += 1
        if sim.trace is not None:
            sim.trace.append((sim.now, "rotor_tx", pkt.flow, pkt.seq, "ROTOR", self.tor.rack, self.peer, pkt.label, f"port {self.j}"))
        self.busy = True
        pkt.nxt = sim.tors[self.peer].receive
        sim.in_wire += 1
        sim.at(sim.now + tx, self.done, pkt)

    def done(self, pkt: Packet) -> None:
        self.busy = False
        self.sim.at(self.sim.now + self.sim.cfg.prop, self.sim.arrive, pkt)
        self.kick()

    def flush_all(self) -> list[Packet]:
        out = []
        for q in self.queues.values():
            out.extend(q)
        self.queues.clear()
        return out

    def __len__(self) -> int:
        return sum(len(q) for q in self.queues.values())


class Host:
    __slots__ = ("sim", "id", "rack", "j", "uplink", "local", "nonlocal_", "credit")

    def __init__(self, sim: "Simulator", hid: int):
        self.sim = sim
        self.id = hid
        self.rack, self.j = divmod(hid, sim.k)
        self.uplink: Link | None = None
        self.local: dict[int, deque] = defaultdict(deque)
        self.nonlocal_: dict[int, deque] = defaultdict(deque)
        self.credit = 0.0  # fractional packets carried to the next pull

    def send(self, pkt: Packet) -> None:
        sim = self.sim
        pkt.injector = self.id
        sim.injected += 1
        w = sim.win(sim.now)
        sim.sent[CLASS_NAME[pkt.cls]][w] += 1
        if pkt.retx:
            sim.retx[CLASS_NAME[pkt.cls]][w] += 1
        self.uplink.enqueue(pkt)

    def receive(self, pkt: Packet) -> None:
        sim = self.sim
        sim.delivered += 1
        if pkt.dst != pkt.final:
            # intermediate of an indirect rotor path
            pkt.dst = pkt.final
            pkt.label = 0
            pkt.leg = "N"
            pkt.retx = False
            sim.buffer_put(self, pkt, front=False)
            return
        if sim.trace is not None:
            sim.trace.append((sim.now, "deliver", pkt.flow, pkt.seq, CLASS_NAME[pkt.cls], -1, self.rack, pkt.label, ""))
        sim.flow_receive(pkt)


class Tor:
    __slots__ = ("sim", "rack", "down", "ports", "rotor")

    def __init__(self, sim: "Simulator", rack: int):
        self.sim = sim
        self.rack = rack
        self.down: list[Link] = []
        self.ports: dict[Port, Link] = {}
        self.rotor: list[RotorPort] = []

    def receive(self, pkt: Packet) -> None:
        sim = self.sim
        sim.delivered_hops += 1
        drack = pkt.dst // sim.k
        if drack == self.rack:
            self.down[pkt.dst % sim.k].enqueue(pkt)
            return
        if pkt.label:
            j = pkt.port
            if j >= len(self.rotor) or sim.sched.label_peer(j, pkt.label, self.rack) != drack:
                j = sim.rotor_port_for(self.rack, pkt.label, drack)
                if j is None:
                    sim.drop(pkt, "reconfig")
                    return
                pkt.port = j
            self.rotor[j].enqueue(pkt)
            return
        port = sim.next_port(self.rack, drack, pkt)
        if port is None:
            sim.drop(pkt, "unroutable")
            return
        self.ports[port].enqueue(pkt)


@dataclass
class _Pending:
    time: float
    from_class: str
    to_class: str


class Simulator:
    def __init__(self, cfg: SimConfig, flows: list[Flow] | None = None):
        self.cfg = cfg
        self.n, self.k = cfg.n, cfg.k
        self.k_r, self.k_d = cfg.k_r, cfg.k_d
        self.mtu = cfg.mtu
        self.rng = np.random.default_rng(cfg.seed)
        self.now = 0.0
        self._q: list = []
        self._seq = 0
        self.end = cfg.duration + cfg.drain

        # counters
        self.injected = self.delivered = self.dropped = 0
        self.delivered_hops = 0
        self.in_wire = 0
        self.slot_violations = 0
        self.messages = 0
        self.drop_reasons: Counter = Counter()
        self.qdelay = [0.0, 0.0, 0.0]
        self.qcount = [0, 0, 0]
        self.violations: list[str] = []
        self.reconfigs: list[tuple[float, float, str]] = []
        nwin = max(1, int(math.ceil(self.end / cfg.goodput_window - 1e-12)))
        self.nwin = nwin
        self.sent = {p: np.zeros(nwin, dtype=np.int64) for p in PROTOCOLS}
        self.retx = {p: np.zeros(nwin, dtype=np.int64) for p in PROTOCOLS}
        self.losses = {p: np.zeros(nwin, dtype=np.int64) for p in PROTOCOLS}
        self.first_bytes: list[tuple[float, int]] = []
        self.seq_gaps: Counter = Counter()
        self.fct: list[FctRecord] = []

        # topology
        self.topo = make_static_topology(cfg.n, cfg.k_s)
        self.da_links: set[tuple[int, int, int]] = set()
        self.static_router = Router(self.topo)
        self._set_router(self.da_links)
        self.sched = RotorSchedule(cfg.n, self.k_r, cfg.delta, cfg.R_r)
        self.tors = [Tor(self, i) for i in range(cfg.n)]
        self.hosts = [Host(self, h) for h in range(cfg.hosts)]
        for tor in self.tors:
            for j in range(self.k):
                tor.down.append(Link(self, cfg.r, cfg.queue_packets, self.hosts[tor.rack * self.k + j].receive, tor_port=True))
            for p, w in self.topo.neighbors(tor.rack):
                tor.ports[p] = Link(self, cfg.r, cfg.queue_packets, self.tors[w].receive, tor_port=True)
            for j in range(self.k_d):
                tor.ports[Port(DA, j)] = Link(self, cfg.r, cfg.queue_packets, None, tor_port=True)
            tor.rotor = [RotorPort(self, tor, j) for j in range(self.k_r)]
        for h in self.hosts:
            h.uplink = Link(self, cfg.r, None, self.tors[h.rack].receive)

        self.D_l = np.zeros((cfg.n, self.k, cfg.hosts))
        self.D_n = np.zeros((cfg.n, self.k, cfg.hosts))
        self.rr = [0] * cfg.n
        self.pair_rem: dict[tuple[int, int], int] = defaultdict(int)
        self.pending = [_Pending(r.time, r.from_class, r.to_class) for r in cfg.reassignments]
        self.port_changes: list[tuple[float, int, int]] = []  # (time, k_r, k_d)

        self.flows: dict[int, FlowState] = {}
        self.offered: list[tuple[float, int]] = []
        self.trace: list[tuple] | None = [] if cfg.trace_events else None
        self._load_flows(flows)

    # --- event plumbing ----------------------------------------------------

    def at(self, time: float, fn, arg=None) -> None:
        self._seq += 1
        heapq.heappush(self._q, (time, self._seq, fn, arg))

    def win(self, t: float) -> int:
        return min(int(t / self.cfg.goodput_window), self.nwin - 1)

    def arrive(self, pkt: Packet) -> None:
        self.in_wire -= 1
        pkt.nxt(pkt)

    # --- workload ----------------------------------------------------------

    def _load_flows(self, flows: list[Flow] | None) -> None:
        cfg = self.cfg
        if flows is None:
            flows = self._generate()
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        parts: list[Flow] = []
        for f in flows:
            self.offered.append((f.arrival, f.size))
            c = classify(f, cfg.ss_da_threshold, cfg.info_delay, cfg.error_rate, rng, cfg.r)
            for p in c.parts:
                if cfg.bulk_threshold is not None and p.tag is Tag.SKEWED and p.cls is FlowClass.DA and f.size >= cfg.bulk_threshold:
                    p = Flow(p.id, p.src, p.dst, p.size, p.arrival, p.tag, FlowClass.ROTOR, p.parent)
                if p.cls is not FlowClass.ROTOR:
                    parts.extend(flowlet_split(p, cfg.flowlet, cfg.r))
                else:
                    parts.append(p)
        for f in renumber(parts):
            self.at(f.arrival, self.start_flow, f)

    def _generate(self) -> list[Flow]:
        cfg = self.cfg
        cdf = load_cdf(cfg.cdf)
        if cfg.cdf_max is not None:
            cdf = cdf.truncated(cfg.cdf_max)
        phases = sorted(cfg.phases, key=lambda p: p.start) or []
        bounds = [(0.0, cfg.share)] if not phases or phases[0].start > 0 else []
        bounds += [(p.start, p.share) for p in phases]
        flows: list[Flow] = []
        for i, (t0, share) in enumerate(bounds):
            t1 = bounds[i + 1][0] if i + 1 < len(bounds) else cfg.duration
            if t1 <= t0:
                continue
            seg = generate(cfg.load, share, cdf, cfg.n, cfg.k, cfg.r, t1 - t0, seed=cfg.seed * 1000 + i, uniform_bytes=cfg.uniform_bytes)
            flows += [Flow(f.id, f.src, f.dst, f.size, f.arrival + t0, f.tag) for f in seg]
        return renumber(flows)

    # --- flows and transports -----------------------------------------------

    def start_flow(self, f: Flow) -> None:
        cls = CLASS_OF[f.cls]
        if cls == ROT_C and (self.k_r == 0 or f.src // self.k == f.dst // self.k):
            cls = DA_C if self.k_r == 0 else SS_C
        fs = FlowState(f, cls, self.mtu)
        self.flows[f.id] = fs
        src = self.hosts[f.src]
        if cls == ROT_C:
            for s in range(fs.npk):
                self.buffer_put(src, Packet(f.id, s, fs.pkt_size(s, self.mtu), ROT_C, f.dst), front=False)
            fs.next_seq = fs.npk
            return
        if cls == DA_C:
            self.pair_rem[(f.src // self.k, f.dst // self.k)] += f.size
            fs.cwnd = float(min(self.cfg.da_initial_window, self.cfg.da_max_window))
            self._da_send(fs)
        else:
            for _ in range(min(self.cfg.ss_initial_window, fs.npk)):
                self._send_next(fs)

    def _send_next(self, fs: FlowState) -> bool:
        if fs.pending:
            seq, retx = fs.pending.popleft(), True
        elif fs.next_seq < fs.npk:
            seq, retx = fs.next_seq, False
            fs.next_seq += 1
        else:
            return False
        f = fs.flow
        pkt = Packet(f.id, seq, fs.pkt_size(seq, self.mtu), fs.cls, f.dst)
        pkt.retx = retx
        fs.inflight += 1
        self.hosts[f.src].send(pkt)
        return True

    def _da_send(self, fs: FlowState) -> None:
        while fs.inflight < int(fs.cwnd) and self._send_next(fs):
            pass

    def flow_receive(self, pkt: Packet) -> None:
        fs = self.flows[pkt.flow]
        self.seq_gaps[pkt.seq - (fs.top + 1)] += 1
        if pkt.seq > fs.top:
            fs.top = pkt.seq
        if not fs.got[pkt.seq]:
            fs.got[pkt.seq] = 1
            fs.ngot += 1
            self.first_bytes.append((self.now, pkt.size))
            if fs.cls == DA_C:
                f = fs.flow
                self.pair_rem[(f.src // self.k, f.dst // self.k)] -= pkt.size
            if fs.ngot == fs.npk:
                fs.done = True
                f = fs.flow
                self.fct.append(FctRecord(f.id, f.size, CLASS_NAME[fs.cls], f.tag.value, f.arrival, self.now))
        if fs.cls == SS_C:
            self.at(self.now + self.cfg.control_latency, self._ss_pull, fs)
        elif fs.cls == DA_C:
            self.at(self.now + self.cfg.control_latency, self._da_ack, fs)

    def _ss_pull(self, fs: FlowState) -> None:
        fs.inflight -= 1
        self._send_next(fs)

    def _ss_nack(self, arg) -> None:
        fs, seq = arg
        fs.inflight -= 1
        fs.pending.append(seq)
        self._send_next(fs)

    def _da_ack(self, fs: FlowState) -> None:
        fs.inflight -= 1
        if fs.cwnd < fs.ssthresh:
            fs.cwnd += 1.0
        else:
            fs.cwnd += 1.0 / fs.cwnd
        fs.cwnd = min(fs.cwnd, float(self.cfg.da_max_window))
        self._da_send(fs)

    def _da_loss(self, arg) -> None:
        fs, seq = arg
        fs.inflight -= 1
        fs.pending.append(seq)
        if self.now - fs.last_cut > self.cfg.da_rto:
            fs.ssthresh = max(fs.cwnd / 2.0, 2.0)
            fs.cwnd = fs.ssthresh
            fs.last_cut = self.now
        self._da_send(fs)

    def drop(self, pkt: Packet, reason: str) -> None:
        self.dropped += 1
        self.drop_reasons[reason] += 1
        self.losses[CLASS_NAME[pkt.cls]][self.win(self.now)] += 1
        if self.trace is not None:
            self.trace.append((self.now, "drop", pkt.flow, pkt.seq, CLASS_NAME[pkt.cls], -1, -1, pkt.label, reason))
        fs = self.flows[pkt.flow]
        if pkt.cls == SS_C:
            self.at(self.now + self.cfg.control_latency, self._ss_nack, (fs, pkt.seq))
        elif pkt.cls == DA_C:
            self.at(self.now + self.cfg.da_rto, self._da_loss, (fs, pkt.seq))
        else:
            # open-loop rotor traffic goes back to the buffer it was pulled from
            pkt.retx = True
            pkt.dst = pkt.final
            pkt.label = 0
            pkt.port = -1
            self.buffer_put(self.hosts[pkt.injector], pkt, front=True)

    # --- rotor buffers and the ToR agent -------------------------------------

    def buffer_put(self, host: Host, pkt: Packet, front: bool) -> None:
        if pkt.leg == "N":
            q, D = host.nonlocal_[pkt.final], self.D_n
        else:
            q, D = host.local[pkt.final], self.D_l
        if front:
            q.appendleft(pkt)
        else:
            q.append(pkt)
        D[host.rack, host.j, pkt.final] += pkt.size

    def _release(self, host: Host, npk: int, leg: str, final: int, dst: int, label: int, port: int) -> int:
        """Send up to ``npk`` packets of one buffer; returns the number sent."""
        q = (host.nonlocal_ if leg == "N" else host.local).get(final)
        D = self.D_n if leg == "N" else self.D_l
        sent = 0
        while q and sent < npk:
            pkt = q.popleft()
            D[host.rack, host.j, final] -= pkt.size
            pkt.dst, pkt.label, pkt.port = dst, label, port if label else -1
            host.send(pkt)
            sent += 1
        return sent

    def budget(self) -> SlotBudget:
        return SlotBudget(self.cfg.C_bytes, self.k, self.k_r)

    def _agent(self, t: int) -> None:
        """Compute every rack's allocation for slot t and schedule the pulls."""
        if self.k_r == 0:
            return
        cfg = self.cfg
        budget = self.budget()
        label = self.sched.label(t)
        active = [r for r in range(self.n) if self.D_l[r].any() or self.D_n[r].any()]
        if not active:
            return
        states = [RackBufferState(r, self.n, self.k, self.D_l[r], self.D_n[r]) for r in range(self.n)]
        if cfg.scheduler == "rlb":
            allocs = rotor_lb(states, self.sched, t, budget, racks=active)
            moved_all = [{} for _ in allocs]
        else:
            allocs, moved_all = [], []
            for r in active:
                st = states[r]
                moved = {}
                if cfg.offload:
                    st, moved = offload_rack(st, budget, cfg.d_off)
                allocs.append(local_lb(st, self.sched, t, budget, self.rr[r]))
                self.rr[r] = (self.rr[r] + 1) % self.k
                moved_all.append(moved)
        for alloc, moved in zip(allocs, moved_all):
            self.messages += alloc.messages
            self.at(self.now + cfg.control_latency, self._pull, (alloc, moved, label))

    def _pull(self, arg) -> None:
        """Turn an allocation into whole packets per host: floor of the
        host's total (plus carry) split over its entries by largest
        remainder, so per-host volumes stay within one packet of the plan."""
        alloc, moved, label = arg
        H = self.hosts
        mtu = self.mtu
        for (src, dst), vol in sorted(moved.items()):
            self._release(H[src], int(round(vol / mtu + 0.499)), "N", dst, dst, 0, -1)
        per_host: dict[int, list] = defaultdict(list)
        for (b, src, dst), vol in sorted(alloc.nonlocal_.items()):
            per_host[src].append((vol / mtu, "N", dst, dst, b))
        for (b, src, dst), vol in sorted(alloc.direct.items()):
            per_host[src].append((vol / mtu, "L", dst, dst, b))
        for (b, src, via, dst), vol in sorted(alloc.indirect.items()):
            per_host[src].append((vol / mtu, "L", dst, via, b))
        budget = self.budget()
        port_left = dict.fromkeys(range(self.k_r), int(budget.C / mtu + 1e-9))
        rx_left: dict[tuple[int, int], int] = defaultdict(lambda: int(budget.per_path / mtu + 1e-9))
        for src in sorted(per_host):
            host = H[src]
            entries = per_host[src]
            units = sum(e[0] for e in entries) + host.credit
            total = int(math.floor(units + 1e-9))
            counts = [int(math.floor(e[0] + 1e-9)) for e in entries]
            spare = total - sum(counts)
            if spare > 0:
                order = sorted(range(len(entries)), key=lambda i: (-(entries[i][0] - counts[i]), i))
                for i in order[:spare]:
                    counts[i] += 1
            short = False
            for (u, leg, final, dst, b), c in zip(entries, counts):
                c = min(c, port_left.get(b, 0), rx_left[(b, dst)])
                if c <= 0:
                    continue
                got = self._release(host, c, leg, final, dst, label, b)
                port_left[b] -= got
                rx_left[(b, dst)] -= got
                if got < c:
                    short = True
            host.credit = 0.0 if short else min(units - total, 1.0)

    def rotor_port_for(self, rack: int, label: int, drack: int) -> int | None:
        for j in range(self.k_r):
            if self.sched.label_peer(j, label, rack) == drack:
                return j
        return None

    def _slot(self, t: int) -> None:
        if self.pending:
            due = [p for p in self.pending if p.time <= self.now + 1e-12]
            for p in due:
                self.pending.remove(p)
                self._reassign(p)
        for tor in self.tors:
            for rp in tor.rotor:
                rp.open(t)
        self._agent(t + 1)
        nxt = (t + 1) * self.cfg.slot
        if nxt < self.end:
            self.at(nxt, self._slot, t + 1)

    # --- dynamic port partitioning ----------------------------------------------

    def schedule_port_reassignment(self, time: float, from_class: str, to_class: str) -> None:
        if "static" in (from_class, to_class) or "ss" in (from_class, to_class):
            raise ValueError("static ports cannot be reassigned")
        if {from_class, to_class} != {"da", "rotor"}:
            raise ValueError("reassignment must be between 'da' and 'rotor'")
        self.pending.append(_Pending(time, from_class, to_class))

    def _reassign(self, p: _Pending) -> None:
        if p.from_class == "da":
            if self.k_d == 0:
                self.violations.append(f"t={self.now}: no demand-aware port to reassign")
                return
            j = self.k_d - 1
            for tor in self.tors:
                link = tor.ports.pop(Port(DA, j))
                for pkt in link.flush():
                    self.drop(pkt, "reconfig")
            self.da_links = {l for l in self.da_links if l[2] != j}
            self._set_router(self.da_links)
            self.k_d -= 1
            self._set_rotor(self.k_r + 1)
        else:
            if self.k_r == 0:
                self.violations.append(f"t={self.now}: no rotor port to reassign")
                return
            self._set_rotor(self.k_r - 1)
            self.k_d += 1
            for tor in self.tors:
                tor.ports[Port(DA, self.k_d - 1)] = Link(self, self.cfg.r, self.cfg.queue_packets, None, tor_port=True)
        self.port_changes.append((self.now, self.k_r, self.k_d))
        self.reconfigs.append((self.now, self.now + self.cfg.slot, f"{p.from_class}->{p.to_class}"))

    def _set_rotor(self, k_r: int) -> None:
        """Install a rotor schedule with k_r ports; queued rotor packets move
        to the port serving the same (label, next rack) or are flushed."""
        self.k_r = k_r
        self.sched = RotorSchedule(self.n, k_r, self.cfg.delta, self.cfg.R_r)
        for tor in self.tors:
            queued = []
            for rp in tor.rotor:
                queued += rp.flush_all()
            tor.rotor = [RotorPort(self, tor, j) for j in range(k_r)]
            for pkt in queued:
                j = self.rotor_port_for(tor.rack, pkt.label, pkt.dst // self.k)
                if j is None:
                    self.drop(pkt, "reconfig")
                else:
                    pkt.port = j
                    tor.rotor[j].queues.setdefault(pkt.label, deque()).append(pkt)

    # --- demand-aware links ----------------------------------------------------

    def _set_router(self, links) -> None:
        self.router = Router(self.topo, links)
        self._hops: dict[tuple[int, int], list[Port]] = {}
        self._shops: dict[tuple[int, int], list[Port]] = getattr(self, "_shops", {})

    def next_port(self, cur: int, drack: int, pkt: Packet) -> Port | None:
        if pkt.cls == DA_C:
            cache, router = self._hops, self.router
        else:
            cache, router = self._shops, self.static_router
        hops = cache.get((cur, drack))
        if hops is None:
            hops = sorted(p for p, _ in router.next_hops(cur, drack))
            cache[(cur, drack)] = hops
        if not hops:
            return None
        if len(hops) == 1:
            return hops[0]
        return hops[int(self.rng.integers(len(hops)))]  # equal-cost tie: uniform per packet

    def _da_schedule(self, _=None) -> None:
        cfg = self.cfg
        if self.k_d > 0:
            vols = {pair: v for pair, v in self.pair_rem.items() if v >= cfg.da_threshold}
            keep = {l for l in self.da_links if vols.get((l[0], l[1]), 0) >= cfg.da_threshold and l[2] < self.k_d}
            out_used = {(l[0], l[2]) for l in keep}
            in_used = {(l[1], l[2]) for l in keep}
            pairs = {(l[0], l[1]) for l in keep}
            new = set(keep)
            for (s, d), v in sorted(vols.items(), key=lambda kv: (-kv[1], kv[0])):
                if (s, d) in pairs:
                    continue
                for j in range(self.k_d):
                    if (s, j) not in out_used and (d, j) not in in_used:
                        new.add((s, d, j))
                        out_used.add((s, j))
                        in_used.add((d, j))
                        pairs.add((s, d))
                        break
            old_by_port = {(l[0], l[2]): l for l in self.da_links}
            new_by_port = {(l[0], l[2]): l for l in new}
            changed = {key for key in set(old_by_port) | set(new_by_port) if old_by_port.get(key) != new_by_port.get(key)}
            if changed:
                for s, j in sorted(changed):
                    link = self.tors[s].ports[Port(DA, j)]
                    link.up = False
                    link.target = None
                    for pkt in link.flush():
                        self.drop(pkt, "reconfig")
                self.da_links = {l for l in self.da_links if (l[0], l[2]) not in changed}
                self._set_router(self.da_links)
                self.reconfigs.append((self.now, self.now + cfg.R_d, "da"))
                self.at(self.now + cfg.R_d, self._da_up, (new, changed))
        nxt = self.now + cfg.da_period + cfg.R_d
        if nxt < self.end:
            self.at(nxt, self._da_schedule)

    def _da_up(self, arg) -> None:
        new, changed = arg
        for s, d, j in new:
            if (s, j) in changed and j < self.k_d:
                link = self.tors[s].ports[Port(DA, j)]
                link.target = self.tors[d].receive
                link.up = True
                self.da_links.add((s, d, j))
                if not link.busy:
                    link.start()
        for s, j in changed:
            link = self.tors[s].ports.get(Port(DA, j))
            if link is not None and link.target is None:
                link.up = True  # idle port, nothing routed to it
        self._set_router(self.da_links)

    # --- main loop -------------------------------------------------------------

    def run(self) -> MetricsBundle:
        cfg = self.cfg
        self.at(0.0, self._slot, 0)
        if self.k_d > 0 or any(p.to_class == "da" for p in self.pending):
            self.at(cfg.da_period, self._da_schedule)
        q = self._q
        pop = heapq.heappop
        while q:
            time, _, fn, arg = q[0]
            if time > self.end:
                break
            pop(q)
            self.now = time
            if arg is None:
                fn()
            else:
                fn(arg)
        self.now = self.end
        return self._metrics()

    def in_flight(self) -> int:
        total = self.in_wire
        for h in self.hosts:
            total += len(h.uplink)
        for tor in self.tors:
            total += sum(len(l) for l in tor.down)
            total += sum(len(l) for l in tor.ports.values())
            total += sum(len(rp) for rp in tor.rotor)
        return total

    def _metrics(self) -> MetricsBundle:
        cfg = self.cfg
        w = cfg.goodput_window
        times = [t for t, _ in self.first_bytes]
        good = windowed_sum(times, [8 * s for _, s in self.first_bytes], w, self.end)
        off = windowed_sum([t for t, _ in self.offered], [8 * s for _, s in self.offered], w, self.end)
        lo, hi = cfg.warmup, cfg.duration
        delivered = sum(s for t, s in self.first_bytes if lo <= t <= hi)
        offered = sum(s for t, s in self.offered if lo <= t <= hi)
        counters = {
            "injected": self.injected,
            "delivered": self.delivered,
            "dropped": self.dropped,
            "in_flight": self.in_flight(),
            "slot_violations": self.slot_violations,
            "sync_messages": self.messages,
            "flows": len(self.flows),
            "flows_completed": len(self.fct),
            "final_k_r": self.k_r,
            "final_k_d": self.k_d,
        }
        for reason, c in sorted(self.drop_reasons.items()):
            counters[f"dropped_{reason}"] = c
        for c in (SS_C, ROT_C, DA_C):
            counters[f"queued_{CLASS_NAME[c]}"] = self.qcount[c]
        bundle = MetricsBundle(
            window=w,
            end=self.end,
            goodput_bits=good,
            offered_bits=off,
            normalized_goodput=delivered / offered if offered else 0.0,
            fct=sorted(self.fct, key=lambda r: (r.completion, r.flow)),
            seq_gaps=self.seq_gaps,
            retx=self.retx,
            sent=self.sent,
            losses=self.losses,
            counters=counters,
            reconfigs=list(self.reconfigs),
            violations=list(self.violations),
            events=list(self.trace or ()),
        )
        if not bundle.conserved:
            bundle.violations.append("packet conservation broken")
        if self.slot_violations:
            bundle.violations.append(f"{self.slot_violations} rotor packets sent in a foreign slot")
        return bundle

    def mean_queue_delay(self, cls: str) -> float:
        c = {"SS": SS_C, "ROTOR": ROT_C, "DA": DA_C}[cls]
        return self.qdelay[c] / self.qcount[c] if self.qcount[c] else 0.0


def run(cfg: SimConfig, flows: list[Flow] | None = None) -> MetricsBundle:
    return Simulator(cfg, flows).run()
