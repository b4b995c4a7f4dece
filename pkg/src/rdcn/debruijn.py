"""de Bruijn backbone, integrated routing over static + demand-aware links,
and slot-labelled forwarding tables.

A node address is an integer in [0, b**d) read as d base-b digits, most
significant first. Static port y shifts the address left by one digit and
appends y. Next hops are the neighbours (static and demand-aware) that lie on
a shortest path to the destination, which on the bare de Bruijn graph is the
usual greedy rule: remaining distance = d - longest suffix/prefix overlap.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .rotor import RotorSchedule

STATIC, DA, ROTOR = "static", "da", "rotor"


@dataclass(frozen=True, order=True)
class Port:
    cls: str
    index: int = 0

    @property
    def label(self) -> str:
        if self.cls == STATIC:
            return str(self.index)
        if self.cls == DA:
            return "DA" if self.index == 0 else f"DA{self.index}"
        return "Rotor" if self.index == 0 else f"Rotor{self.index}"

    def __str__(self) -> str:
        return self.label


_RANK = {STATIC: 0, DA: 1, ROTOR: 2}


def port_key(p: Port) -> tuple[int, int]:
    return _RANK[p.cls], p.index


def parse_port(text: str) -> Port:
    text = text.strip()
    if text.startswith("DA"):
        return Port(DA, int(text[2:] or 0))
    if text.startswith("Rotor"):
        return Port(ROTOR, int(text[5:] or 0))
    return Port(STATIC, int(text))


@dataclass(frozen=True)
class NodeAddress:
    value: int
    b: int
    d: int

    def __post_init__(self):
        if not 0 <= self.value < self.b**self.d:
            raise ValueError(f"address {self.value} outside DB({self.b},{self.d})")

    @classmethod
    def parse(cls, digits: str, b: int = 2) -> "NodeAddress":
        return cls(int(digits, b), b, len(digits))

    @property
    def digits(self) -> tuple[int, ...]:
        return to_digits(self.value, self.b, self.d)

    def __str__(self) -> str:
        return "".join(_digit_char(x) for x in self.digits)


def _digit_char(x: int) -> str:
    return "0123456789abcdefghijklmnopqrstuvwxyz"[x] if x < 36 else f"[{x}]"


def to_digits(v: int, b: int, d: int) -> tuple[int, ...]:
    out = []
    for _ in range(d):
        v, r = divmod(v, b)
        out.append(r)
    return tuple(reversed(out))


def shift_append(v: int, y: int, b: int, d: int) -> int:
    return (v % b ** (d - 1)) * b + y


def static_matchings(b: int, d: int) -> list[tuple[int, ...]]:
    """Matching y maps v_1..v_d to v_2..v_d y. Self-loops (e.g. 0..0 under
    y=0) are kept so each matching stays perfect."""
    if b < 2 or d < 1:
        raise ValueError("need b >= 2 and d >= 1")
    n = b**d
    return [tuple(shift_append(v, y, b, d) for v in range(n)) for y in range(b)]


def overlap(src: int, dst: int, b: int, d: int) -> int:
    """Length of the longest suffix of src that is a prefix of dst."""
    s, t = to_digits(src, b, d), to_digits(dst, b, d)
    for l in range(d, -1, -1):
        if s[d - l:] == t[:l]:
            return l
    return 0


def greedy_distance(src: int, dst: int, b: int, d: int) -> int:
    return d - overlap(src, dst, b, d)


class StaticTopology:
    """Static backbone. Subclasses fix the neighbour function and the digit
    layout used for prefix aggregation."""

    n: int
    b: int
    d: int
    k_s: int

    def neighbors(self, v: int) -> list[tuple[Port, int]]:
        raise NotImplementedError

    def matchings(self) -> list[tuple[int, ...]]:
        return [tuple(self.neighbors(v)[y][1] for v in range(self.n)) for y in range(self.k_s)]

    def address(self, v: int) -> NodeAddress:
        return NodeAddress(v, self.b, self.d)


class DeBruijnTopology(StaticTopology):
    def __init__(self, b: int, d: int):
        if b < 2 or d < 1:
            raise ValueError("need b >= 2 and d >= 1")
        self.b, self.d, self.k_s = b, d, b
        self.n = b**d

    def neighbors(self, v: int) -> list[tuple[Port, int]]:
        return [(Port(STATIC, y), shift_append(v, y, self.b, self.d)) for y in range(self.b)]

    def __repr__(self) -> str:
        return f"DeBruijnTopology(b={self.b}, d={self.d})"


class RingTopology(StaticTopology):
    """Directed ring used when a ToR has a single static port (no de Bruijn
    graph of degree 1 spans more than one node). Addresses are single digits,
    so forwarding tables hold one row per destination."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("need at least two ToRs")
        self.n, self.b, self.d, self.k_s = n, n, 1, 1

    def neighbors(self, v: int) -> list[tuple[Port, int]]:
        return [(Port(STATIC, 0), (v + 1) % self.n)]

    def __repr__(self) -> str:
        return f"RingTopology(n={self.n})"


def make_static_topology(n: int, k_s: int) -> StaticTopology:
    if k_s == 1:
        return RingTopology(n)
    if k_s < 1:
        raise ValueError("the backbone needs at least one static port")
    d = round(math.log(n, k_s))
    if k_s**d != n:
        raise ValueError(f"n={n} is not a power of k_s={k_s}")
    return DeBruijnTopology(k_s, d)


# --- demand-aware links -----------------------------------------------------------

DaLink = tuple[int, int, int]  # (src ToR, dst ToR, DA port index at src)


def normalize_da_links(links: Iterable) -> frozenset[DaLink]:
    """Accept (src, dst) or (src, dst, port) tuples; pairs get port indices
    in order of appearance per source."""
    out: set[DaLink] = set()
    used: dict[int, int] = {}
    for link in links:
        if len(link) == 3:
            u, w, j = (int(x) for x in link)
        else:
            u, w = int(link[0]), int(link[1])
            j = used.get(u, 0)
            while any(l[0] == u and l[2] == j for l in out):
                j += 1
        used[u] = j + 1
        if u == w:
            raise ValueError("demand-aware link must join two distinct ToRs")
        out.add((u, w, j))
    return frozenset(out)


class Router:
    """Shortest-path next hops over a static topology plus demand-aware links."""

    def __init__(self, topo: StaticTopology, da_links: Iterable = ()):
        self.topo = topo
        self.da_links = normalize_da_links(da_links)
        n = topo.n
        self._adj: list[list[tuple[Port, int]]] = []
        for v in range(n):
            nbrs = [(p, w) for p, w in topo.neighbors(v) if w != v]
            nbrs += [(Port(DA, j), w) for (u, w, j) in sorted(self.da_links) if u == v]
            self._adj.append(nbrs)
        rows, cols = [], []
        for v, nbrs in enumerate(self._adj):
            for _, w in nbrs:
                rows.append(v)
                cols.append(w)
        graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        dist = shortest_path(graph, method="D", directed=True, unweighted=True)
        self.dist = dist

    def distance(self, src: int, dst: int) -> int:
        return int(self.dist[src, dst])

    def neighbors(self, v: int) -> list[tuple[Port, int]]:
        return list(self._adj[v])

    def next_hops(self, cur: int, dst: int) -> list[tuple[Port, int]]:
        if cur == dst:
            return []
        best = min(self.dist[w, dst] for _, w in self._adj[cur])
        if not np.isfinite(best):
            return []
        return [(p, w) for p, w in self._adj[cur] if self.dist[w, dst] == best]

    def path(self, src: int, dst: int) -> list[int]:
        """One greedy path (lowest port at every hop)."""
        out = [src]
        cur = src
        while cur != dst:
            hops = self.next_hops(cur, dst)
            if not hops:
                raise ValueError(f"{dst} unreachable from {cur}")
            cur = min(hops, key=lambda h: port_key(h[0]))[1]
            out.append(cur)
        return out


def greedy_next_hops(cur, dst, da_links: Iterable = (), topo: StaticTopology | None = None) -> set[tuple[Port, int]]:
    """Next hops from cur toward dst. Addresses may be NodeAddress values, in
    which case the de Bruijn topology is taken from them."""
    if isinstance(cur, NodeAddress):
        topo = topo or DeBruijnTopology(cur.b, cur.d)
        cur = cur.value
    if isinstance(dst, NodeAddress):
        dst = dst.value
    if topo is None:
        raise TypeError("integer addresses need an explicit topology")
    if cur == dst:
        raise ValueError("current node is the destination")
    return set(Router(topo, da_links).next_hops(cur, dst))


# --- forwarding tables ------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Prefix:
    """The first ``length`` digits of an address (value holds just those)."""

    value: int
    length: int
    b: int
    d: int

    def matches(self, addr: int) -> bool:
        return addr // self.b ** (self.d - self.length) == self.value

    def covered(self) -> range:
        span = self.b ** (self.d - self.length)
        return range(self.value * span, (self.value + 1) * span)

    def children(self) -> list["Prefix"]:
        return [Prefix(self.value * self.b + y, self.length + 1, self.b, self.d) for y in range(self.b)]

    def __str__(self) -> str:
        if self.length == 0:
            return "*"
        digits = "".join(_digit_char(x) for x in to_digits(self.value, self.b, self.length))
        return digits + ("*" if self.length < self.d else "")

    def bits_per_digit(self) -> int:
        return max(1, math.ceil(math.log2(self.b)))

    def ipv4(self) -> str:
        """10.x.y.z/len with the address digits packed right after the
        first octet; hosts inside the rack use the remaining low bits."""
        w = self.bits_per_digit()
        bits = self.length * w
        value = (10 << 24) | (self.value << (24 - bits)) if bits else 10 << 24
        octets = ".".join(str((value >> s) & 0xFF) for s in (24, 16, 8, 0))
        return f"{octets}/{8 + bits}"


FORWARD, LOCAL, DROP = "forward", "local", "drop"


@dataclass(frozen=True)
class FibEntry:
    slot_label: int | None  # None matches any label (the final drop rule)
    prefix: Prefix | None  # None matches any destination
    ports: frozenset[Port] = frozenset()
    action: str = FORWARD

    def __post_init__(self):
        if self.action == FORWARD and not self.ports:
            raise ValueError("forwarding rule needs at least one port")

    @property
    def length(self) -> int:
        """Path-independent 'Len' column: digits matched, 0 for local."""
        if self.action == LOCAL or self.prefix is None:
            return 0
        return self.prefix.length

    def port_text(self) -> str:
        if self.action == LOCAL:
            return "Local"
        if self.action == DROP:
            return "drop"
        labels = [p.label for p in sorted(self.ports, key=port_key)]
        return labels[0] if len(labels) == 1 else "{" + ", ".join(labels) + "}"


@dataclass(frozen=True)
class FibTable:
    node: int
    entries: tuple[FibEntry, ...]
    topo: StaticTopology = field(compare=False, repr=False)
    da_links: frozenset[DaLink] = field(default=frozenset(), compare=False)
    rotor: RotorSchedule | None = field(default=None, compare=False)

    def __iter__(self) -> Iterator[FibEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def rules(self, slot_label: int = 0) -> list[FibEntry]:
        return [e for e in self.entries if e.slot_label == slot_label]

    def lookup(self, slot_label: int, dst: int) -> FibEntry:
        """Exact match on the slot label, then longest prefix match."""
        best: FibEntry | None = None
        for e in self.entries:
            if e.slot_label is not None and e.slot_label != slot_label:
                continue
            if e.prefix is not None and not e.prefix.matches(dst):
                continue
            if e.slot_label is None and e.prefix is None:
                if best is None:
                    best = e
                continue
            if best is None or best.prefix is None or e.prefix.length > best.prefix.length:
                best = e
        assert best is not None
        return best

    def static_da_rows(self) -> dict[str, FibEntry]:
        return {str(e.prefix): e for e in self.rules(0) if e.action == FORWARD}

    def diff(self, other: "FibTable") -> tuple[set[FibEntry], set[FibEntry]]:
        """(rules only in self, rules only in other)."""
        a, b = set(self.entries), set(other.entries)
        return a - b, b - a

    def to_csv(self, ipv4: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "slot_label", "prefix", "len", "ip", "ports", "action"])
        for i, e in enumerate(self.entries, start=1):
            label = "*" if e.slot_label is None else e.slot_label
            prefix = "*" if e.prefix is None else str(e.prefix)
            ip = "*" if e.prefix is None or not ipv4 else e.prefix.ipv4()
            ports = ";".join(p.label for p in sorted(e.ports, key=port_key))
            w.writerow([i, label, prefix, e.length, ip, ports, e.action])
        return buf.getvalue()


def _aggregate(node: int, ports_by_dst: Mapping[int, frozenset[Port]], topo: StaticTopology) -> list[FibEntry]:
    """Collapse every subtree whose destinations all share one port set (and
    that does not contain the node itself) into a single prefix rule."""
    out: list[FibEntry] = []

    def visit(p: Prefix) -> None:
        dsts = list(p.covered())
        if node not in dsts:
            sets = {ports_by_dst[x] for x in dsts}
            if len(sets) == 1:
                out.append(FibEntry(0, p, sets.pop(), FORWARD))
                return
        if p.length == topo.d:
            return
        for c in p.children():
            visit(c)

    visit(Prefix(0, 0, topo.b, topo.d))
    # descending by first covered address, the layout of a printed table
    out.sort(key=lambda e: e.prefix.covered().start, reverse=True)
    return out


def build_fib(
    node,
    topo: StaticTopology | None = None,
    da_links: Iterable = (),
    rotor: RotorSchedule | None = None,
    router: Router | None = None,
) -> FibTable:
    """Slot-0 rules for static/DA forwarding, one rule per (rotor slot label,
    rotor port), a local rule for the node's own prefix and a final drop."""
    if isinstance(node, NodeAddress):
        topo = topo or DeBruijnTopology(node.b, node.d)
        node = node.value
    if topo is None:
        raise TypeError("integer node needs an explicit topology")
    router = router or Router(topo, da_links)
    ports_by_dst = {}
    for dst in range(topo.n):
        if dst != node:
            ports_by_dst[dst] = frozenset(p for p, _ in router.next_hops(node, dst))
    entries = _aggregate(node, ports_by_dst, topo)
    own = Prefix(node, topo.d, topo.b, topo.d)
    entries.append(FibEntry(0, own, frozenset(), LOCAL))
    if rotor is not None and rotor.k_r > 0:
        for label in range(1, rotor.n):
            for j in range(rotor.k_r):
                peer = rotor.label_peer(j, label, node)
                entries.append(FibEntry(label, Prefix(peer, topo.d, topo.b, topo.d), frozenset({Port(ROTOR, j)})))
    entries.append(FibEntry(None, None, frozenset(), DROP))
    return FibTable(node, tuple(entries), topo, router.da_links, rotor)


@dataclass(frozen=True)
class DaChange:
    op: str  # "add" | "remove"
    link: tuple

    def __post_init__(self):
        if self.op not in ("add", "remove"):
            raise ValueError("op must be 'add' or 'remove'")


def apply_da_change(fib: FibTable, change: DaChange) -> FibTable:
    """Rebuild the slot-0 rules after one demand-aware link change; rotor,
    local and drop rules carry over untouched."""
    links = set(fib.da_links)
    u, w = int(change.link[0]), int(change.link[1])
    match = {l for l in links if l[0] == u and l[1] == w and (len(change.link) < 3 or l[2] == change.link[2])}
    if change.op == "add":
        if match:
            return fib
        links = set(normalize_da_links(list(links) + [tuple(change.link)]))
    else:
        if not match:
            warnings.warn(f"demand-aware link {u}->{w} not present; nothing removed", RuntimeWarning, stacklevel=2)
            return fib
        links -= match
    fresh = build_fib(fib.node, fib.topo, links, None)
    slot0 = [e for e in fresh.entries if e.slot_label == 0]
    rest = [e for e in fib.entries if e.slot_label != 0]
    return FibTable(fib.node, tuple(slot0 + rest), fib.topo, frozenset(links), fib.rotor)


def all_fibs(topo: StaticTopology, da_links: Iterable = (), rotor: RotorSchedule | None = None) -> list[FibTable]:
    router = Router(topo, da_links)
    return [build_fib(v, topo, da_links, rotor, router=router) for v in range(topo.n)]


def format_table(rows: Sequence[FibEntry]) -> list[tuple[str, str, int, str]]:
    """(prefix, ports, len, ip) tuples in printed-table layout."""
    return [(str(e.prefix), e.port_text(), e.length, e.prefix.ipv4()) for e in rows if e.prefix is not None]
