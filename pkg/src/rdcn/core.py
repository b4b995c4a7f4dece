"""Shared domain types and matrix helpers.

Volumes in the analytic code are float64; the simulator works in integer
bytes and converts at its boundary.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SATURATION_RTOL = 1e-9


class DimensionError(ValueError):
    pass


class DemandMatrix:
    """An n x n matrix of non-negative traffic volumes between ToRs."""

    __slots__ = ("_entries",)

    def __init__(self, entries):
        arr = np.array(entries, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionError(f"demand matrix must be square, got shape {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("demand matrix entries must be finite and non-negative")
        arr.flags.writeable = False
        self._entries = arr

    @classmethod
    def zeros(cls, n: int) -> "DemandMatrix":
        return cls(np.zeros((n, n)))

    @property
    def entries(self) -> np.ndarray:
        return self._entries

    @property
    def n(self) -> int:
        return self._entries.shape[0]

    @property
    def total(self) -> float:
        """|M|, the sum of all entries."""
        return math.fsum(self._entries.ravel())

    def row_col_sums(self):
        return row_col_sums(self)

    def line_sum(self) -> float:
        """The common row/column sum L of a saturated matrix (|M|/n otherwise)."""
        return self.total / self.n

    def is_saturated(self, rtol: float = SATURATION_RTOL) -> bool:
        rows, cols = row_col_sums(self)
        ref = max(max(rows), max(cols))
        if ref == 0:
            return True
        tol = rtol * ref
        return all(abs(x - ref) <= tol for x in rows) and all(abs(x - ref) <= tol for x in cols)

    def __add__(self, other: "DemandMatrix") -> "DemandMatrix":
        return DemandMatrix(self._entries + _as_array(other))

    def __sub__(self, other: "DemandMatrix") -> "DemandMatrix":
        return DemandMatrix(np.maximum(self._entries - _as_array(other), 0.0))

    def __mul__(self, factor: float) -> "DemandMatrix":
        return DemandMatrix(self._entries * factor)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemandMatrix):
            return NotImplemented
        return np.array_equal(self._entries, other._entries)

    def allclose(self, other, rtol: float = 1e-9) -> bool:
        b = _as_array(other)
        scale = max(float(np.abs(self._entries).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-300)
        return bool(np.all(np.abs(self._entries - b) <= rtol * scale))

    def __repr__(self) -> str:
        return f"DemandMatrix(n={self.n}, total={self.total:g})"


def _as_array(m) -> np.ndarray:
    if isinstance(m, DemandMatrix):
        return m.entries
    return np.asarray(m, dtype=float)


@dataclass(frozen=True)
class ScaledPermutation:
    """A permutation of ToRs carrying a volume coefficient.

    ``values`` holds per-source volumes when the extracted entries are not all
    equal (capped extraction on non-saturated matrices); ``alpha`` is then the
    mean row volume.
    """

    perm: tuple[int, ...]
    alpha: float
    values: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        perm = tuple(int(p) for p in self.perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"not a permutation: {perm}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        object.__setattr__(self, "perm", perm)
        if self.values is not None:
            vals = tuple(float(v) for v in self.values)
            if len(vals) != len(perm) or any(v < 0 for v in vals):
                raise ValueError("values must be non-negative and one per source")
            object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def volume(self) -> float:
        if self.values is not None:
            return math.fsum(self.values)
        return self.alpha * self.n

    def entry_values(self) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values)
        return np.full(self.n, self.alpha)

    def matrix(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[np.arange(self.n), self.perm] = self.entry_values()
        return out


def row_col_sums(m) -> tuple[list[float], list[float]]:
    arr = _as_array(m)
    rows = [math.fsum(r) for r in arr]
    cols = [math.fsum(c) for c in arr.T]
    return rows, cols


def assemble(perms: Iterable[ScaledPermutation], n: int) -> DemandMatrix:
    out = np.zeros((n, n))
    idx = np.arange(n)
    for p in perms:
        if p.n != n:
            raise DimensionError(f"permutation over {p.n} ToRs, expected {n}")
        out[idx, p.perm] += p.entry_values()
    return DemandMatrix(out)


@dataclass(frozen=True)
class TopologyConfig:
    """Port partition of each ToR's k uplinks into static/rotor/demand-aware."""

    n: int
    k_s: int
    k_r: int
    k_d: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two ToRs")
        if min(self.k_s, self.k_r, self.k_d) < 0:
            raise ValueError("port counts must be non-negative")
        if self.k < 1:
            raise ValueError("need at least one uplink")

    @property
    def k(self) -> int:
        return self.k_s + self.k_r + self.k_d

    @property
    def hosts(self) -> int:
        return self.n * self.k

    def with_ports(self, k_r: int, k_d: int) -> "TopologyConfig":
        if k_r + k_d != self.k_r + self.k_d:
            raise ValueError("repartitioning must keep k constant")
        return TopologyConfig(self.n, self.k_s, k_r, k_d)


@dataclass(frozen=True)
class SystemParams:
    """Link rate and reconfiguration timing.

    r in bits/s; delta, R_r, R_d in seconds.
    """

    r: float = 10e9
    delta: float = 54.56 * 1.8e-6
    R_r: float = 1.8e-6
    R_d: float = 1e-3
    k: int = 8
    k_r: int = 1
    n: int = 64

    def __post_init__(self):
        if self.r <= 0 or self.delta <= 0 or self.R_r <= 0 or self.R_d < 0:
            raise ValueError("rates and times must be positive")

    @property
    def eta(self) -> float:
        return self.delta / (self.delta + self.R_r)

    @property
    def slot(self) -> float:
        return self.delta + self.R_r

    @property
    def C(self) -> float:
        """Slot active capacity in bits."""
        return self.r * self.delta

    @property
    def C_bar(self) -> float:
        """Per-host rotor send capacity per slot."""
        return self.C * self.k_r / self.k

    @property
    def hosts(self) -> int:
        return self.n * self.k

    @classmethod
    def with_eta(cls, eta: float, r: float = 10e9, R_d: float = 1e-3, R_r: float = 1.8e-6, **kw) -> "SystemParams":
        """Build params whose duty cycle is exactly ``eta`` for the given R_r."""
        if not 0 < eta < 1:
            raise ValueError("duty cycle must lie in (0, 1)")
        return cls(r=r, delta=R_r * eta / (1 - eta), R_r=R_r, R_d=R_d, **kw)


def read_matrix_csv(path: str | Path) -> DemandMatrix:
    text = Path(path).read_text()
    return parse_matrix_csv(text)


def parse_matrix_csv(text: str) -> DemandMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].strip().startswith("n="):
        raise ValueError("matrix file must start with a 'n=<int>' header")
    n = int(lines[0].strip()[2:])
    rows = list(csv.reader(lines[1:]))
    if len(rows) != n:
        raise DimensionError(f"header says n={n} but found {len(rows)} rows")
    for i, row in enumerate(rows):
        if len(row) != n:
            raise DimensionError(f"row {i} has {len(row)} entries, expected {n}")
    return DemandMatrix([[float(x) for x in row] for row in rows])


def format_matrix_csv(m) -> str:
    arr = _as_array(m)
    buf = io.StringIO()
    buf.write(f"n={arr.shape[0]}\n")
    w = csv.writer(buf, lineterminator="\n")
    for row in arr:
        w.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def write_matrix_csv(m, path: str | Path) -> None:
    Path(path).write_text(format_matrix_csv(m))


def total_volume(m: DemandMatrix | Sequence[Sequence[float]] | float) -> float:
    if isinstance(m, (int, float)):
        return float(m)
    if isinstance(m, DemandMatrix):
        return m.total
    return math.fsum(np.asarray(m, dtype=float).ravel())
