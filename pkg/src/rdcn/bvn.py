"""Birkhoff-von Neumann decomposition and demand completion time (DCT) analysis.

Three idealised systems are compared, all with a single dynamic port per ToR:

* da-net    -- every scaled permutation is served by a demand-aware matching,
               paying ``alpha / r + R_d`` each;
* rotor-net -- all traffic goes two hops through rotor matchings, costing
               ``2 / (eta * r)`` per unit of row volume;
* mix-net   -- each permutation independently goes to whichever is cheaper
               (the greedy mix partition, GMN).

All DCT totals are accumulated with :func:`math.fsum` over per-permutation
terms in extraction order so that the mix-net never exceeds either pure
system in floating point either.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .core import DemandMatrix, ScaledPermutation, SystemParams, assemble

# entries this far below the largest input entry are rounding dust
_DUST = 1e-10


class CutoffRule(str, Enum):
    NONE = "none"
    MEAN_OF_MATCHING = "mean_of_matching"


@dataclass(frozen=True)
class Decomposition:
    perms: tuple[ScaledPermutation, ...]
    residual: DemandMatrix
    total: float

    @property
    def m(self) -> int:
        return len(self.perms)

    @property
    def n(self) -> int:
        return self.residual.n

    @property
    def alphas(self) -> list[float]:
        return [p.alpha for p in self.perms]

    @property
    def decomposed_volume(self) -> float:
        return math.fsum(p.volume for p in self.perms)

    def assembled(self) -> DemandMatrix:
        return assemble(self.perms, self.n)


@dataclass(frozen=True)
class MixPartition:
    p_da: tuple[ScaledPermutation, ...]
    p_rot: tuple[ScaledPermutation, ...]
    M_da: DemandMatrix
    M_rot: DemandMatrix
    residual: DemandMatrix
    dct_da_part: float
    dct_rot_part: float

    @property
    def dct(self) -> float:
        return self.dct_da_part + self.dct_rot_part


def has_perfect_matching(support: np.ndarray) -> bool:
    n = support.shape[0]
    if not (support.any(axis=0).all() and support.any(axis=1).all()):
        return False
    rows, cols = np.nonzero(support)
    indptr = np.zeros(n + 1, dtype=np.int32)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    graph = csr_matrix((np.ones(len(cols), dtype=np.int8), cols.astype(np.int32), indptr), shape=(n, n))
    match = maximum_bipartite_matching(graph, perm_type="column")
    return int(np.count_nonzero(match >= 0)) == n


def max_weight_perfect_matching(weights: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
    """Column assigned to each row in a maximum-weight perfect matching that
    only uses ``support`` cells. Caller must ensure one exists."""
    if support is None:
        support = weights > 0
    big = (float(np.abs(weights).max(initial=0.0)) + 1.0) * (weights.shape[0] + 1) * 4.0
    cost = np.where(support, -weights, big)
    rows, cols = linear_sum_assignment(cost)
    if not np.all(support[rows, cols]):
        raise ValueError("no perfect matching on the given support")
    out = np.empty(weights.shape[0], dtype=int)
    out[rows] = cols
    return out


def bottleneck_threshold(A: np.ndarray) -> float:
    """Largest t such that the entries >= t still admit a perfect matching
    (0.0 if the positive entries admit none)."""
    vals = np.unique(A[A > 0])
    if vals.size == 0 or not has_perfect_matching(A > 0):
        return 0.0
    lo, hi = 0, vals.size - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if has_perfect_matching(A >= vals[mid]):
            lo = mid
        else:
            hi = mid - 1
    return float(vals[lo])


def bvn_decompose(
    M,
    stop_fraction: float = 0.0,
    cutoff_rule: CutoffRule | str = CutoffRule.NONE,
    allow_unsaturated: bool = False,
) -> Decomposition:
    """Greedy decomposition by repeated maximum-weight perfect matchings.

    Each step first finds the largest bottleneck value any perfect matching
    can reach, then takes the maximum-weight matching among entries at or
    above it. This keeps the extracted coefficients non-increasing.

    Stops once the remaining volume is at most ``stop_fraction`` of the input
    or the positive entries no longer admit a perfect matching. With
    ``allow_unsaturated`` and the mean-of-matching cutoff it instead carries
    on with the heaviest permutation even where it crosses empty cells.
    """
    if not 0.0 <= stop_fraction < 1.0:
        raise ValueError("stop_fraction must lie in [0, 1)")
    cutoff_rule = CutoffRule(cutoff_rule)
    dm = M if isinstance(M, DemandMatrix) else DemandMatrix(M)
    A = dm.entries.copy()
    n = A.shape[0]
    total = dm.total
    dust = _DUST * float(A.max(initial=0.0))
    rows = np.arange(n)
    perms: list[ScaledPermutation] = []
    while True:
        remaining = math.fsum(A.ravel())
        if remaining == 0.0 or remaining <= stop_fraction * total:
            break
        t = bottleneck_threshold(A)
        if t > 0.0:
            support = A >= t
        elif allow_unsaturated and cutoff_rule is CutoffRule.MEAN_OF_MATCHING:
            support = np.ones_like(A, dtype=bool)
        else:
            break
        cols = max_weight_perfect_matching(A, support)
        vals = A[rows, cols]
        if cutoff_rule is CutoffRule.NONE:
            alpha = float(vals.min())
            A[rows, cols] -= alpha
            perms.append(ScaledPermutation(tuple(cols), alpha))
        else:
            take = np.minimum(vals, vals.mean())
            A[rows, cols] -= take
            perms.append(ScaledPermutation(tuple(cols), float(take.mean()), tuple(take)))
    if A.max(initial=0.0) <= dust:
        A[:] = 0.0
    return Decomposition(tuple(perms), DemandMatrix(A), total)


# --- DCT formulas --------------------------------------------------------------


def _da_term(alpha: float, params: SystemParams) -> float:
    return alpha / params.r + params.R_d


def _rot_term(alpha: float, params: SystemParams) -> float:
    return (2.0 / (params.eta * params.r)) * alpha


def alpha_threshold(params: SystemParams) -> float:
    """Row volume above which a single permutation is cheaper on da-net."""
    eta = params.eta
    return params.R_d * params.r * eta / (2.0 - eta)


def dct_da(x, params: SystemParams, *, n: int | None = None, m: int | None = None) -> float:
    """DCT on da-net.

    ``x`` is a :class:`Decomposition` (summed per permutation) or a total
    volume together with ``n`` and the permutation count ``m``.
    """
    if isinstance(x, Decomposition):
        return math.fsum(_da_term(p.alpha, params) for p in x.perms)
    if n is None or m is None:
        raise TypeError("volume form needs n and m")
    return float(x) / (n * params.r) + m * params.R_d


def dct_rot(x, params: SystemParams, *, n: int | None = None) -> float:
    """Two-hop Valiant DCT on rotor-net: 2 |M| / (n eta r)."""
    if isinstance(x, Decomposition):
        return math.fsum(_rot_term(p.alpha, params) for p in x.perms)
    if isinstance(x, DemandMatrix):
        return _rot_term(x.total / x.n, params)
    if n is None:
        raise TypeError("volume form needs n")
    return _rot_term(float(x) / n, params)


def greedy_mixnet(
    M,
    params: SystemParams,
    stop_fraction: float = 0.0,
    cutoff_rule: CutoffRule | str = CutoffRule.NONE,
    decomposition: Decomposition | None = None,
) -> tuple[MixPartition, float]:
    """Split each permutation of a decomposition between da-net and rotor-net.

    A permutation goes to da-net when its da cost is no larger than its rotor
    cost (ties go to da-net).
    """
    dec = decomposition if decomposition is not None else bvn_decompose(M, stop_fraction, cutoff_rule)
    p_da: list[ScaledPermutation] = []
    p_rot: list[ScaledPermutation] = []
    da_terms: list[float] = []
    rot_terms: list[float] = []
    for p in dec.perms:
        a, b = _da_term(p.alpha, params), _rot_term(p.alpha, params)
        if a <= b:
            p_da.append(p)
            da_terms.append(a)
        else:
            p_rot.append(p)
            rot_terms.append(b)
    n = dec.n
    part = MixPartition(
        p_da=tuple(p_da),
        p_rot=tuple(p_rot),
        M_da=assemble(p_da, n),
        M_rot=assemble(p_rot, n),
        residual=dec.residual,
        dct_da_part=math.fsum(da_terms),
        dct_rot_part=math.fsum(rot_terms),
    )
    return part, gmn_dct(dec, params)


def gmn_dct(dec: Decomposition, params: SystemParams, scale: float = 1.0) -> float:
    return math.fsum(min(_da_term(p.alpha * scale, params), _rot_term(p.alpha * scale, params)) for p in dec.perms)


# --- case study M(n, m, u, L) ---------------------------------------------------


def _check_case(n: int, m: int, u: float, m_max: int | None = None) -> None:
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie strictly between 0 and 1")
    m_max = n - 2 if m_max is None else m_max
    if not 1 <= m <= m_max:
        raise ValueError(f"m must satisfy 1 <= m <= {m_max}")


def case_study_matrix(n: int, m: int, u: float, L: float) -> DemandMatrix:
    """Uniform share u spread over all off-diagonal cells plus m disjoint
    cyclic-shift permutations carrying the remaining (1 - u) L per row."""
    _check_case(n, m, u)
    small = u * L / (n - 1)
    big = small + (1.0 - u) * L / m
    A = np.full((n, n), small)
    np.fill_diagonal(A, 0.0)
    idx = np.arange(n)
    for s in range(1, m + 1):
        A[idx, (idx + s) % n] = big
    return DemandMatrix(A)


def dct_case_da(n: int, L: float, params: SystemParams) -> float:
    return L / params.r + (n - 1) * params.R_d


def dct_case_rot(L: float, params: SystemParams) -> float:
    return 2.0 * L / (params.eta * params.r)


def dct_ahor(n: int, m: int, u: float, L: float, params: SystemParams, variant: str = "prose") -> float:
    """Horizontal split: the m dense permutations to da-net, the uniform
    part to rotor-net.

    ``variant="displayed"`` swaps u and 1 - u, reproducing the alternative
    closed form.
    """
    _check_case(n, m, u)
    if variant == "prose":
        da_share, rot_share = 1.0 - u, u
    elif variant == "displayed":
        da_share, rot_share = u, 1.0 - u
    else:
        raise ValueError(f"unknown variant {variant!r}")
    eta, r = params.eta, params.r
    return da_share * L / r + m * params.R_d + rot_share * 2.0 * L / (eta * r)


def dct_aver(n: int, m: int, u: float, L: float, params: SystemParams) -> float:
    """Vertical split: the m largest permutations (dense part plus their share
    of the uniform part) to da-net, the other n - 1 - m to rotor-net."""
    _check_case(n, m, u, m_max=n - 1)
    eta, r = params.eta, params.r
    da = (L * m / r) * ((1.0 - u) / m + u / (n - 1)) + m * params.R_d
    rot = (2.0 * L * u / (eta * r)) * ((n - 1 - m) / (n - 1))
    return da + rot


def crossover_load(n: int, params: SystemParams) -> float:
    """Normalised load L/r at which da-net and rotor-net DCTs coincide."""
    eta = params.eta
    return eta * (n - 1) * params.R_d / (2.0 - eta)


@lru_cache(maxsize=256)
def _unit_case_decomposition(n: int, m: int, u: float) -> Decomposition:
    return bvn_decompose(case_study_matrix(n, m, u, 1.0))


class MixAlg(str, Enum):
    A_VER = "a_ver"
    A_HOR = "a_hor"
    GMN = "gmn"


@dataclass
class DctMap:
    u_values: np.ndarray
    loads: np.ndarray
    regions: np.ndarray  # str: 'da' | 'rot' | 'mix'
    dct_da: np.ndarray
    dct_rot: np.ndarray
    dct_mix: np.ndarray
    boundary: float
    mix_alg: MixAlg

    def rows(self) -> Iterable[tuple]:
        for i, u in enumerate(self.u_values):
            for j, x in enumerate(self.loads):
                yield (float(u), float(x), self.regions[i, j], self.dct_da[i, j], self.dct_rot[i, j], self.dct_mix[i, j])


def classify_cell(da: float, rot: float, mix: float) -> str:
    """Lowest DCT wins; mix-net only counts when strictly better."""
    best_pure = "da" if da <= rot else "rot"
    if mix < min(da, rot):
        return "mix"
    return best_pure


def dct_map(
    u_values: Sequence[float],
    loads: Sequence[float],
    n: int,
    m: int,
    params: SystemParams,
    mix_alg: MixAlg | str = MixAlg.A_VER,
) -> DctMap:
    """Region map over (uniform share u, normalised load L/r)."""
    mix_alg = MixAlg(mix_alg)
    us = np.asarray(u_values, dtype=float)
    xs = np.asarray(loads, dtype=float)
    shape = (len(us), len(xs))
    da, rot, mix = np.empty(shape), np.empty(shape), np.empty(shape)
    regions = np.empty(shape, dtype=object)
    for i, u in enumerate(us):
        dec = _unit_case_decomposition(n, m, float(u)) if mix_alg is MixAlg.GMN else None
        for j, x in enumerate(xs):
            L = x * params.r
            da[i, j] = dct_case_da(n, L, params)
            rot[i, j] = dct_case_rot(L, params)
            if mix_alg is MixAlg.A_VER:
                mix[i, j] = dct_aver(n, m, u, L, params)
            elif mix_alg is MixAlg.A_HOR:
                mix[i, j] = dct_ahor(n, m, u, L, params)
            else:
                mix[i, j] = gmn_dct(dec, params, scale=L)
            regions[i, j] = classify_cell(da[i, j], rot[i, j], mix[i, j])
    return DctMap(us, xs, regions, da, rot, mix, crossover_load(n, params), mix_alg)


# --- empirical trace pipeline ----------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    arrival: float
    src: int
    dst: int
    volume: float  # bits
    tag: str = "skewed"


@dataclass
class WindowDct:
    index: int
    gmn: float
    ahor: float
    da: float
    rot: float
    gmn_da_part: float
    gmn_rot_part: float
    volume: float
    factor: float

    def region(self, fraction: float = 1.0 / 12.0) -> str:
        """'da' when rotor-net carries under ``fraction`` of GMN's DCT, 'rot'
        symmetrically, otherwise 'mix'."""
        if self.gmn == 0:
            return "da"
        if self.gmn_rot_part < fraction * self.gmn:
            return "da"
        if self.gmn_da_part < fraction * self.gmn:
            return "rot"
        return "mix"


def window_matrices(records: Iterable[TraceRecord], n: int, window: float) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Accumulate per-window ToR matrices (all traffic, uniform-tagged part)."""
    recs = list(records)
    if not recs:
        return [], []
    last = max(int(r.arrival // window) for r in recs)
    full = [np.zeros((n, n)) for _ in range(last + 1)]
    uni = [np.zeros((n, n)) for _ in range(last + 1)]
    for r in recs:
        if r.src == r.dst:
            continue
        w = int(r.arrival // window)
        full[w][r.src, r.dst] += r.volume
        if r.tag == "uniform":
            uni[w][r.src, r.dst] += r.volume
    return full, uni


def ahor_dct(dec: Decomposition, uniform: np.ndarray, full: np.ndarray, params: SystemParams) -> float:
    """A_hor over a decomposition: the uniform-tagged share of every
    permutation rides rotor-net, the rest of it needs a da-net matching.

    A permutation with both shares pays its da cost plus the rotor premium
    ``f alpha (2 / eta - 1) / r`` on its uniform fraction f.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(full > 0, uniform / full, 0.0)
    rows = np.arange(dec.n)
    terms = []
    for p in dec.perms:
        vals = p.entry_values()
        f_vol = math.fsum(vals * frac[rows, p.perm])
        f = min(1.0, f_vol / math.fsum(vals)) if p.alpha > 0 else 0.0
        if f >= 1.0:
            terms.append(_rot_term(p.alpha, params))
        elif f <= 0.0:
            terms.append(_da_term(p.alpha, params))
        else:
            premium = f * p.alpha * (2.0 / params.eta - 1.0) / params.r
            terms.append(_da_term(p.alpha, params) + premium)
    return math.fsum(terms)


def trace_pipeline(
    records: Iterable[TraceRecord],
    n: int,
    window: float,
    L_s: float,
    params: SystemParams,
    target_volume: float | None = None,
) -> list[WindowDct]:
    """Per-window DCTs of GMN, A_hor, da-net and rotor-net for a flow trace.

    All window matrices share one scale factor mapping their global mean
    volume onto ``target_volume`` (default: one window of line rate per ToR).
    Trace windows are rarely saturated, so the decomposition may run through
    matchings that cross empty cells until only ``L_s`` of the volume is left.
    """
    full, uni = window_matrices(records, n, window)
    if not full:
        return []
    totals = [math.fsum(m.ravel()) for m in full]
    mean_total = math.fsum(totals) / len(totals)
    if target_volume is None:
        target_volume = window * params.r * n
    factor = target_volume / mean_total if mean_total > 0 else 1.0
    out: list[WindowDct] = []
    for w, (mf, mu) in enumerate(zip(full, uni)):
        A = mf * factor
        U = mu * factor
        dec = bvn_decompose(A, L_s, CutoffRule.MEAN_OF_MATCHING, allow_unsaturated=True)
        part, gmn = greedy_mixnet(A, params, decomposition=dec)
        da = dct_da(dec, params)
        rot = dct_rot(DemandMatrix(A), params)
        ahor = ahor_dct(dec, U, A, params)
        out.append(WindowDct(w, gmn, ahor, da, rot, part.dct_da_part, part.dct_rot_part, float(A.sum()), factor))
    return out
