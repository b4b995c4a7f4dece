from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdcn.bvn import (
    CutoffRule,
    MixAlg,
    TraceRecord,
    alpha_threshold,
    bvn_decompose,
    case_study_matrix,
    classify_cell,
    crossover_load,
    dct_ahor,
    dct_aver,
    dct_case_da,
    dct_case_rot,
    dct_da,
    dct_map,
    dct_rot,
    greedy_mixnet,
    has_perfect_matching,
    max_weight_perfect_matching,
    trace_pipeline,
)
from rdcn.core import DemandMatrix, ScaledPermutation, SystemParams, assemble

P10 = SystemParams.with_eta(0.98, r=10e9, R_d=1e-3)


def random_doubly_stochastic(rng, n, terms=None):
    terms = terms or int(rng.integers(1, 2 * n + 1))
    w = rng.random(terms)
    w /= w.sum()
    A = np.zeros((n, n))
    for a in w:
        A[np.arange(n), rng.permutation(n)] += a
    return A


# --- decomposition ---------------------------------------------------------------


def test_two_by_two_example():
    dec = bvn_decompose([[0.3, 0.7], [0.7, 0.3]])
    assert [p.perm for p in dec.perms] == [(1, 0), (0, 1)]
    assert dec.alphas == pytest.approx([0.7, 0.3], abs=1e-15)
    assert dec.residual.total == 0.0


def test_scaled_identity_is_one_perm():
    dec = bvn_decompose(5 * np.eye(4))
    assert dec.m == 1 and dec.perms[0].perm == (0, 1, 2, 3) and dec.perms[0].alpha == 5.0
    assert dec.residual.total == 0.0


def test_zero_matrix_gives_empty_decomposition():
    dec = bvn_decompose(np.zeros((3, 3)))
    assert dec.m == 0 and dec.residual.total == 0.0


def test_case_matrix_has_two_alpha_sizes():
    M = case_study_matrix(8, 2, 0.5, 1.0)
    dec = bvn_decompose(M)
    vals = sorted({round(a, 12) for a in dec.alphas})
    assert vals == pytest.approx([0.5 / 7, 0.25 + 0.5 / 7], rel=1e-9)
    # brute-force check of the entry multiset the decomposition must cover
    entries = M.entries[~np.eye(8, dtype=bool)]
    assert sorted({round(x, 12) for x in entries}) == pytest.approx(vals, rel=1e-9)
    assert dec.residual.total == pytest.approx(0.0, abs=1e-12)


def test_case_matrix_n64_recovers_two_alphas():
    dec = bvn_decompose(case_study_matrix(64, 20, 0.5, 1.0))
    assert len({round(a, 12) for a in dec.alphas}) == 2


def test_stop_fraction_leaves_residual():
    rng = np.random.default_rng(0)
    A = random_doubly_stochastic(rng, 6, terms=8)
    dec = bvn_decompose(A, stop_fraction=0.3)
    assert dec.residual.total <= 0.3 * A.sum() + 1e-12
    assert dec.residual.total > 0
    assert np.allclose(dec.assembled().entries + dec.residual.entries, A, rtol=1e-9, atol=1e-12)


def test_mean_cutoff_caps_each_value():
    A = np.array([[0.0, 9.0, 1.0], [1.0, 0.0, 9.0], [9.0, 1.0, 0.0]])
    dec = bvn_decompose(A, cutoff_rule=CutoffRule.MEAN_OF_MATCHING)
    first = dec.perms[0]
    assert first.perm == (1, 2, 0)
    assert first.values == (9.0, 9.0, 9.0)
    assert np.allclose(dec.assembled().entries + dec.residual.entries, A)


def test_unsaturated_continuation_reaches_stop_fraction():
    # no perfect matching over the positive cells: the strict rule stops at once
    A = np.array([[0.0, 4.0, 1.0], [0.0, 0.0, 2.0], [0.0, 3.0, 0.0]])
    strict = bvn_decompose(A, 0.05, CutoffRule.MEAN_OF_MATCHING)
    assert strict.m == 0
    loose = bvn_decompose(A, 0.05, CutoffRule.MEAN_OF_MATCHING, allow_unsaturated=True)
    assert loose.m > 0 and loose.residual.total <= 0.05 * A.sum() + 1e-12
    assert np.allclose(loose.assembled().entries + loose.residual.entries, A, atol=1e-12)


def test_matching_helpers():
    support = np.array([[1, 1], [0, 1]], dtype=bool)
    assert has_perfect_matching(support)
    assert not has_perfect_matching(np.array([[1, 1], [0, 0]], dtype=bool))
    W = np.array([[1.0, 5.0], [5.0, 1.0]])
    assert list(max_weight_perfect_matching(W)) == [1, 0]
    with pytest.raises(ValueError):
        max_weight_perfect_matching(W, np.array([[1, 0], [1, 0]], dtype=bool))


@given(st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_round_trip_and_monotone_alphas(n, seed):
    rng = np.random.default_rng(seed)
    A = random_doubly_stochastic(rng, n)
    dec = bvn_decompose(A)
    assert np.allclose(dec.assembled().entries + dec.residual.entries, A, rtol=1e-9, atol=1e-12)
    assert dec.residual.total == 0.0
    assert all(a >= b - 1e-12 for a, b in zip(dec.alphas, dec.alphas[1:]))
    assert dec.m <= n * n
    # saturated input: the coefficients sum to the line sum |M|/n
    assert math.fsum(dec.alphas) == pytest.approx(A.sum() / n, rel=1e-9)


# --- DCT formulas ------------------------------------------------------------------


def test_dct_da_examples():
    p = SystemParams.with_eta(0.98, r=10e9, R_d=1e-3)
    assert dct_da(4 * 1e9, p, n=4, m=3) == pytest.approx(0.103, rel=1e-12)
    assert dct_da(0.0, p, n=4, m=0) == 0.0
    dec = bvn_decompose(9.61e6 * np.eye(3)[[1, 2, 0]])
    assert dct_da(dec, p) == pytest.approx(0.001961, rel=1e-12)
    with pytest.raises(TypeError):
        dct_da(1.0, p)


def test_dct_rot_examples():
    p = SystemParams.with_eta(0.98, r=10e9)
    assert dct_rot(4e9, p, n=4) == pytest.approx(2 * 0.1 / 0.98, rel=1e-12)
    assert dct_rot(DemandMatrix.zeros(5), p) == 0.0


def test_dct_rot_of_case_matrix_depends_on_load_only():
    p = SystemParams.with_eta(0.98, r=10e9)
    L = 3e9
    vals = [dct_rot(case_study_matrix(16, m, u, L), p) for m in (1, 5, 14) for u in (0.1, 0.5, 0.9)]
    assert vals == pytest.approx([2 * L / (0.98 * 10e9)] * len(vals), rel=1e-12)


def test_alpha_threshold_and_single_perm_assignment():
    assert alpha_threshold(P10) == pytest.approx(1e-3 * 10e9 * 0.98 / 1.02, rel=1e-12)
    assert alpha_threshold(P10) == pytest.approx(9.6078e6, rel=1e-4)
    big = 20e6 * np.eye(4)[[1, 2, 3, 0]]
    part, dct = greedy_mixnet(big, P10)
    assert len(part.p_da) == 1 and not part.p_rot
    assert dct == pytest.approx(0.003, rel=1e-12)
    assert dct < dct_rot(DemandMatrix(big), P10) == pytest.approx(0.0040816, rel=1e-4)
    part, _ = greedy_mixnet(1e6 * np.eye(4)[[1, 2, 3, 0]], P10)
    assert len(part.p_rot) == 1 and not part.p_da


def test_gmn_tie_goes_to_da():
    a = alpha_threshold(P10)
    part, _ = greedy_mixnet(a * np.eye(2)[[1, 0]], P10)
    assert len(part.p_da) == 1


def test_ahor_and_aver_examples():
    p = SystemParams.with_eta(0.98, r=10e9, R_d=1e-3)
    L = 0.5 * p.r
    assert dct_ahor(64, 20, 0.5, L, p) == pytest.approx(0.25 + 0.02 + 0.5 / 0.98, rel=1e-12)
    assert dct_ahor(64, 20, 0.5, L, p) == pytest.approx(0.7802, abs=1e-4)
    displayed = dct_ahor(64, 20, 0.3, L, p, variant="displayed")
    assert displayed != pytest.approx(dct_ahor(64, 20, 0.3, L, p))
    assert dct_aver(64, 20, 0.5, L, p) == pytest.approx(0.6976, abs=1e-4)
    # u close to 1: essentially the pure rotor term plus m R_d
    assert dct_ahor(64, 20, 1 - 1e-12, L, p) == pytest.approx(2 * 0.5 / 0.98 + 0.02, rel=1e-9)
    # m = n - 1: nothing left for rotor-net
    assert dct_aver(64, 63, 0.4, L, p) == pytest.approx(0.5 + 63e-3, rel=1e-12)
    with pytest.raises(ValueError):
        dct_ahor(64, 20, 0.5, L, p, variant="other")


def test_case_matrix_examples():
    M = case_study_matrix(4, 1, 0.5, 1.0).entries
    expected = np.full((4, 4), 1 / 6)
    np.fill_diagonal(expected, 0)
    expected[np.arange(4), (np.arange(4) + 1) % 4] += 0.5
    assert np.allclose(M, expected, rtol=1e-15)
    assert np.allclose(M.sum(axis=0), 1) and np.allclose(M.sum(axis=1), 1)
    for u in (0.0, 1.0):
        with pytest.raises(ValueError):
            case_study_matrix(4, 1, u, 1.0)
    with pytest.raises(ValueError):
        case_study_matrix(4, 3, 0.5, 1.0)


@pytest.mark.parametrize("n,m,u", [(8, 2, 0.5), (16, 5, 0.3), (32, 10, 0.8)])
def test_eq5_da_of_case_matrix(n, m, u):
    L = 2e9
    dec = bvn_decompose(case_study_matrix(n, m, u, L))
    assert dec.m == n - 1
    assert dct_da(dec, P10) == pytest.approx(dct_case_da(n, L, P10), rel=1e-9)
    assert dct_case_rot(L, P10) == pytest.approx(dct_rot(case_study_matrix(n, m, u, L), P10), rel=1e-12)


def test_crossover_examples():
    p = SystemParams.with_eta(0.98, R_d=10e-3)
    assert crossover_load(64, p) == pytest.approx(0.98 * 63 * 0.01 / 1.02, rel=1e-12)
    assert crossover_load(64, p) == pytest.approx(0.6053, abs=1e-4)
    p1 = SystemParams.with_eta(0.98, R_d=1e-3)
    assert crossover_load(64, p1) == pytest.approx(0.06053, abs=1e-5)


def test_dct_map_regions():
    p = SystemParams.with_eta(0.98, r=10e9, R_d=10e-3)
    dm = dct_map([0.1, 0.9], [0.05, 0.95], 64, 5, p, "a_ver")
    rows = list(dm.rows())
    assert len(rows) == 4
    # mix beats da exactly when x u (2/eta - 1) / (n - 1) < R_d
    assert dm.regions[0, 1] == "mix"
    assert dm.regions[1, 1] == "da"
    for i, j in itertools.product(range(2), range(2)):
        best = min(("da", dm.dct_da[i, j]), ("rot", dm.dct_rot[i, j]), ("mix", dm.dct_mix[i, j]), key=lambda kv: kv[1])
        assert dm.regions[i, j] == best[0]
    assert dm.boundary == pytest.approx(0.6053, abs=1e-4)
    assert classify_cell(1.0, 2.0, 0.5) == "mix"
    assert classify_cell(1.0, 2.0, 1.0) == "da"
    assert classify_cell(3.0, 2.0, 2.5) == "rot"


# --- properties ---------------------------------------------------------------------


def saturated(rng, n):
    return random_doubly_stochastic(rng, n) * float(rng.uniform(1e6, 1e9))


@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.sampled_from([1e-4, 1e-3, 1e-2]))
def test_gmn_matches_exhaustive_partition(n, seed, R_d):
    """Oracle: try every da/rot split of the same decomposition."""
    rng = np.random.default_rng(seed)
    M = saturated(rng, n)
    params = SystemParams.with_eta(0.98, r=10e9, R_d=R_d)
    dec = bvn_decompose(M)
    _, gmn = greedy_mixnet(M, params, decomposition=dec)
    perms = dec.perms[:10]
    rest = dec.perms[10:]
    best = math.inf
    for mask in itertools.product((0, 1), repeat=len(perms)):
        da = [p for p, b in zip(perms, mask) if b]
        rot = [p for p, b in zip(perms, mask) if not b]
        cost = sum(p.alpha for p in da) / params.r + len(da) * R_d + 2 * sum(p.alpha for p in rot) / (params.eta * params.r)
        best = min(best, cost)
    tail = sum(min(p.alpha / params.r + R_d, 2 * p.alpha / (params.eta * params.r)) for p in rest)
    assert gmn == pytest.approx(best + tail, rel=1e-12)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_gmn_threshold_structure_and_partition(n, seed):
    rng = np.random.default_rng(seed)
    M = saturated(rng, n)
    part, _ = greedy_mixnet(M, P10)
    if part.p_da and part.p_rot:
        assert min(p.alpha for p in part.p_da) >= max(p.alpha for p in part.p_rot)
    total = part.M_da.entries + part.M_rot.entries + part.residual.entries
    assert np.allclose(total, M, rtol=1e-9)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_dct_rot_invariant_under_relabelling(n, seed):
    rng = np.random.default_rng(seed)
    M = saturated(rng, n)
    p, q = rng.permutation(n), rng.permutation(n)
    a = dct_rot(DemandMatrix(M), P10)
    b = dct_rot(DemandMatrix(M[p][:, q]), P10)
    assert a == pytest.approx(b, rel=1e-12)


# --- trace pipeline --------------------------------------------------------------------


def test_trace_pipeline_empty():
    assert trace_pipeline([], 4, 0.05, 0.05, P10) == []


def test_single_flow_trace_picks_cheaper_system():
    p = SystemParams.with_eta(0.98, r=10e9, R_d=1e-3, n=2)
    # two ToRs, one flow each way: a single permutation
    recs = [TraceRecord(0.0, 0, 1, 1e6), TraceRecord(0.0, 1, 0, 1e6)]
    for target in (2 * 1e6, 2 * 1e8):
        (w,) = trace_pipeline(recs, 2, 0.05, 0.0, p, target_volume=target)
        alpha = target / 2
        expect = min(alpha / p.r + p.R_d, 2 * alpha / (p.eta * p.r))
        assert w.gmn == pytest.approx(expect, rel=1e-12)
        assert w.gmn <= min(w.da, w.rot, w.ahor) + 1e-15
    assert w.region() == "da"


def test_trace_pipeline_windows_and_factor():
    recs = [TraceRecord(0.01, 0, 1, 8e6, "uniform"), TraceRecord(0.01, 1, 0, 8e6), TraceRecord(0.07, 0, 1, 4e6), TraceRecord(0.07, 1, 0, 4e6)]
    ws = trace_pipeline(recs, 2, 0.05, 0.0, P10)
    assert [w.index for w in ws] == [0, 1]
    assert ws[0].factor == ws[1].factor
    assert (ws[0].volume + ws[1].volume) / 2 == pytest.approx(0.05 * P10.r * 2, rel=1e-12)


def test_dct_map_gmn_equals_aver_where_mixed():
    p = SystemParams.with_eta(0.98, r=10e9, R_d=1e-3)
    g = dct_map([0.5], [0.3], 16, 4, p, MixAlg.GMN)
    v = dct_map([0.5], [0.3], 16, 4, p, MixAlg.A_VER)
    best = min(v.dct_da[0, 0], v.dct_rot[0, 0], v.dct_mix[0, 0])
    assert g.dct_mix[0, 0] == pytest.approx(best, rel=1e-9)
