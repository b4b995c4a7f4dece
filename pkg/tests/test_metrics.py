from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdcn.metrics import (
    FctRecord,
    MetricsBundle,
    fct_percentiles,
    gap_summary,
    ideal_fct,
    percentile,
    sequence_deltas,
    sequence_gap_histogram,
    windowed_sum,
)
from rdcn.sim import SimConfig, Simulator, run
from rdcn.traffic import Flow


def percentile_oracle(values, q):
    """Closest-ranks linear interpolation written out by hand."""
    xs = sorted(values)
    pos = (len(xs) - 1) * q / 100.0
    lo = int(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def test_percentile_examples():
    assert percentile(list(range(1, 101)), 99) == pytest.approx(99.01)
    assert percentile([7.5], 99) == 7.5
    assert percentile([3, 1, 2], 50) == 2
    with pytest.raises(ValueError):
        percentile([], 50)


def test_percentile_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        vals = rng.exponential(1.0, int(rng.integers(1, 50))).tolist()
        q = float(rng.uniform(0, 100))
        assert percentile(vals, q) == pytest.approx(percentile_oracle(vals, q), rel=1e-12, abs=1e-15)


def _rec(i, size, fct):
    return FctRecord(i, size, "SS", "skewed", 0.0, fct)


def test_fct_buckets_and_empty_bucket():
    recs = [_rec(i, 1000, float(i + 1)) for i in range(100)] + [_rec(200, 500_000, 3.0)]
    out = fct_percentiles(recs)
    assert out["small"] == pytest.approx(99.01)
    assert out["medium"] == 3.0
    assert out["large"] is None


def test_ideal_fct():
    assert ideal_fct(1500, 1e9, 1, 0.0) == pytest.approx(12e-6)
    # two store-and-forward hops of one packet each, plus propagation on three links
    assert ideal_fct(3000, 1e9, 3, 1e-6) == pytest.approx(24e-6 + 3e-6 + 2 * 12e-6)


def test_sequence_delta_examples():
    assert sequence_deltas([0, 2, 1, 3]) == [0, 1, -2, 0]
    assert sequence_deltas([0, 1, 2, 3]) == [0, 0, 0, 0]
    hist = sequence_gap_histogram([[0, 2, 1, 3], [0, 1]])
    assert hist == Counter({0: 4, 1: 1, -2: 1})
    s = gap_summary(hist)
    assert (s["neg"], s["zero"], s["pos"]) == pytest.approx((1 / 6, 4 / 6, 1 / 6))
    assert gap_summary(Counter())["count"] == 0


@given(st.permutations(list(range(12))))
def test_sequence_deltas_zero_iff_in_order(perm):
    d = sequence_deltas(perm)
    assert (d == [0] * 12) == (list(perm) == list(range(12)))
    # a positive gap always jumps past the highest sequence seen so far
    top = -1
    for s, g in zip(perm, d):
        assert (g > 0) == (s > top + 1)
        top = max(top, s)


def test_windowed_sum():
    out = windowed_sum([0.0, 0.05, 0.15, 0.3], [1, 2, 3, 4], 0.1, 0.3)
    assert out.tolist() == [3, 3, 4]  # the end point folds into the last window
    assert windowed_sum([], [], 0.1, 0.25).tolist() == [0, 0, 0]


def test_goodput_integrates_to_first_delivery_bytes():
    sim = Simulator(SimConfig(n=8, k_s=2, k_r=1, k_d=1, load=0.5, duration=0.04, seed=3))
    b = sim.run()
    assert b.goodput_bits.sum() == 8 * sum(s for _, s in sim.first_bytes)
    assert np.sum(b.goodput * b.window) == pytest.approx(b.goodput_bits.sum())


def test_single_flow_goodput():
    cfg = SimConfig(n=4, k_s=1, k_r=1, k_d=0, duration=0.02)
    b = run(cfg, [Flow(0, 0, 4, 30_000, 0.0)])
    assert b.goodput_bits.sum() == 8 * 30_000
    assert b.normalized_goodput == pytest.approx(1.0)


def _bundle(**kw):
    w = kw.pop("window", 0.1)
    nwin = 4
    z = {p: np.zeros(nwin, dtype=int) for p in ("SS", "ROTOR", "DA")}
    base = dict(
        window=w, end=0.4, goodput_bits=np.array([1.0, 2.0, 3.0, 4.0]), offered_bits=np.zeros(nwin),
        normalized_goodput=0.0, fct=[], seq_gaps=Counter(), retx=z, sent=z, losses=z,
        counters={"injected": 3, "delivered": 1, "dropped": 1, "in_flight": 1},
    )
    base.update(kw)
    return MetricsBundle(**base)


def test_bundle_helpers():
    losses = {"SS": np.array([0, 3, 0, 0]), "ROTOR": np.array([0, 0, 1, 0]), "DA": np.array([0, 0, 2, 0])}
    b = _bundle(losses=losses, reconfigs=[(0.1, 0.12, "da")])
    assert b.goodput_between(0.1, 0.3) == pytest.approx((2 + 3) / 0.2)
    with pytest.raises(ValueError):
        b.goodput_between(0.12, 0.18)
    assert b.spikes(3) == pytest.approx([0.1, 0.2])
    assert b.in_reconfig(0.1, 0.2) and not b.in_reconfig(0.2, 0.3)
    assert b.in_reconfig(0.2, 0.3, slack=0.09)
    assert b.conserved


def test_tables_and_write(tmp_path):
    b = _bundle(events=[(0.1, "drop", 1, 2, "DA", -1, -1, 0, "overflow")])
    tables = b.tables()
    assert set(tables) == {"goodput.csv", "fct.csv", "seq_gaps.csv", "retransmissions.csv", "summary.csv", "reconfigs.csv", "events.csv"}
    assert tables["goodput.csv"].splitlines()[0] == "window_start_s,goodput_bps,offered_bps"
    paths = b.write(tmp_path / "out")
    assert sorted(p.name for p in paths) == sorted(tables)
    assert len(b.digest()) == 64
