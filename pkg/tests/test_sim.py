from __future__ import annotations

import math

import pytest

from rdcn.metrics import ideal_fct
from rdcn.rotor import RotorSchedule
from rdcn.sim import (
    Reassignment,
    SimConfig,
    Simulator,
    TrafficPhase,
    config_from_dict,
    dump_config,
    load_config,
    run,
)
from rdcn.traffic import Flow, Tag

MIXED = SimConfig(n=8, k_s=2, k_r=1, k_d=1, load=0.5, share=0.7, duration=0.05, seed=1)


@pytest.mark.parametrize("dst_rack,ring_hops", [(1, 1), (2, 2), (3, 3)])
def test_single_packet_static_fct(dst_rack, ring_hops):
    cfg = SimConfig(n=4, k_s=1, k_r=1, k_d=0, duration=0.01)
    b = run(cfg, [Flow(0, 0, dst_rack * cfg.k, 1000, 0.001)])
    (rec,) = b.fct
    assert rec.cls == "SS"
    # host uplink, ring hops, ToR downlink
    assert rec.fct == pytest.approx(ideal_fct(1000, cfg.r, ring_hops + 2, cfg.prop), rel=1e-9)


def test_rotor_packets_only_leave_in_matching_slots():
    cfg = SimConfig(n=8, k_s=1, k_r=2, k_d=0, share=0.0, load=0.5, duration=0.02, trace_events=True)
    b = run(cfg)
    sched = RotorSchedule(cfg.n, cfg.k_r)
    tx = [e for e in b.events if e[1] == "rotor_tx"]
    assert tx and b.counters["slot_violations"] == 0
    for time, _, _, _, _, src, dst, label, info in tx:
        t = int(math.floor(time / cfg.slot + 1e-9))
        offset = time - t * cfg.slot
        assert -1e-12 <= offset < cfg.delta
        assert offset + 1500 * 8 / cfg.r <= cfg.delta + 1e-9
        port = int(info.split()[1])
        assert sched.peer(port, t, src) == dst
        assert sched.label(t) == label


def test_single_rotor_flow_is_delivered():
    cfg = SimConfig(n=4, k_s=1, k_r=1, k_d=0, duration=0.05)
    b = run(cfg, [Flow(0, 0, 2 * cfg.k, 30_000, 0.0, Tag.UNIFORM)])
    assert [r.cls for r in b.fct] == ["ROTOR"]
    assert b.conserved and not b.violations


def test_conservation_and_no_violations():
    b = run(MIXED)
    c = b.counters
    assert c["injected"] == c["delivered"] + c["dropped"] + c["in_flight"]
    assert b.violations == []


def test_same_seed_same_digest():
    assert run(MIXED).digest() == run(MIXED).digest()
    assert run(MIXED).digest() != run(MIXED.with_(seed=2)).digest()


def test_strict_priority_gives_ss_shorter_queueing_than_da():
    sim = Simulator(MIXED)
    sim.run()
    assert sim.mean_queue_delay("SS") < sim.mean_queue_delay("DA")


@pytest.mark.parametrize("load", [0.6, 0.9])
def test_rlb_rotor_traffic_is_lossless(load):
    base = SimConfig(n=8, k_s=1, k_r=2, k_d=0, share=0.0, load=load, duration=0.04, queue_packets=8)
    rlb = run(base.with_(scheduler="rlb"))
    llb = run(base.with_(scheduler="llb"))
    assert rlb.retx["ROTOR"].sum() == 0 and rlb.losses["ROTOR"].sum() == 0
    assert rlb.counters["sync_messages"] > 0 and llb.counters["sync_messages"] == 0
    assert llb.losses["ROTOR"].sum() > 0


def test_lone_da_flow_needs_no_retransmission():
    cfg = SimConfig(n=4, k_s=1, k_r=1, k_d=1, duration=0.1)
    b = run(cfg, [Flow(0, 0, 2 * cfg.k, 400_000, 0.0)])
    assert [r.cls for r in b.fct] == ["DA"]
    assert b.retx["DA"].sum() == 0 and b.counters["dropped"] == 0


def test_reassign_and_back():
    cfg = MIXED.with_(reassignments=(Reassignment(0.02, "da", "rotor"), Reassignment(0.035, "rotor", "da")))
    sim = Simulator(cfg)
    b = sim.run()
    (t1, kr1, kd1), (t2, kr2, kd2) = sim.port_changes
    assert (kr1, kd1) == (2, 0) and (kr2, kd2) == (1, 1)
    # applied at the first slot boundary at or after the request
    for t, req in ((t1, 0.02), (t2, 0.035)):
        assert t >= req
        assert t - req < cfg.slot + 1e-12
        assert abs(t / cfg.slot - round(t / cfg.slot)) < 1e-6
    kinds = [k for _, _, k in b.reconfigs]
    assert "da->rotor" in kinds and "rotor->da" in kinds
    assert b.counters["final_k_r"] == 1 and not b.violations


def test_invalid_reassignments_raise():
    with pytest.raises(ValueError):
        Reassignment(0.01, "static", "rotor")
    with pytest.raises(ValueError):
        Reassignment(0.01, "da", "da")
    sim = Simulator(SimConfig(n=4, k_s=1, k_r=1, k_d=0, duration=0.01))
    with pytest.raises(ValueError):
        sim.schedule_port_reassignment(0.001, "static", "da")
    with pytest.raises(ValueError):
        sim.schedule_port_reassignment(0.001, "rotor", "ss")


def test_reassigning_from_an_empty_class_is_reported():
    sim = Simulator(SimConfig(n=4, k_s=1, k_r=1, k_d=0, duration=0.01))
    sim.schedule_port_reassignment(0.001, "da", "rotor")
    b = sim.run()
    assert any("no demand-aware port" in v for v in b.violations)


def test_traffic_phases_change_mix():
    cfg = SimConfig(n=8, k_s=2, k_r=1, k_d=1, duration=0.06, phases=(TrafficPhase(0.0, 0.0), TrafficPhase(0.03, 1.0)))
    b = run(cfg)
    early = [r for r in b.fct if r.arrival < 0.03]
    late = [r for r in b.fct if r.arrival >= 0.03]
    assert early and all(r.tag == "uniform" for r in early)
    assert late and all(r.tag == "skewed" for r in late)


def test_config_round_trip(tmp_path):
    cfg = MIXED.with_(reassignments=(Reassignment(0.02, "da", "rotor"),), phases=(TrafficPhase(0.0, 0.3),))
    p = tmp_path / "cfg.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_grouped_config_and_errors():
    cfg = config_from_dict({"topology": {"n": 4, "k_s": 1, "k_r": 2, "k_d": 0}, "traffic": {"load": "0.3"}})
    assert (cfg.n, cfg.k, cfg.load) == (4, 3, 0.3)
    with pytest.raises(ValueError):
        config_from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        SimConfig(k_s=0)
    with pytest.raises(ValueError):
        SimConfig(scheduler="magic")
