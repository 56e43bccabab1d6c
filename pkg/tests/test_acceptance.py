"""End-to-end acceptance suite: one test per criterion, each under its time limit.

A summary line per criterion is printed at the end of the pytest run.
"""

import functools
import random
import time

import numpy as np
import pytest

from cargosim import _lru_py
from cargosim.golden import check_golden, run_golden
from cargosim.isa import RAX, RDX, TraceRecord
from cargosim.memsys import MemorySystem
from cargosim.metrics import finalize, storage_report, write_report
from cargosim.regpred import RegPredConfig, RegValuePredictor
from cargosim.tracegen import SyntheticWorkloadSpec, WorkloadKind, generate_trace
from cargosim.workload import (
    TABLE1, TABLE1_BANDWIDTHS, SimConfig, WorkloadConfig, run_simulation, table1,
)
from conftest import ACCEPTANCE
from oracles import ElectionOracle, ListLRU, identify, slice_violations, trace_dataflow
from test_regpred import run_stream

try:
    from cargosim._lru import LRUCache as _CyLRU
except ImportError:  # pragma: no cover
    _CyLRU = None


def criterion(n: int, title: str, limit_s: float):
    """Record pass/fail for the summary and enforce the runtime limit."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
                el = time.perf_counter() - t0
                assert el < limit_s, f"took {el:.1f}s, limit {limit_s}s"
            except Exception as exc:
                el = time.perf_counter() - t0
                ACCEPTANCE[n] = (False, title, f"{str(exc).splitlines()[0]} ({el:.1f}s)")
                raise
            ACCEPTANCE[n] = (True, title, f"{detail} ({el:.1f}s)")
        return run
    return wrap


def cargo_cfg(enable: bool = True, offload: bool = True, force_unresolved: bool = False,
              **workload) -> SimConfig:
    cfg = SimConfig(workload=WorkloadConfig(**workload))
    cfg.critical.enable = enable
    cfg.nic.offload_enable = offload
    cfg.regpred.force_unresolved = force_unresolved
    return cfg


# 1 ---------------------------------------------------------------------------

@criterion(1, "line-rate concurrency table", 1.0)
def test_c1_table1():
    t = table1()
    worst = 0
    for col, row in t.items():
        for got, pub in zip(row["cells"], TABLE1[col]):
            worst = max(worst, abs(got - pub))
        for cells in (np.array(row["cells"], float), np.array(TABLE1[col], float)):
            per_gbps = cells / np.array(TABLE1_BANDWIDTHS)
            assert np.all(np.abs(per_gbps / per_gbps[-1] - 1) < 0.01), (col, cells)
    assert worst <= 1, f"cell off by {worst} packets"
    return f"15 cells, max deviation {worst} packet"


# 2 ---------------------------------------------------------------------------

@criterion(2, "hash-chain walkthrough golden", 1.0)
def test_c2_golden():
    res = run_golden()
    ok, msg = check_golden(res)
    assert ok, msg
    rg = res.regions[0]
    assert len(rg) == 8
    assert (rg.required(RDX).state, rg.required(RDX).value) == ("READY-DYN", 1)
    assert rg.required(RAX).state == "READY"
    return f"8 pcs ready, rax READY {rg.required(RAX).value:#x}, rdx READY-DYN(1)"


# 3 ---------------------------------------------------------------------------

def random_spec(rng: random.Random) -> SyntheticWorkloadSpec:
    return SyntheticWorkloadSpec(
        kind=rng.choice(list(WorkloadKind)), table_buckets=rng.choice([64, 1024, 8192]),
        tree_fanout=rng.randint(2, 16), population=rng.choice([256, 4096, 32768]),
        chain_length_dist=rng.choice([0.1, 0.3, 0.5, 1.0]), key_dist=rng.choice([0, 0.9, 1.2]),
        request_count=rng.randint(50, 400), lookup_tail=rng.random() < 0.3)


@criterion(3, "backward-slice oracle soundness", 120.0)
def test_c3_slice_oracle():
    rng = random.Random(2024)
    regions = 0
    records = 0
    withheld_checked = 0
    for i in range(100):
        spec, seed = random_spec(rng), rng.randrange(1 << 30)
        items = generate_trace(spec, seed)
        while sum(1 for it in items if isinstance(it, TraceRecord)) > 100_000:
            spec.request_count //= 2
            items = generate_trace(spec, seed)
        records += sum(1 for it in items if isinstance(it, TraceRecord))
        found, _ = identify(items, epoch_misses=rng.choice([64, 256, 1024]))
        regions += len(found)
        flow = trace_dataflow(items)
        for rg in found:
            bad = slice_violations(items, rg, flow=flow)
            assert not bad, f"trace {i}: {bad[0]}"
        if found and i % 10 == 0:
            forced, eng = identify(items, epoch_misses=1 << 30, force_unresolved=True)
            assert forced == []
            assert eng.emit_regions() == [] and eng.withheld > 0
            withheld_checked += 1
    assert regions > 0
    return (f"{regions} regions over 100 traces ({records} records) sound; "
            f"withholding checked on {withheld_checked}")


# 4 ---------------------------------------------------------------------------

@criterion(4, "value-predictor brute-force recount", 60.0)
def test_c4_predictor_oracle():
    for seed in range(1000):
        run_stream(seed)
    # exact-boundary streams: k transitions over 8k uses never elect, over 8k-1 do
    for k in range(1, 13):
        for total, expect in ((8 * k, "UNRESOLVED"), (8 * k - 1, "READY")):
            cfg = RegPredConfig()
            p, o = RegValuePredictor(cfg), ElectionOracle(cfg)
            for j in range(total):
                for m in (p, o):
                    m.begin_instance()
                    m.observe_in(RAX, 0x40, {})
                    if j < k:
                        m.observe_gen(RAX, 0x41)
            assert p.elect(RAX).state == o.elect(RAX)[0] == expect, (k, total)
    # LFU eviction: the least-used value is replaced in place
    cfg = RegPredConfig(per_reg_limit=2)
    p, o = RegValuePredictor(cfg), ElectionOracle(cfg)
    for v, g in [(1, True), (1, True), (2, False), (3, True), (3, True), (3, False)]:
        for m in (p, o):
            m.begin_instance()
            m.observe_in(RAX, v, {})
            if g:
                m.observe_gen(RAX, 9)
    assert sorted(p.in_table[i].in_value for i in p.slots_of(RAX)) == [1, 3]
    e = p.elect(RAX)
    assert (e.state, e.value) == o.elect(RAX)
    return "1000 random streams + 24 boundary streams + LFU eviction agree"


# 5 ---------------------------------------------------------------------------

@criterion(5, "memory-system oracles", 60.0)
def test_c5_memsys():
    rng = random.Random(5)
    backends = [_lru_py.LRUCache] + ([_CyLRU] if _CyLRU else [])
    for cls in backends:
        for _ in range(200):
            sets, ways = rng.choice([1, 2, 4, 16]), rng.choice([1, 2, 4, 8])
            c, ref = cls(sets, ways), ListLRU(sets, ways)
            for _ in range(300):
                b = rng.randrange(sets * ways * 3)
                hit = c.lookup(b)
                ev = -1 if hit else c.insert(b)
                assert (hit, ev) == ref.access(b)
    m = MemorySystem()
    cfg = m.cache
    cold = m.core_access(0, 0x12340, False, 0)
    expect = cfg.l1_latency + cfg.l2_latency + cfg.llc_latency + round(
        m.dram.fixed_latency_ns * m.ghz)
    assert cold.latency_cycles == expect == 215
    done = m.nic_steering_fill(0, 0x99000, 1000.0)
    r = m.core_access(0, 0x99000, False, (done + 1) * m.ghz)
    assert r.level_hit == "L1" and r.latency_cycles == cfg.l1_latency
    return f"{len(backends)} LRU backends match list oracle; cold miss 215 cycles; fill hits L1"


# 6 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def ablation_items():
    return generate_trace(SyntheticWorkloadSpec(request_count=3000, population=1 << 16,
                                                table_buckets=1 << 14), 6)


def _report(cfg, items, path):
    cfg.critical.epoch_l2_misses = 512
    rep = finalize(run_simulation(cfg, items))
    write_report(rep, path)
    return rep


@criterion(6, "non-interference ablations", 120.0)
def test_c6_ablations(ablation_items, tmp_path):
    items = ablation_items
    kw = dict(offered_pps=3e6, seed=1)
    base = _report(cargo_cfg(False, False, **kw), items, tmp_path / "base")
    off = _report(cargo_cfg(True, False, **kw), items, tmp_path / "off")
    for f in ("latency.csv", "cpi.csv", "pcie.csv", "power.csv"):
        assert (tmp_path / "base" / f).read_bytes() == (tmp_path / "off" / f).read_bytes(), f
    skip = ("config.", "region")     # identification statistics only
    diff = [k for k in base.summary if not k.startswith(skip)
            and base.summary[k] != off.summary[k]]
    assert not diff, f"summary differs in {diff}"
    assert off.summary["regions_emitted"] > 0      # identification did run

    forced = _report(cargo_cfg(True, True, True, **kw), items, tmp_path / "forced")
    assert forced.summary["nic_offloads"] == 0 and forced.summary["regions_withheld"] > 0
    assert (tmp_path / "base" / "latency.csv").read_bytes() == \
        (tmp_path / "forced" / "latency.csv").read_bytes()

    on = _report(cargo_cfg(True, True, **kw), items, tmp_path / "on")
    assert on.summary["nic_offloads"] > 0
    assert on.summary["latency_mean_ns"] != base.summary["latency_mean_ns"]
    return ("offload-off outputs bit-identical; forced-UNRESOLVED latencies identical; "
            "enabled run differs")


# 7 ---------------------------------------------------------------------------

PAPER_REFERENCE = "paper (full system): 2.7X latency, 3.3X p99, 2.13X DRAM bw, 1-3% L1 miss"


@criterion(7, "directional end-to-end effect", 300.0)
def test_c7_directional():
    spec = SyntheticWorkloadSpec(kind=WorkloadKind.HASH_CHAIN, request_count=8000,
                                 chain_length_dist=0.1, lookup_tail=True, population=200_000,
                                 table_buckets=16384)
    items = generate_trace(spec, 1)
    kw = dict(offered_pps=5.8e6, seed=0)
    base = finalize(run_simulation(cargo_cfg(False, False, **kw), items)).summary
    on = finalize(run_simulation(cargo_cfg(True, True, **kw), items)).summary
    util = base["utilization"]
    mean_x = base["latency_mean_ns"] / on["latency_mean_ns"]
    p99_x = base["latency_p99_ns"] / on["latency_p99_ns"]
    bw_x = on["dram_bw_utilization"] / base["dram_bw_utilization"]
    l1_drop = base["l1_miss_rate"] - on["l1_miss_rate"]
    detail = (f"util {util:.2f}, mean {mean_x:.2f}X, p99 {p99_x:.2f}X, DRAM bw {bw_x:.2f}X, "
              f"L1 miss -{100 * l1_drop:.2f} pts [{PAPER_REFERENCE}]")
    print(detail)
    assert util >= 0.80, detail
    assert mean_x > 1.5, detail
    assert p99_x >= mean_x, detail
    assert bw_x > 1, detail
    assert l1_drop > 0, detail
    return detail


# 8 ---------------------------------------------------------------------------

@criterion(8, "conservation properties", 300.0)
def test_c8_conservation():
    items = generate_trace(SyntheticWorkloadSpec(request_count=100_000, population=1 << 16,
                                                 table_buckets=1 << 14), 8)
    run = run_simulation(cargo_cfg(True, True, offered_pps=8e6, seed=8), items)
    rep = finalize(run)
    s = rep.summary
    assert run.completed >= 100_000
    ll = run.littles_law()
    assert ll["rel_error"] < 0.02, ll
    assert sum(r["cycles"] for r in rep.cpi_rows) == s["cycles_total"]
    assert s["cycles_total"] == sum(r.cycles for r in run.log)
    assert s["nic_offloads"] > 0
    assert s["pcie_state_pct"] < s["pcie_request_pct"], s
    assert s["pcie_state_pct"] < s["pcie_data_pct"], s
    return (f"Little err {100 * ll['rel_error']:.3f}%, CPI exact, PCIe state "
            f"{s['pcie_state_pct']:.4f}% < request {s['pcie_request_pct']:.2f}% "
            f"/ data {s['pcie_data_pct']:.2f}%")


# 9 ---------------------------------------------------------------------------

@criterion(9, "overhead accounting", 1.0)
def test_c9_overhead():
    s = storage_report()
    assert s["context_bytes"] == 256 * 13 + 16 * 8
    assert abs(s["context_bytes"] - 3.5 * 1024) / (3.5 * 1024) < 0.05
    assert s["register_state_bytes"] == 16 * 17 == 272
    assert s["predictor_bytes"] == 48 * 20 + 132 * 16 == 3 * 1024
    assert s["total_bytes"] == s["context_bytes"] + s["register_state_bytes"] \
        + s["predictor_bytes"]

    items = generate_trace(SyntheticWorkloadSpec(request_count=600, population=16384,
                                                 table_buckets=4096), 9)
    cfg = cargo_cfg(True, True, offered_pps=2e6)
    cfg.critical.epoch_l2_misses = 128
    r = finalize(run_simulation(cfg, items)).summary
    ipo = r["nic_insts_per_offload"]
    assert r["nic_offloads"] > 0
    assert (56 + 26) / 10 <= ipo <= (56 + 26) * 10, ipo
    detail = (f"{s['context_bytes']} + {s['register_state_bytes']} + {s['predictor_bytes']} "
              f"= {s['total_bytes']} B ({s['total_kib']:.2f} KiB); NIC {ipo:.1f} insts/packet")
    assert s["total_bytes"] > 7 * 1024, f"total {s['total_bytes']} B is not above 7 KiB; " + detail
    return detail
