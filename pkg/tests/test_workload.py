from collections import Counter

import numpy as np
import pytest

from cargosim.errors import ConfigError
from cargosim.nic import NicConfig
from cargosim.tracegen import SyntheticWorkloadSpec, generate_trace
from cargosim.workload import (
    TABLE1, TABLE1_BANDWIDTHS, ArrivalProcess, SimConfig, WorkloadConfig, analytic_projection,
    build_arrivals, concurrency_requirement, erlang_c, fit_fixed_overhead, flow_core,
    mmc_mean_wait, packets_per_second, run_simulation, simulate_mmc, table1,
)


def test_packets_per_second_64b():
    assert packets_per_second(10) == pytest.approx(10e9 / 512)


def test_concurrency_is_ceiling():
    # 10 Gbps x 64 B = 19.53 Mpps; x 1 us = 19.53 -> 20 packets
    assert concurrency_requirement(10, 1.0) == 20
    with pytest.raises(ValueError):
        concurrency_requirement(0, 1.0)


def test_table1_within_one_packet_and_proportional():
    t = table1()
    for col, row in t.items():
        for got, pub in zip(row["cells"], TABLE1[col]):
            assert abs(got - pub) <= 1
        for cells in (np.array(row["cells"], float), np.array(TABLE1[col], float)):
            per_gbps = cells / np.array(TABLE1_BANDWIDTHS)
            assert np.all(np.abs(per_gbps / per_gbps[-1] - 1) < 0.01)


def test_fit_recovers_synthetic_latency():
    counts = [packets_per_second(b) * 2e-6 for b in TABLE1_BANDWIDTHS]
    lat, resid = fit_fixed_overhead(TABLE1_BANDWIDTHS, counts)
    assert lat == pytest.approx(2.0) and resid < 1e-12


def test_erlang_c_known_values():
    assert erlang_c(1, 0.5) == pytest.approx(0.5)       # M/M/1: rho
    assert erlang_c(2, 1.0) == pytest.approx(1 / 3)
    assert erlang_c(3, 3.0) == 1.0
    assert mmc_mean_wait(0.5, 1.0, 1) == pytest.approx(1.0)  # rho/(mu-lam)


@pytest.mark.parametrize("c,rho", [(1, 0.5), (4, 0.8), (8, 0.9)])
def test_simulated_mmc_matches_erlang_c(c, rho):
    mu = 1.0
    lam = rho * c * mu
    sim = simulate_mmc(lam, mu, c, 200_000, seed=c)
    exact = mmc_mean_wait(lam, mu, c)
    assert sim["mean_wait"] == pytest.approx(exact, rel=0.1)


def test_analytic_projection_saturation():
    p = analytic_projection(1000.0, 4, 1e6, power_watts=10.0)
    assert not p["saturated"] and p["latency_ns"] > 1000 and p["efficiency"] == 1e5
    assert analytic_projection(1000.0, 1, 2e6)["saturated"]


def test_flow_core_is_stable_and_balanced():
    assert flow_core(12345, 8) == flow_core(12345, 8)
    hist = Counter(flow_core(k, 4) for k in range(20000))
    assert set(hist) == {0, 1, 2, 3}
    assert max(hist.values()) / min(hist.values()) < 1.1


def test_arrivals_rate():
    for proc in ArrivalProcess:
        cfg = WorkloadConfig(process=proc, offered_pps=1e6, seed=2)
        a = build_arrivals(cfg, 50_000)
        assert a[0] == 0.0 or proc == ArrivalProcess.POISSON
        assert np.all(np.diff(a) >= 0)
        assert np.mean(np.diff(a)) == pytest.approx(1000.0, rel=0.02)


@pytest.fixture(scope="module")
def small_items():
    return generate_trace(SyntheticWorkloadSpec(request_count=600, population=8192,
                                                table_buckets=2048), 1)


def test_latency_decomposition(small_items):
    cfg = SimConfig(workload=WorkloadConfig(offered_pps=2e6, seed=1))
    run = run_simulation(cfg, small_items)
    assert run.completed == 600 and run.dropped == 0
    for r in run.log:
        assert r.queue_ns >= 0
        assert r.total_ns == pytest.approx(r.end_ns - r.arrival_ns)
        assert r.start_ns >= r.enqueue_ns >= r.arrival_ns
    assert 0 < run.utilization < 1


def test_threads_never_oversubscribed(small_items):
    cfg = SimConfig(workload=WorkloadConfig(offered_pps=2e7))
    run = run_simulation(cfg, small_items)
    ev = sorted([(r.start_ns, 1) for r in run.log] + [(r.end_ns, -1) for r in run.log])
    live = 0
    for _, d in ev:
        live += d
        assert live <= cfg.core.hw_threads_per_core


def test_ring_overflow_drops(small_items):
    cfg = SimConfig(nic=NicConfig(rx_ring_depth=2), workload=WorkloadConfig(offered_pps=1e8))
    run = run_simulation(cfg, small_items)
    assert run.dropped > 0
    assert run.completed + run.dropped == 600
    assert run.nic.stats.dropped == run.dropped


def test_request_cap(small_items):
    cfg = SimConfig(workload=WorkloadConfig(requests=100))
    assert run_simulation(cfg, small_items).completed == 100


def test_little_law_small(small_items):
    run = run_simulation(SimConfig(workload=WorkloadConfig(offered_pps=3e6)), small_items)
    assert run.littles_law()["rel_error"] < 0.05


def test_deterministic(small_items):
    cfg = SimConfig(workload=WorkloadConfig(offered_pps=3e6, seed=4))
    a = run_simulation(cfg, small_items).latencies()
    b = run_simulation(SimConfig(workload=WorkloadConfig(offered_pps=3e6, seed=4)),
                       small_items).latencies()
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kw", [{"offered_gbps": 0}, {"requests": 0}, {"nic_stage_ns": -1}])
def test_workload_validation(kw):
    with pytest.raises(ConfigError):
        WorkloadConfig(**kw).validate()
