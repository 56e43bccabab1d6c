"""Open-loop request dispatch and the line-rate / queueing calculators."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .core import CoreConfig, CoreModel
from .critical import CriticalConfig, CriticalEngine
from .errors import ConfigError
from .isa import OpClass, RequestSegment, split_requests
from .memsys import CacheConfig, DramConfig, MemorySystem, PcieConfig
from .nic import NicConfig, NicModel, Packet
from .regpred import RegPredConfig, RegValuePredictor
from .tracegen import memory_image

TABLE1_BANDWIDTHS = (10, 40, 100, 200, 400)
TABLE1_COLUMNS = (0.6, 1.18, 2.36)
TABLE1 = {
    0.6: (81, 325, 812, 1625, 3250),
    1.18: (94, 376, 941, 1883, 3767),
    2.36: (120, 482, 1205, 2410, 4821),
}


class ArrivalProcess(str, Enum):
    POISSON = "poisson"
    FIXED_RATE = "fixed"


@dataclass
class WorkloadConfig:
    process: ArrivalProcess = ArrivalProcess.POISSON
    offered_gbps: float = 10.0
    offered_pps: Optional[float] = None
    payload_bytes: int = 16
    header_bytes: int = 48
    requests: Optional[int] = None
    seed: int = 0
    nic_stage_ns: float = 900.0
    pcie_stage_ns: float = 250.0

    def validate(self) -> None:
        if self.offered_gbps <= 0:
            raise ConfigError("offered_gbps", "must be > 0")
        if self.offered_pps is not None and self.offered_pps <= 0:
            raise ConfigError("offered_pps", "must be > 0")
        if self.payload_bytes < 0 or self.header_bytes < 0:
            raise ConfigError("payload_bytes", "sizes must be >= 0")
        if self.nic_stage_ns < 0 or self.pcie_stage_ns < 0:
            raise ConfigError("nic_stage_ns", "stage times must be >= 0")
        if self.requests is not None and self.requests < 1:
            raise ConfigError("requests", "must be >= 1")

    @property
    def packet_bytes(self) -> int:
        return self.payload_bytes + self.header_bytes

    @property
    def pps(self) -> float:
        if self.offered_pps is not None:
            return self.offered_pps
        return packets_per_second(self.offered_gbps, self.packet_bytes)


# -- closed-form calculators ----------------------------------------------

def packets_per_second(bandwidth_gbps: float, packet_bytes: int = 64) -> float:
    return bandwidth_gbps * 1e9 / (packet_bytes * 8)


def concurrency_requirement(bandwidth_gbps: float, total_latency_us: float,
                            packet_bytes: int = 64) -> int:
    """Packets in flight needed to sustain line rate: ceil(pps x latency)."""
    if bandwidth_gbps <= 0 or total_latency_us < 0 or packet_bytes <= 0:
        raise ValueError("bandwidth and packet size must be positive, latency non-negative")
    x = packets_per_second(bandwidth_gbps, packet_bytes) * total_latency_us * 1e-6
    return int(math.ceil(x - 1e-9))


def fit_fixed_overhead(bandwidths: Sequence[float], counts: Sequence[int],
                       packet_bytes: int = 64) -> tuple[float, float]:
    """Least-squares total latency (us) through the origin, and max relative residual."""
    pps = np.array([packets_per_second(b, packet_bytes) for b in bandwidths])
    n = np.asarray(counts, dtype=float)
    lat_s = float((n * pps).sum() / (pps * pps).sum())
    resid = np.abs(pps * lat_s - n) / n
    return lat_s * 1e6, float(resid.max())


def table1(packet_bytes: int = 64) -> dict:
    """Recompute the line-rate concurrency table from per-column fitted latencies."""
    out = {}
    for col in TABLE1_COLUMNS:
        lat_us, resid = fit_fixed_overhead(TABLE1_BANDWIDTHS, TABLE1[col], packet_bytes)
        cells = [concurrency_requirement(b, lat_us, packet_bytes) for b in TABLE1_BANDWIDTHS]
        out[col] = {"latency_us": lat_us, "residual": resid, "cells": cells,
                    "published": list(TABLE1[col])}
    return out


def erlang_c(c: int, offered: float) -> float:
    """Probability of waiting in M/M/c with offered load ``offered`` = lambda/mu."""
    if offered >= c:
        return 1.0
    term = 1.0
    s = 1.0
    for k in range(1, c):
        term *= offered / k
        s += term
    term *= offered / c
    top = term * c / (c - offered)
    return top / (s + top)


def mmc_mean_wait(lam: float, mu: float, c: int) -> float:
    a = lam / mu
    if a >= c:
        return math.inf
    return erlang_c(c, a) / (c * mu - lam)


def analytic_projection(service_ns: float, threads: int, arrival_pps: float,
                        power_watts: Optional[float] = None) -> dict:
    """M/M/c cross-check: projected latency, throughput and efficiency."""
    mu = 1e9 / service_ns
    rho = arrival_pps / (threads * mu)
    if rho >= 1:
        tput = threads * mu
        return {"rho": rho, "saturated": True, "latency_ns": math.inf, "throughput_pps": tput,
                "efficiency": tput / power_watts if power_watts else None}
    wait = mmc_mean_wait(arrival_pps, mu, threads) * 1e9
    return {"rho": rho, "saturated": False, "latency_ns": wait + service_ns,
            "throughput_pps": arrival_pps,
            "efficiency": arrival_pps / power_watts if power_watts else None}


def simulate_mmc(lam: float, mu: float, c: int, n: int, seed: int = 0) -> dict:
    """FCFS c-server queue with exponential interarrival and service times."""
    rng = np.random.default_rng(seed)
    arr = np.cumsum(rng.exponential(1.0 / lam, n))
    svc = rng.exponential(1.0 / mu, n)
    free = [0.0] * c
    heapq.heapify(free)
    waits = np.empty(n)
    for i in range(n):
        f = heapq.heappop(free)
        start = max(arr[i], f)
        waits[i] = start - arr[i]
        heapq.heappush(free, start + svc[i])
    return {"mean_wait": float(waits.mean()), "waits": waits}


def flow_core(key: int, cores: int) -> int:
    """Receive-flow-steering hash of a flow key onto a core."""
    z = (key + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) % cores


# -- discrete-event simulation ----------------------------------------------

@dataclass
class SimConfig:
    core: CoreConfig = field(default_factory=CoreConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    dram: DramConfig = field(default_factory=DramConfig)
    pcie: PcieConfig = field(default_factory=PcieConfig)
    nic: NicConfig = field(default_factory=NicConfig)
    critical: CriticalConfig = field(default_factory=CriticalConfig)
    regpred: RegPredConfig = field(default_factory=RegPredConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)

    def validate(self) -> None:
        for part in (self.core, self.cache, self.dram, self.pcie, self.nic, self.critical,
                     self.regpred, self.workload):
            part.validate()

    @property
    def cargo_enabled(self) -> bool:
        return self.critical.enable and self.nic.offload_enable


@dataclass
class RequestLog:
    request_id: int
    core: int
    arrival_ns: float
    enqueue_ns: float
    start_ns: float
    end_ns: float
    nic_ns: float
    pcie_ns: float
    queue_ns: float
    core_ns: float
    cycles: int

    @property
    def total_ns(self) -> float:
        return self.nic_ns + self.pcie_ns + self.queue_ns + self.core_ns


@dataclass
class RunResult:
    config: SimConfig
    log: list
    core: CoreModel
    mem: MemorySystem
    nic: NicModel
    engines: list
    regions: list
    region_executions: dict
    dropped: int
    duration_ns: float
    thread_busy_ns: float

    @property
    def completed(self) -> int:
        return len(self.log)

    def latencies(self) -> np.ndarray:
        return np.array([r.total_ns for r in self.log])

    @property
    def utilization(self) -> float:
        threads = self.config.core.cores * self.config.core.hw_threads_per_core
        return self.thread_busy_ns / (threads * self.duration_ns) if self.duration_ns else 0.0

    def littles_law(self) -> dict:
        """Time-averaged population vs throughput x mean latency."""
        ev = []
        for r in self.log:
            ev.append((r.arrival_ns, 1))
            ev.append((r.arrival_ns + r.total_ns, -1))
        ev.sort()
        if not ev:
            return {"population": 0.0, "lambda_w": 0.0, "rel_error": 0.0}
        t0, t1 = ev[0][0], ev[-1][0]
        area = 0.0
        pop = 0
        last = t0
        for t, d in ev:
            area += pop * (t - last)
            pop += d
            last = t
        span = t1 - t0
        n_bar = area / span
        lam = len(self.log) / span
        w = float(self.latencies().mean())
        lw = lam * w
        return {"population": n_bar, "lambda_w": lw, "rel_error": abs(n_bar - lw) / lw}


def build_arrivals(cfg: WorkloadConfig, n: int) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    gap = 1e9 / cfg.pps
    if cfg.process == ArrivalProcess.FIXED_RATE:
        return np.arange(n, dtype=float) * gap
    return np.cumsum(rng.exponential(gap, n)) - gap


class Simulation:
    def __init__(self, config: SimConfig, items):
        config.validate()
        self.cfg = config
        self.items = items
        self.segments: list[RequestSegment] = split_requests(items)
        if config.workload.requests is not None:
            self.segments = self.segments[:config.workload.requests]

    def run(self) -> RunResult:
        cfg = self.cfg
        cc = cfg.core
        mem = MemorySystem(cc.cores, cfg.cache, cfg.dram, cfg.pcie, cc.clock_ghz)
        cargo = cfg.cargo_enabled
        engines = None
        if cfg.critical.enable:
            engines = []
            for c in range(cc.cores):
                engines.append(CriticalEngine(cfg.critical, RegValuePredictor(cfg.regpred),
                                              core_id=c))
        nic = NicModel(cfg.nic, mem, cc.cores, memory_image(self.items) if cargo else {})
        segs = self.segments
        class_pcs: dict[int, set] = {}
        truth: list = []
        shift = mem.block_shift
        for s in segs:
            class_pcs.setdefault(s.request_class, set()).update(r.pc for r in s.records)
            if cargo:
                truth.append(frozenset(r.eff_addr >> shift for r in s.records
                                       if r.opclass == OpClass.LOAD))
        all_regions: list = []

        def on_epoch(core, regions, now):
            all_regions.extend(regions)
            if cargo:
                nic.install_regions(core, regions, now, class_pcs)

        model = CoreModel(cc, mem, engines, on_epoch)
        wl = cfg.workload
        arrivals = build_arrivals(wl, len(segs))
        stage = wl.nic_stage_ns + wl.pcie_stage_ns
        threads = cc.hw_threads_per_core
        idle = [threads] * cc.cores
        log: list[RequestLog] = []
        events: list = []
        seq = 0
        for i, a in enumerate(arrivals):
            events.append((float(a), 0, i, i))
        heapq.heapify(events)
        seq = len(arrivals)
        packets: dict[int, Packet] = {}
        region_exec: dict[str, int] = {}
        busy = 0.0
        dropped = 0

        def dispatch(core: int, now: float) -> None:
            nonlocal seq, busy
            ring = nic.rings[core]
            while ring and idle[core] > 0:
                pkt = ring.pop()
                idle[core] -= 1
                active = threads - idle[core]
                seg = segs[pkt.request_id]
                res = model.run_request(seg, core, now, active)
                end = now + res.latency_ns
                busy += res.latency_ns
                log.append(RequestLog(seg.request_id, core, pkt.arrival_ns, pkt.enqueue_ns, now,
                                      end, wl.nic_stage_ns, wl.pcie_stage_ns,
                                      now - pkt.enqueue_ns, res.latency_ns, res.cycles))
                seq += 1
                heapq.heappush(events, (end, 2, seq, core))

        while events:
            t, kind, _, x = heapq.heappop(events)
            if kind == 0:
                seg = segs[x]
                pkt = Packet(x, t, seg.key_hash, seg.key, flow_core(seg.key, cc.cores),
                             seg.request_class,
                             truth_blocks=truth[x] if cargo else None)
                packets[x] = pkt
                if cargo:
                    for r in nic.matching(pkt, t):
                        region_exec[r.region_id] = region_exec.get(r.region_id, 0) + 1
                    nic.on_packet(pkt, t)
                seq += 1
                heapq.heappush(events, (t + stage, 1, seq, x))
            elif kind == 1:
                pkt = packets.pop(x)
                if nic.enqueue(pkt, t):
                    dispatch(pkt.dest_core, t)
                else:
                    dropped += 1
            else:
                idle[x] += 1
                dispatch(x, t)

        t0 = float(arrivals[0]) if len(arrivals) else 0.0
        duration = max((r.end_ns for r in log), default=t0) - t0
        log.sort(key=lambda r: r.request_id)
        return RunResult(cfg, log, model, mem, nic, engines or [], all_regions, region_exec,
                         dropped, duration, busy)


def run_simulation(config: SimConfig, items) -> RunResult:
    return Simulation(config, items).run()
