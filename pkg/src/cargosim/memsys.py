"""Per-core cache hierarchy, windowed DRAM, PCIe link and steering-tag fills."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError
from .lru import LRUCache

CORE_GHZ = 4.0

LEVELS = ("L1", "L2", "LLC", "DRAM")


def _pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass
class CacheConfig:
    l1_bytes: int = 32 * 1024
    l1_ways: int = 8
    l1_latency: int = 2
    l2_bytes: int = 256 * 1024
    l2_ways: int = 8
    l2_latency: int = 3
    llc_bytes_per_core: int = 1024 * 1024
    llc_ways: int = 16
    llc_latency: int = 30
    block_bytes: int = 64

    def validate(self) -> None:
        if not _pow2(self.block_bytes):
            raise ConfigError("block_bytes", "must be a power of two")
        for name in ("l1", "l2", "llc"):
            size = getattr(self, f"{name}_bytes" if name != "llc" else "llc_bytes_per_core")
            ways = getattr(self, f"{name}_ways")
            if not _pow2(size) or size % self.block_bytes:
                raise ConfigError(f"{name}_bytes", "must be a power-of-two multiple of block_bytes")
            if ways < 1 or (size // self.block_bytes) % ways:
                raise ConfigError(f"{name}_ways", "must divide the block count")

    def sets(self, size: int, ways: int) -> int:
        return size // self.block_bytes // ways


@dataclass
class DramConfig:
    fixed_latency_ns: float = 45.0
    contention_window_ns: float = 10.0
    max_requests_per_window: int = 4

    def validate(self) -> None:
        if self.contention_window_ns <= 0:
            raise ConfigError("contention_window_ns", "must be > 0")
        if self.max_requests_per_window < 1:
            raise ConfigError("max_requests_per_window", "must be >= 1")
        if self.fixed_latency_ns < 0:
            raise ConfigError("fixed_latency_ns", "must be >= 0")

    @property
    def peak_bytes_per_ns(self) -> float:
        return self.max_requests_per_window * 64 / self.contention_window_ns


_LANE_GBYTES = {1: 2.5 * 8 / 10 / 8, 2: 5.0 * 8 / 10 / 8, 3: 8.0 * 128 / 130 / 8,
                4: 16.0 * 128 / 130 / 8}


@dataclass
class PcieConfig:
    one_way_latency_ns: float = 250.0
    lanes: int = 16
    gen: int = 3
    payload_efficiency: float = 0.95
    request_header_bytes: int = 24
    completion_header_bytes: int = 20
    state_header_bytes: int = 16
    instr_encoding_bytes: int = 8
    reg_encoding_bytes: int = 9

    def validate(self) -> None:
        if self.one_way_latency_ns < 0:
            raise ConfigError("one_way_latency_ns", "must be >= 0")
        if self.gen not in _LANE_GBYTES:
            raise ConfigError("gen", "unsupported PCIe generation")
        if not 0 < self.payload_efficiency <= 1:
            raise ConfigError("payload_efficiency", "must be in (0, 1]")
        if self.lanes < 1:
            raise ConfigError("lanes", "must be >= 1")

    @property
    def bytes_per_ns(self) -> float:
        """Usable link bandwidth (GB/s == bytes/ns)."""
        return self.lanes * _LANE_GBYTES[self.gen] * self.payload_efficiency


@dataclass
class AccessResult:
    level_hit: str
    latency_cycles: int
    fills: list = field(default_factory=list)       # (level, set index, evicted block or -1)
    components: dict = field(default_factory=dict)  # level -> cycles, sums to latency


@dataclass
class LevelStats:
    accesses: int = 0
    misses: int = 0


class MemorySystem:
    """Inclusive-fill L1/L2 per core, address-interleaved LLC slices, fixed-latency DRAM."""

    def __init__(self, cores: int = 1, cache: Optional[CacheConfig] = None,
                 dram: Optional[DramConfig] = None, pcie: Optional[PcieConfig] = None,
                 core_ghz: float = CORE_GHZ):
        self.cache = cache or CacheConfig()
        self.dram = dram or DramConfig()
        self.pcie = pcie or PcieConfig()
        for cfg in (self.cache, self.dram, self.pcie):
            cfg.validate()
        if cores < 1:
            raise ConfigError("cores", "must be >= 1")
        self.cores = cores
        self.ghz = core_ghz
        c = self.cache
        self.block_shift = c.block_bytes.bit_length() - 1
        self.l1 = [LRUCache(c.sets(c.l1_bytes, c.l1_ways), c.l1_ways) for _ in range(cores)]
        self.l2 = [LRUCache(c.sets(c.l2_bytes, c.l2_ways), c.l2_ways) for _ in range(cores)]
        self.llc = [LRUCache(c.sets(c.llc_bytes_per_core, c.llc_ways), c.llc_ways)
                    for _ in range(cores)]
        self.dram_cycles = int(round(self.dram.fixed_latency_ns * core_ghz))
        self._windows: dict[int, int] = {}
        self._pending: dict[tuple[int, int], tuple[float, str]] = {}
        self._pending_heap: list[tuple[float, int, int]] = []
        self.stats = {lvl: [LevelStats() for _ in range(cores)] for lvl in ("L1", "L2", "LLC")}
        self.dram_accesses = 0
        self.nic_fills = 0
        self.merged_fills = 0
        self.state_bytes = 0
        self.request_bytes = 0
        self.data_bytes = 0

    # -- helpers -----------------------------------------------------------
    def block_of(self, addr: int) -> int:
        return addr >> self.block_shift

    def _slice(self, block: int) -> LRUCache:
        return self.llc[block % self.cores]

    def _dram_start_delay(self, t_ns: float) -> float:
        """Delay (ns) before a DRAM access arriving at ``t_ns`` may begin."""
        w = self.dram.contention_window_ns
        k = int(t_ns // w)
        while self._windows.get(k, 0) >= self.dram.max_requests_per_window:
            k += 1
        self._windows[k] = self._windows.get(k, 0) + 1
        if len(self._windows) > 200_000:
            cutoff = k - 100_000
            self._windows = {kk: v for kk, v in self._windows.items() if kk >= cutoff}
        self.dram_accesses += 1
        return max(0.0, k * w - t_ns)

    def _fill_core(self, core: int, block: int, fills: Optional[list]) -> None:
        for lvl, arr in (("L2", self.l2[core]), ("L1", self.l1[core])):
            ev = arr.insert(block)
            if fills is not None:
                fills.append((lvl, arr.set_index(block), ev))

    def advance(self, now_ns: float) -> None:
        """Install every steering fill that has completed by ``now_ns``."""
        heap = self._pending_heap
        while heap and heap[0][0] <= now_ns:
            t, core, block = heapq.heappop(heap)
            cur = self._pending.get((core, block))
            if cur is None or cur[0] != t:
                continue
            del self._pending[(core, block)]
            self._slice(block).insert(block)
            self._fill_core(core, block, None)

    def pending_fill(self, core: int, block: int) -> Optional[float]:
        p = self._pending.get((core, block))
        return None if p is None else p[0]

    # -- core side ---------------------------------------------------------
    def core_access(self, core: int, addr: int, is_write: bool = False,
                    now: float = 0.0) -> AccessResult:
        """Look up ``addr`` for ``core`` at cycle ``now``; fills along the miss path."""
        now_ns = now / self.ghz
        self.advance(now_ns)
        c = self.cache
        block = addr >> self.block_shift
        st = self.stats
        st["L1"][core].accesses += 1
        if self.l1[core].lookup(block):
            return AccessResult("L1", c.l1_latency, [], {"L1": c.l1_latency})
        st["L1"][core].misses += 1

        pend = self._pending.get((core, block))
        if pend is not None:
            t_c, src = pend
            merged = c.l1_latency + int(math.ceil((t_c - now_ns) * self.ghz))
            if self.l2[core].contains(block):
                normal = c.l1_latency + c.l2_latency
            elif self._slice(block).contains(block):
                normal = c.l1_latency + c.l2_latency + c.llc_latency
            else:
                normal = c.l1_latency + c.l2_latency + c.llc_latency + self.dram_cycles
            if merged < normal:
                # the in-flight steering fill delivers the block first
                del self._pending[(core, block)]
                self.merged_fills += 1
                fills: list = []
                self._slice(block).insert(block)
                self._fill_core(core, block, fills)
                return AccessResult(src, merged, fills,
                                    _split_tail(merged, c, self.dram_cycles, src))

        fills = []
        st["L2"][core].accesses += 1
        if self.l2[core].lookup(block):
            ev = self.l1[core].insert(block)
            fills.append(("L1", self.l1[core].set_index(block), ev))
            return AccessResult("L2", c.l1_latency + c.l2_latency, fills,
                                {"L1": c.l1_latency, "L2": c.l2_latency})
        st["L2"][core].misses += 1
        sl = self._slice(block)
        st["LLC"][core].accesses += 1
        if sl.lookup(block):
            self._fill_core(core, block, fills)
            lat = c.l1_latency + c.l2_latency + c.llc_latency
            return AccessResult("LLC", lat, fills,
                                {"L1": c.l1_latency, "L2": c.l2_latency, "LLC": c.llc_latency})
        st["LLC"][core].misses += 1
        arrive = now_ns + (c.l1_latency + c.l2_latency + c.llc_latency) / self.ghz
        delay = int(math.ceil(self._dram_start_delay(arrive) * self.ghz))
        ev = sl.insert(block)
        fills.append(("LLC", sl.set_index(block), ev))
        self._fill_core(core, block, fills)
        dram = self.dram_cycles + delay
        return AccessResult("DRAM", c.l1_latency + c.l2_latency + c.llc_latency + dram, fills,
                            {"L1": c.l1_latency, "L2": c.l2_latency, "LLC": c.llc_latency,
                             "DRAM": dram})

    # -- NIC side ----------------------------------------------------------
    def nic_steering_fill(self, core: int, addr: int, now: float) -> float:
        """Device read whose block lands in ``core``'s L1; returns completion time (ns).

        The block is installed lazily, when a core access at or after the
        completion time calls ``advance``.
        """
        block = addr >> self.block_shift
        p = self.pcie
        t = now + p.one_way_latency_ns
        sl = self._slice(block)
        t += self.cache.llc_latency / self.ghz
        if sl.lookup(block):
            src = "LLC"
        else:
            t += self._dram_start_delay(t) + self.dram.fixed_latency_ns
            src = "DRAM"
        t += p.one_way_latency_ns
        self.nic_fills += 1
        self.request_bytes += p.request_header_bytes
        self.data_bytes += p.completion_header_bytes + self.cache.block_bytes
        key = (core, block)
        cur = self._pending.get(key)
        if cur is None or t < cur[0]:
            self._pending[key] = (t, src)
            heapq.heappush(self._pending_heap, (t, core, block))
        return t

    def charge_state(self, nbytes: int) -> None:
        self.state_bytes += nbytes

    def pcie_ledger(self, interval_ns: float) -> dict:
        cap = self.pcie.bytes_per_ns * interval_ns if interval_ns > 0 else 0.0

        def pct(b):
            return 100.0 * b / cap if cap else 0.0

        return {
            "state_bytes": self.state_bytes,
            "request_bytes": self.request_bytes,
            "data_bytes": self.data_bytes,
            "total_capacity_bytes": cap,
            "state_pct": pct(self.state_bytes),
            "request_pct": pct(self.request_bytes),
            "data_pct": pct(self.data_bytes),
        }

    # -- counters ----------------------------------------------------------
    def level_totals(self) -> dict[str, LevelStats]:
        out = {}
        for lvl, per_core in self.stats.items():
            out[lvl] = LevelStats(sum(s.accesses for s in per_core),
                                  sum(s.misses for s in per_core))
        return out

    @property
    def dram_bytes(self) -> int:
        return self.dram_accesses * self.cache.block_bytes


def _split_tail(total: int, c: CacheConfig, dram_cycles: int, src: str) -> dict:
    """Attribute a merged-fill wait: L1 first, remainder to the fill's source level."""
    l1 = min(total, c.l1_latency)
    out = {"L1": l1}
    if total > l1:
        out[src] = total - l1
    return out
