"""Charging-model core timing.

Instructions issue ``width`` per cycle.  Loads are non-blocking: independent
loads overlap up to ``mlp_window`` outstanding, while a load whose address
depends on an outstanding load, and every non-load instruction, waits for the
outstanding loads to complete.  Waiting cycles are charged to the cache levels
of the latest-completing load, last level first, so the CPI stack always sums
to the measured cycle count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .critical import CriticalEngine
from .errors import ConfigError
from .isa import OpClass, RequestSegment
from .memsys import MemorySystem

BUCKETS = ("base", "L1", "L2", "LLC", "DRAM", "branch", "other")
MEM_BUCKETS = ("L1", "L2", "LLC", "DRAM")
_TAIL_ORDER = ("DRAM", "LLC", "L2", "L1")


@dataclass
class CoreConfig:
    cores: int = 1
    hw_threads_per_core: int = 4
    clock_ghz: float = 4.0
    issue_width: int = 4
    commit_width: int = 8
    rob_entries: int = 256
    rs_entries: int = 128
    mlp_window: Optional[int] = None
    branch_penalty: int = 15
    bp_entries: int = 4096

    def validate(self) -> None:
        if not 1 <= self.cores <= 16:
            raise ConfigError("cores", "must be in 1..16")
        for name in ("hw_threads_per_core", "issue_width", "commit_width", "rob_entries",
                     "rs_entries", "bp_entries"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.mlp_window is not None and self.mlp_window < 1:
            raise ConfigError("mlp_window", "must be >= 1")
        if self.clock_ghz <= 0:
            raise ConfigError("clock_ghz", "must be > 0")
        if self.branch_penalty < 0:
            raise ConfigError("branch_penalty", "must be >= 0")

    @property
    def effective_mlp(self) -> int:
        if self.mlp_window is not None:
            return self.mlp_window
        return max(1, self.rs_entries // self.issue_width)


class CpiStack:
    def __init__(self):
        self.cycles = {b: 0 for b in BUCKETS}
        self.instructions = 0

    def add(self, other: dict, instructions: int = 0) -> None:
        for k, v in other.items():
            self.cycles[k] += v
        self.instructions += instructions

    @property
    def total(self) -> int:
        return sum(self.cycles.values())

    @property
    def memory_share(self) -> float:
        t = self.total
        return sum(self.cycles[b] for b in MEM_BUCKETS) / t if t else 0.0

    def cpi(self) -> dict:
        n = self.instructions
        return {b: (v / n if n else 0.0) for b, v in self.cycles.items()}

    def normalized(self) -> dict:
        t = self.total
        return {b: (v / t if t else 0.0) for b, v in self.cycles.items()}


@dataclass
class RequestResult:
    request_id: int
    core: int
    start_ns: float
    cycles: int
    latency_ns: float
    stack: dict
    instructions: int = 0
    loads: int = 0
    l1_hits: int = 0
    l2_misses: int = 0
    max_outstanding: int = 0


@dataclass
class _Outstanding:
    done: int
    issue: int
    components: dict
    dest: Optional[int]


class BranchPredictor:
    """Per-pc 2-bit saturating counters."""

    def __init__(self, entries: int = 4096):
        self.entries = entries
        self.table = bytearray([1]) * entries

    def predict_and_update(self, pc: int, taken: bool) -> bool:
        i = pc % self.entries
        c = self.table[i]
        correct = (c >= 2) == taken
        if taken:
            if c < 3:
                self.table[i] = c + 1
        elif c > 0:
            self.table[i] = c - 1
        return correct


def _charge_tail(stall: int, ld: _Outstanding, out: dict) -> None:
    rest = stall
    for lvl in _TAIL_ORDER:
        if rest <= 0:
            break
        c = ld.components.get(lvl, 0)
        take = min(c, rest)
        if take:
            out[lvl] += take
            rest -= take
    if rest > 0:
        out["other"] += rest


class CoreModel:
    def __init__(self, config: Optional[CoreConfig] = None,
                 memsys: Optional[MemorySystem] = None,
                 engines: Optional[list[CriticalEngine]] = None,
                 on_epoch: Optional[Callable] = None):
        self.config = config or CoreConfig()
        self.config.validate()
        self.mem = memsys or MemorySystem(cores=self.config.cores,
                                          core_ghz=self.config.clock_ghz)
        self.engines = engines
        self.on_epoch = on_epoch
        self.bp = [BranchPredictor(self.config.bp_entries) for _ in range(self.config.cores)]
        self.stack = CpiStack()
        self.per_core = [CpiStack() for _ in range(self.config.cores)]
        self.requests = 0

    def run_request(self, seg: RequestSegment, core: int = 0, start_ns: float = 0.0,
                    active_threads: int = 1) -> RequestResult:
        cfg = self.config
        ghz = cfg.clock_ghz
        width = max(1, cfg.issue_width // max(1, active_threads))
        mlp = cfg.effective_mlp
        mem = self.mem
        bp = self.bp[core]
        eng = self.engines[core] if self.engines else None
        if eng is not None:
            eng.begin_request(seg.key_hash, seg.key)
        base_cycle = int(math.floor(start_ns * ghz))
        acc = {b: 0 for b in BUCKETS}
        stalls = 0
        outstanding: list[_Outstanding] = []
        pending_dests: dict[int, int] = {}
        res = RequestResult(seg.request_id, core, start_ns, 0, 0.0, acc)

        def drain(now: int, oldest_only: bool = False) -> int:
            """Wait for all outstanding loads (or only the oldest); returns stall."""
            if not outstanding:
                return 0
            if not oldest_only:
                last = max(outstanding, key=lambda o: o.done)
                outstanding.clear()
                pending_dests.clear()
            else:
                last = min(outstanding, key=lambda o: o.done)
                keep = [o for o in outstanding if o.done > last.done]
                outstanding[:] = keep
                pending_dests.clear()
                for o in keep:
                    if o.dest is not None:
                        pending_dests[o.dest] = pending_dests.get(o.dest, 0) + 1
            stall = max(0, last.done - now)
            if stall:
                _charge_tail(stall, last, acc)
            return stall

        n = 0
        for rec in seg.records:
            now = stalls + n // width
            op = rec.opclass
            if op == OpClass.LOAD:
                deps = any(r in pending_dests for r in rec.address_regs())
                if deps:
                    stalls += drain(now)
                elif len(outstanding) >= mlp:
                    stalls += drain(now, oldest_only=True)
                now = stalls + n // width
                r = mem.core_access(core, rec.eff_addr, False, base_cycle + now)
                res.loads += 1
                if r.level_hit == "L1":
                    res.l1_hits += 1
                outstanding.append(_Outstanding(now + r.latency_cycles, now, r.components,
                                                rec.dest))
                if rec.dest is not None:
                    pending_dests[rec.dest] = pending_dests.get(rec.dest, 0) + 1
                res.max_outstanding = max(res.max_outstanding, len(outstanding))
                if r.level_hit in ("LLC", "DRAM"):
                    res.l2_misses += 1
                    if eng is not None:
                        eng.on_l2_miss(rec)
            else:
                stalls += drain(now)
                if op == OpClass.STORE:
                    mem.core_access(core, rec.eff_addr, True, base_cycle + stalls + n // width)
                elif op == OpClass.BRANCH and rec.alu_op != 0:
                    if not bp.predict_and_update(rec.pc, rec.branch_taken):
                        stalls += cfg.branch_penalty
                        acc["branch"] += cfg.branch_penalty
            n += 1
            if eng is not None:
                eng.on_retire(rec, start_ns)
                if eng.epoch_due:
                    regions = eng.emit_regions()
                    if self.on_epoch is not None:
                        self.on_epoch(core, regions, start_ns + (stalls + n // width) / ghz)
        if outstanding:
            now = stalls + max(0, n - 1) // width
            stalls += drain(now)
        base = -(-n // width)
        acc["base"] = base
        total = base + stalls
        assert sum(acc.values()) == total, (acc, total)
        res.cycles = total
        res.latency_ns = total / ghz
        res.instructions = n
        self.stack.add(acc, n)
        self.per_core[core].add(acc, n)
        self.requests += 1
        return res

    def cpi_report(self) -> dict:
        st = self.stack
        return {"cycles": dict(st.cycles), "total": st.total, "instructions": st.instructions,
                "cpi": st.cpi(), "memory_share": st.memory_share}
