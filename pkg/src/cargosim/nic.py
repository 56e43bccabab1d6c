"""Multi-core NIC: Rx rings, user routines and critical-region offload execution."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .critical import CriticalRegion
from .errors import ConfigError
from .isa import RIP, AluOp, OpClass, alu_eval, branch_eval
from .memsys import MemorySystem


@dataclass
class NicConfig:
    cores: int = 6
    clock_mhz: float = 166.0
    icache_bytes: int = 8 * 1024
    icache_ways: int = 2
    scratchpad_bytes: int = 256 * 1024
    scratchpad_banks: int = 4
    scratchpad_latency_cycles: int = 2
    user_routine_insts: int = 56
    rx_ring_depth: int = 256
    offload_enable: bool = True
    step_budget: int = 512

    def validate(self) -> None:
        if self.cores < 1:
            raise ConfigError("cores", "must be >= 1")
        if self.rx_ring_depth < 1:
            raise ConfigError("rx_ring_depth", "must be >= 1")
        if self.clock_mhz <= 0:
            raise ConfigError("clock_mhz", "must be > 0")
        if self.user_routine_insts < 0:
            raise ConfigError("user_routine_insts", "must be >= 0")
        if self.step_budget < 1:
            raise ConfigError("step_budget", "must be >= 1")
        if self.scratchpad_banks < 1 or self.scratchpad_bytes < 1:
            raise ConfigError("scratchpad_bytes", "scratchpad must be non-empty")

    @property
    def cycle_ns(self) -> float:
        return 1000.0 / self.clock_mhz


@dataclass
class Packet:
    request_id: int
    arrival_ns: float
    key_hash: int
    key: int
    dest_core: int
    request_class: int = 0
    enqueue_ns: float = 0.0
    truth_blocks: Optional[frozenset] = None

    def nic_args(self) -> dict[int, int]:
        return {1: self.key_hash, 2: self.key}


@dataclass
class ExecOutcome:
    executed: int = 0
    loads_issued: int = 0
    correct: int = 0
    incorrect: int = 0
    failed_unknown: int = 0
    fills: list = field(default_factory=list)   # (addr, completion ns)
    end_ns: float = 0.0


@dataclass
class NicStats:
    packets_in: int = 0
    enqueued: int = 0
    dropped: int = 0
    offloads: int = 0
    no_region: int = 0
    executed_instructions: int = 0
    user_routine_instructions: int = 0
    loads_issued: int = 0
    correct: int = 0
    incorrect: int = 0
    failed_unknown: int = 0
    busy_ns: float = 0.0
    installs: int = 0
    regions_dropped: int = 0

    @property
    def incorrect_rate(self) -> float:
        n = self.correct + self.incorrect
        return self.incorrect / n if n else 0.0

    @property
    def failed_rate(self) -> float:
        n = self.executed_instructions + self.failed_unknown
        return self.failed_unknown / n if n else 0.0

    @property
    def instructions_per_offload(self) -> float:
        if not self.offloads:
            return 0.0
        return (self.executed_instructions + self.user_routine_instructions) / self.offloads


@dataclass
class InstalledRegion:
    region: CriticalRegion
    classes: frozenset
    active_ns: float
    state_bytes: int


def region_state_bytes(region: CriticalRegion, instr_bytes: int, reg_bytes: int) -> int:
    return len(region.instructions) * instr_bytes + len(region.required_regs) * reg_bytes


class RxRing:
    def __init__(self, depth: int):
        self.depth = depth
        self.q: deque = deque()

    def __len__(self) -> int:
        return len(self.q)

    def push(self, pkt: Packet) -> bool:
        if len(self.q) >= self.depth:
            return False
        self.q.append(pkt)
        return True

    def pop(self) -> Packet:
        return self.q.popleft()


class NicModel:
    def __init__(self, config: Optional[NicConfig] = None, memsys: Optional[MemorySystem] = None,
                 host_cores: int = 1, memory: Optional[dict] = None):
        self.config = config or NicConfig()
        self.config.validate()
        self.mem = memsys or MemorySystem(cores=host_cores)
        self.memory = memory if memory is not None else {}
        self.free_at = [0.0] * self.config.cores
        self.rings = [RxRing(self.config.rx_ring_depth) for _ in range(host_cores)]
        self.table: dict[int, list[InstalledRegion]] = {}
        self.stats = NicStats()

    # -- offload table -----------------------------------------------------
    def install_regions(self, source_core: int, regions: Iterable[CriticalRegion], now: float,
                        class_pcs: Optional[dict] = None) -> int:
        """Replace ``source_core``'s offloads; returns the PCIe State bytes charged."""
        p = self.mem.pcie
        cfg = self.config
        sized = [(r, region_state_bytes(r, p.instr_encoding_bytes, p.reg_encoding_bytes))
                 for r in regions]
        others = sum(ir.state_bytes for c, irs in self.table.items() if c != source_core
                     for ir in irs)
        budget = cfg.scratchpad_bytes - others
        total = sum(b for _, b in sized)
        if total > budget:
            sized.sort(key=lambda rb: rb[1])
            kept = []
            used = 0
            for r, b in sized:
                if used + b <= budget:
                    kept.append((r, b))
                    used += b
                else:
                    self.stats.regions_dropped += 1
            sized = kept
        nbytes = p.state_header_bytes + sum(b for _, b in sized)
        self.mem.charge_state(nbytes)
        write_cycles = -(-nbytes // (8 * cfg.scratchpad_banks)) + cfg.scratchpad_latency_cycles
        active = now + p.one_way_latency_ns + write_cycles * cfg.cycle_ns
        installed = []
        for r, b in sized:
            if class_pcs:
                pcs = set(r.pcs)
                classes = frozenset(c for c, cp in class_pcs.items() if pcs & cp)
            else:
                classes = frozenset()
            installed.append(InstalledRegion(r, classes, active, b))
        self.table[source_core] = installed
        self.stats.installs += 1
        return nbytes

    def matching(self, pkt: Packet, now: float) -> list[CriticalRegion]:
        out = []
        for ir in self.table.get(pkt.dest_core, ()):
            if ir.active_ns > now:
                continue
            if ir.classes and pkt.request_class not in ir.classes:
                continue
            out.append(ir.region)
        return out

    # -- per packet --------------------------------------------------------
    def on_packet(self, pkt: Packet, now: float) -> Optional[ExecOutcome]:
        """Run matching offloads for ``pkt`` arriving at ``now`` (ns)."""
        cfg = self.config
        if not cfg.offload_enable:
            return None
        regions = self.matching(pkt, now)
        if not regions:
            self.stats.no_region += 1
            return None
        core = min(range(cfg.cores), key=lambda c: (self.free_at[c], c))
        start = max(now, self.free_at[core])
        static_insts = sum(len(r.instructions) for r in regions)
        busy = (cfg.user_routine_insts + static_insts) * cfg.cycle_ns
        self.free_at[core] = start + busy
        self.stats.busy_ns += busy
        self.stats.offloads += 1
        self.stats.user_routine_instructions += cfg.user_routine_insts
        t = start + cfg.user_routine_insts * cfg.cycle_ns
        total = ExecOutcome(end_ns=t)
        for r in regions:
            out = self.execute_region(r, pkt.nic_args(), pkt.dest_core, t, pkt.truth_blocks)
            total.executed += out.executed
            total.loads_issued += out.loads_issued
            total.correct += out.correct
            total.incorrect += out.incorrect
            total.failed_unknown += out.failed_unknown
            total.fills.extend(out.fills)
            total.end_ns = max(total.end_ns, out.end_ns)
            t = out.end_ns
        s = self.stats
        s.executed_instructions += total.executed
        s.loads_issued += total.loads_issued
        s.correct += total.correct
        s.incorrect += total.incorrect
        s.failed_unknown += total.failed_unknown
        return total

    def execute_region(self, region: CriticalRegion, args: dict, dest_core: int, now: float,
                       truth_blocks: Optional[frozenset] = None) -> ExecOutcome:
        cfg = self.config
        cyc = cfg.cycle_ns
        shift = self.mem.block_shift
        regs: dict[int, int] = {}
        ready: dict[int, float] = {}
        for rr in region.required_regs:
            if rr.state == "READY":
                regs[rr.reg] = rr.value
            elif rr.state == "READY-DYN" and rr.value in args:
                regs[rr.reg] = args[rr.value]
        instrs = region.instructions
        where = {ins.pc: i for i, ins in enumerate(instrs)}
        out = ExecOutcome()
        t = now
        i = 0
        steps = 0
        while i < len(instrs) and steps < cfg.step_budget:
            ins = instrs[i]
            steps += 1
            if ins.context_root:
                i += 1
                continue
            rec = ins.template
            kind = ins.kind
            t += cyc
            if kind == OpClass.LOAD:
                vals = []
                ok = True
                for reg in (rec.addr_base, rec.addr_index):
                    if reg is None:
                        vals.append(0)
                    elif reg == RIP:
                        vals.append(rec.pc)
                    elif reg in regs:
                        vals.append(regs[reg])
                    else:
                        ok = False
                if not ok:
                    out.failed_unknown += 1
                    if rec.dest is not None:
                        regs.pop(rec.dest, None)
                    i += 1
                    continue
                if rec.addr_base is not None and rec.addr_base != RIP and vals[0] == 0:
                    break   # null pointer ends the walk
                addr = (vals[0] + vals[1] * rec.addr_scale + rec.addr_disp) & ((1 << 64) - 1)
                issue = max([t] + [ready.get(r, now) for r in (rec.addr_base, rec.addr_index)
                                   if r is not None])
                done = self.mem.nic_steering_fill(dest_core, addr, issue)
                out.executed += 1
                out.loads_issued += 1
                out.fills.append((addr, done))
                if truth_blocks is not None:
                    if (addr >> shift) in truth_blocks:
                        out.correct += 1
                    else:
                        out.incorrect += 1
                if rec.dest is not None:
                    # memory never touched by the trace reads as zero
                    regs[rec.dest] = self.memory.get(addr, 0)
                    ready[rec.dest] = done
                out.end_ns = max(out.end_ns, done)
                i += 1
            elif kind == OpClass.BRANCH:
                out.executed += 1
                if rec.alu_op == AluOp.NONE:
                    taken = True
                else:
                    a = regs.get(rec.src1) if rec.src1 is not None else None
                    b = regs.get(rec.src2) if rec.src2 is not None else rec.addr_disp
                    if a is None or b is None:
                        taken = ins.bias_taken
                    else:
                        taken = branch_eval(rec.alu_op, a, b)
                if taken:
                    j = where.get(rec.branch_target)
                    if j is None:
                        break
                    i = j
                else:
                    i += 1
            else:
                out.executed += 1
                if rec.dest is not None:
                    if rec.opclass == OpClass.REGMOVE:
                        v = regs.get(rec.src1)
                    elif rec.alu_op == AluOp.MOVI:
                        v = alu_eval(AluOp.MOVI, 0, rec.addr_disp)
                    else:
                        a = regs.get(rec.src1) if rec.src1 is not None else None
                        b = regs.get(rec.src2) if rec.src2 is not None else rec.addr_disp
                        v = None if a is None or b is None else alu_eval(rec.alu_op, a, b)
                    if v is None:
                        out.failed_unknown += 1
                        regs.pop(rec.dest, None)
                    else:
                        regs[rec.dest] = v
                        ready[rec.dest] = max([t] + [ready.get(r, now) for r in
                                                     (rec.src1, rec.src2) if r is not None])
                i += 1
        out.end_ns = max(out.end_ns, t)
        return out

    # -- rings -------------------------------------------------------------
    def enqueue(self, pkt: Packet, now: float) -> bool:
        self.stats.packets_in += 1
        pkt.enqueue_ns = now
        if self.rings[pkt.dest_core].push(pkt):
            self.stats.enqueued += 1
            return True
        self.stats.dropped += 1
        return False
