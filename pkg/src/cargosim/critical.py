"""Online identification of critical regions.

The engine watches retired instructions and L2-missing loads of one core.  It
keeps a register-to-PC map of last writers, a small set-associative cache of
context instructions (loads that miss, the instructions that feed them, and
branches that steer them) and computes which cached instructions are *ready*:
every operand is either rooted (DEAD) or produced by another ready entry.  At
each epoch boundary ready entries are grouped into regions and shipped with
their required register context.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import ConfigError
from .isa import ARG_REGS, NUM_REGS, RBP, RDX, REG_NAMES, RIP, OpClass, TraceRecord, reg_name
from .regpred import Election, RegValuePredictor

# predecessor / map sentinels (real pcs are >= 0)
INVALID = -1
DEAD = -2
UNKNOWN = -3

ENTRY_BYTES = 13
MAP_ENTRY_BYTES = 8


class EdgeClass(str, Enum):
    IRRELEVANT = "IRRELEVANT"
    TRACK = "TRACK"
    CHECKPOINT_BYPASS = "CHECKPOINT_BYPASS"


class RetireOrderError(RuntimeError):
    pass


@dataclass
class CriticalConfig:
    cache_entries: int = 256
    ways: int = 16
    epoch_l2_misses: int = 4096
    enable: bool = True
    clear_on_epoch: bool = False
    withhold_unresolved: bool = True
    max_alt_preds: int = 2

    def validate(self) -> None:
        if self.ways < 1 or self.cache_entries < self.ways or self.cache_entries % self.ways:
            raise ConfigError("ways", "cache_entries must be a positive multiple of ways")
        if self.epoch_l2_misses < 1:
            raise ConfigError("epoch_l2_misses", "must be >= 1")
        if self.max_alt_preds < 0:
            raise ConfigError("max_alt_preds", "must be >= 0")

    @property
    def sets(self) -> int:
        return self.cache_entries // self.ways


def _pred_str(p: int) -> str:
    if p == DEAD:
        return "DEAD"
    if p == UNKNOWN:
        return "UNKNOWN"
    if p == INVALID:
        return "INVALID"
    return hex(p)


@dataclass
class ContextInstrEntry:
    pc: int
    kind: OpClass
    template: TraceRecord
    pred1: int = UNKNOWN
    pred2: int = DEAD
    alt1: list = field(default_factory=list)
    alt2: list = field(default_factory=list)
    cond_preds: list = field(default_factory=list)
    ready: bool = False
    valid: bool = True
    access_count: int = 1
    executed: int = 0
    taken: int = 0

    @property
    def operand_regs(self) -> tuple[Optional[int], Optional[int]]:
        t = self.template
        if self.kind == OpClass.LOAD:
            return t.addr_base, t.addr_index
        if self.kind == OpClass.BRANCH:
            return None, None
        return t.src1, t.src2

    def operand_preds(self, i: int) -> list[int]:
        if i == 0:
            return [self.pred1] + self.alt1
        return [self.pred2] + self.alt2

    def all_preds(self) -> list[int]:
        return self.operand_preds(0) + self.operand_preds(1)

    def pc_preds(self) -> list[int]:
        return [p for p in self.all_preds() if p >= 0]

    @property
    def dest(self) -> Optional[int]:
        return self.template.dest

    @property
    def bias_taken(self) -> bool:
        return self.executed > 0 and 2 * self.taken >= self.executed


class ContextInstrCache:
    def __init__(self, entries: int = 256, ways: int = 16):
        self.ways = ways
        self.num_sets = entries // ways
        self.sets: list[list[Optional[ContextInstrEntry]]] = [
            [None] * ways for _ in range(self.num_sets)]
        self.index: dict[int, tuple[int, int]] = {}

    def set_index(self, pc: int) -> int:
        return (pc ^ (pc >> 4) ^ (pc >> 8)) % self.num_sets

    def lookup(self, pc: int) -> Optional[ContextInstrEntry]:
        loc = self.index.get(pc)
        return None if loc is None else self.sets[loc[0]][loc[1]]

    def __contains__(self, pc: int) -> bool:
        return pc in self.index

    def insert(self, entry: ContextInstrEntry) -> Optional[ContextInstrEntry]:
        """Place ``entry``; returns the evicted valid entry, if any."""
        s = self.set_index(entry.pc)
        row = self.sets[s]
        victim_way = None
        for w, e in enumerate(row):
            if e is None or not e.valid:
                victim_way = w
                break
        if victim_way is None:
            victim_way = min(range(self.ways), key=lambda w: (row[w].access_count, w))
        old = row[victim_way]
        if old is not None:
            self.index.pop(old.pc, None)
        row[victim_way] = entry
        self.index[entry.pc] = (s, victim_way)
        return old if old is not None and old.valid else None

    def entries(self) -> list[ContextInstrEntry]:
        return [e for row in self.sets for e in row if e is not None and e.valid]

    def clear(self) -> None:
        for row in self.sets:
            for w in range(self.ways):
                row[w] = None
        self.index.clear()

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class BackEdgeCheckpoint:
    branch_pc: int
    target: int
    checkpointed_regs: dict
    active: bool = True


@dataclass(frozen=True)
class RegionInstr:
    pc: int
    kind: OpClass
    template: TraceRecord
    context_root: bool
    bias_taken: bool
    dependent: bool = False   # some operand comes from another region instruction


@dataclass(frozen=True)
class RequiredReg:
    reg: int
    state: str           # "READY" or "READY-DYN" (or "UNRESOLVED" when not withheld)
    value: Optional[int]  # elected value, or argument id for READY-DYN


@dataclass
class CriticalRegion:
    region_id: str
    instructions: list
    required_regs: list
    epoch: int
    source_core: int = 0

    @property
    def pcs(self) -> list[int]:
        return [i.pc for i in self.instructions]

    @property
    def request_classes(self) -> set:
        return set()

    def __len__(self) -> int:
        return len(self.instructions)

    def required(self, reg: int) -> Optional[RequiredReg]:
        for r in self.required_regs:
            if r.reg == reg:
                return r
        return None


def _region_id(instrs: list[RegionInstr], required: list[RequiredReg]) -> str:
    h = hashlib.sha1()
    for ins in instrs:
        h.update(repr((ins.pc, int(ins.kind), ins.context_root)).encode())
    for r in required:
        h.update(repr((r.reg, r.state, r.value)).encode())
    return h.hexdigest()[:16]


class CriticalEngine:
    def __init__(self, config: Optional[CriticalConfig] = None,
                 predictor: Optional[RegValuePredictor] = None, core_id: int = 0):
        self.config = config or CriticalConfig()
        self.config.validate()
        self.pred = predictor or RegValuePredictor()
        self.core_id = core_id
        self.cache = ContextInstrCache(self.config.cache_entries, self.config.ways)
        self.regmap = [INVALID] * NUM_REGS
        self.regs: dict[int, int] = {}
        self.pending: set[int] = set()
        self.checkpoint: Optional[BackEdgeCheckpoint] = None
        self.epoch = 0
        self.epoch_misses = 0
        self.total_misses = 0
        self.withheld = 0
        self.last_time: Optional[float] = None
        self.nic_args: dict[int, int] = {}
        self._dirty = True
        self._min_pc: Optional[int] = None
        self._span: Optional[tuple[int, int]] = None
        self._readers: dict[int, set] = {}
        self._roots: dict[int, int] = {}
        self._tracked: set[int] = set()
        self._in_seen: set[int] = set()
        self._written_first: set[int] = set()

    # -- structural helpers ------------------------------------------------
    def root_reset(self) -> None:
        for r in range(NUM_REGS):
            self.regmap[r] = DEAD if r in ARG_REGS else INVALID
        self.pred.begin_instance()
        self._in_seen.clear()
        self._written_first.clear()

    def _operand_pred(self, reg: Optional[int], self_pc: int) -> int:
        if reg is None or reg == RIP:
            return DEAD
        m = self.regmap[reg]
        if m == DEAD:
            return DEAD
        if m == INVALID:
            return UNKNOWN
        if m != self_pc and m not in self.cache:
            self.pending.add(m)
        return m

    def _allocate(self, rec: TraceRecord) -> ContextInstrEntry:
        kind = rec.opclass
        if kind == OpClass.BRANCH:
            e = ContextInstrEntry(rec.pc, kind, rec, pred1=rec.branch_target, pred2=DEAD)
            e.cond_preds = self._cond_producers(rec)
        else:
            e = ContextInstrEntry(rec.pc, kind, rec)
            r1, r2 = e.operand_regs
            e.pred1 = self._operand_pred(r1, rec.pc)
            e.pred2 = self._operand_pred(r2, rec.pc)
        self.pending.discard(rec.pc)
        self.cache.insert(e)
        self._dirty = True
        return e

    def _cond_producers(self, rec: TraceRecord) -> list[int]:
        out = []
        for reg in (rec.src1, rec.src2):
            if reg is None or reg == RIP:
                continue
            m = self.regmap[reg]
            if m >= 0:
                out.append(m)
                if m not in self.cache:
                    self.pending.add(m)
        return out

    def _refresh(self, e: ContextInstrEntry, rec: TraceRecord) -> None:
        """Fill in UNKNOWN operands and record additional reaching writers."""
        if e.kind == OpClass.BRANCH:
            for p in self._cond_producers(rec):
                if p not in e.cond_preds:
                    e.cond_preds.append(p)
                    self._dirty = True
            return
        regs = e.operand_regs
        for i in (0, 1):
            cur = self._operand_pred(regs[i], e.pc)
            if cur == UNKNOWN:
                continue
            primary = e.pred1 if i == 0 else e.pred2
            alts = e.alt1 if i == 0 else e.alt2
            if primary == UNKNOWN:
                if i == 0:
                    e.pred1 = cur
                else:
                    e.pred2 = cur
                self._dirty = True
            elif cur != primary and cur not in alts and len(alts) < self.config.max_alt_preds:
                alts.append(cur)
                self._dirty = True

    def _recompute(self) -> None:
        entries = self.cache.entries()
        cached = {e.pc: e for e in entries}
        for e in entries:
            e.ready = False
        changed = True
        while changed:
            changed = False
            for e in entries:
                if e.ready:
                    continue
                if e.kind == OpClass.BRANCH:
                    t = cached.get(e.pred1)
                    ok = t is not None and t.ready
                else:
                    ok = True
                    for p in e.all_preds():
                        if p == DEAD or p == e.pc:
                            continue
                        if p == UNKNOWN:
                            ok = False
                            break
                        t = cached.get(p)
                        if t is None or not t.ready:
                            ok = False
                            break
                if ok:
                    e.ready = True
                    changed = True
        if entries:
            pcs = [e.pc for e in entries]
            self._min_pc = min(pcs)
            self._span = (self._min_pc, max(pcs))
        else:
            self._min_pc = None
            self._span = None
        readers: dict[int, set] = {}
        roots: dict[int, int] = {}
        for e in entries:
            if e.kind == OpClass.BRANCH:
                continue
            if self._is_context_root(e):
                roots[e.pc] = e.dest
            elif e.pc_preds():
                regs = e.operand_regs
                for i in (0, 1):
                    if regs[i] is not None and regs[i] != RIP and DEAD in e.operand_preds(i):
                        readers.setdefault(e.pc, set()).add(regs[i])
        self._readers = readers
        self._roots = roots
        tracked = set(roots.values())
        for rs in readers.values():
            tracked |= rs
        for r in tracked - self._tracked:
            self.pred.track(r)
        self._tracked = tracked
        self._dirty = False

    @staticmethod
    def _is_context_root(e: ContextInstrEntry) -> bool:
        return (e.kind != OpClass.BRANCH and e.dest is not None
                and all(p == DEAD for p in e.all_preds()))

    def _ensure(self) -> None:
        if self._dirty:
            self._recompute()

    # -- public queries ----------------------------------------------------
    @property
    def min_valid_pc(self) -> Optional[int]:
        self._ensure()
        return self._min_pc

    def span(self) -> Optional[tuple[int, int]]:
        self._ensure()
        return self._span

    def entry(self, pc: int) -> Optional[ContextInstrEntry]:
        self._ensure()
        return self.cache.lookup(pc)

    def ready_pcs(self) -> list[int]:
        self._ensure()
        return sorted(e.pc for e in self.cache.entries() if e.ready)

    def candidate_registers(self) -> dict[int, str]:
        """Register -> 'read' (rooted operand) or 'root' (predicted root result)."""
        self._ensure()
        out = {}
        for rs in self._readers.values():
            for r in rs:
                out[r] = "read"
        for r in self._roots.values():
            out.setdefault(r, "root")
        return out

    @property
    def epoch_due(self) -> bool:
        return self.epoch_misses >= self.config.epoch_l2_misses

    def classify_edge(self, branch: TraceRecord,
                      span: Optional[tuple[int, int]] = None) -> EdgeClass:
        if branch.opclass != OpClass.BRANCH:
            raise ValueError("classify_edge needs a BRANCH record")
        if span is None:
            span = self.span()
        if span is None:
            return EdgeClass.IRRELEVANT
        lo, hi = span
        src, tgt = branch.pc, branch.branch_target
        if lo <= src <= hi or lo <= tgt <= hi:
            return EdgeClass.TRACK
        if tgt < src and tgt < lo and src > hi:
            return EdgeClass.CHECKPOINT_BYPASS
        return EdgeClass.IRRELEVANT

    # -- event hooks -------------------------------------------------------
    def begin_request(self, key_hash: int, key: int) -> None:
        """Request boundary: argument registers receive the packet's values."""
        self.nic_args = {1: key_hash, 2: key}
        self.regs[RDX] = key_hash
        self.regs[RBP] = key
        if self.config.enable:
            self.root_reset()

    def on_l2_miss(self, rec: TraceRecord) -> None:
        if rec.opclass != OpClass.LOAD:
            raise ValueError("on_l2_miss needs a LOAD record")
        if not self.config.enable:
            return
        self.epoch_misses += 1
        self.total_misses += 1
        e = self.cache.lookup(rec.pc)
        if e is not None:
            e.access_count = min(e.access_count + 1, 255)
            self._refresh(e, rec)
        else:
            self._allocate(rec)

    def on_retire(self, rec: TraceRecord, now: Optional[float] = None) -> None:
        if now is not None:
            if self.last_time is not None and now < self.last_time:
                raise RetireOrderError(
                    f"retire time {now} earlier than previous {self.last_time} at pc {rec.pc:#x}")
            self.last_time = now
        if not self.config.enable:
            self._apply(rec)
            return
        self._ensure()
        pc = rec.pc
        if self._min_pc is not None and pc == self._min_pc:
            self.root_reset()

        rs = self._readers.get(pc)
        if rs:
            for r in rs:
                if r not in self._in_seen and r not in self._written_first:
                    self._in_seen.add(r)
                    self.pred.observe_in(r, self.regs.get(r), self.nic_args)

        e = self.cache.lookup(pc)
        if rec.opclass == OpClass.BRANCH:
            cls = self.classify_edge(rec, self._span)
            if cls == EdgeClass.TRACK:
                if e is None:
                    e = self._allocate(rec)
                else:
                    e.access_count = min(e.access_count + 1, 255)
                    self._refresh(e, rec)
            elif cls == EdgeClass.CHECKPOINT_BYPASS and rec.branch_taken and e is None:
                self.checkpoint = BackEdgeCheckpoint(pc, rec.branch_target, dict(self.regs))
            if e is not None:
                e.executed += 1
                e.taken += int(rec.branch_taken)
        elif pc in self.pending and e is None and rec.opclass != OpClass.STORE:
            e = self._allocate(rec)
        elif e is not None:
            self._refresh(e, rec)

        cp = self.checkpoint
        if cp is not None and cp.active and pc != cp.branch_pc and pc in self.cache:
            self.resolve_checkpoint()

        d = rec.dest
        if d is not None and d in self._tracked:
            if self._roots.get(pc) == d and d not in self._in_seen:
                self._in_seen.add(d)
                self.pred.observe_in(d, rec.value, self.nic_args)
            elif d in self._in_seen:
                self.pred.observe_gen(d, rec.value)
            else:
                self._written_first.add(d)
        self._apply(rec)

    def _apply(self, rec: TraceRecord) -> None:
        d = rec.dest
        if d is not None:
            self.regmap[d] = rec.pc
            if rec.value is not None:
                self.regs[d] = rec.value

    def resolve_checkpoint(self) -> bool:
        """Compare root-consumed registers with the checkpoint; add the back edge on match."""
        cp = self.checkpoint
        if cp is None or not cp.active:
            return False
        self._ensure()
        consumed = set()
        for rs in self._readers.values():
            consumed |= rs
        match = all(self.regs.get(r) == cp.checkpointed_regs.get(r) for r in consumed)
        cp.active = False
        self.checkpoint = None
        if match and cp.branch_pc not in self.cache:
            tmpl = TraceRecord(pc=cp.branch_pc, opclass=OpClass.BRANCH,
                               branch_target=cp.target, branch_taken=True)
            e = ContextInstrEntry(cp.branch_pc, OpClass.BRANCH, tmpl, pred1=cp.target,
                                  pred2=DEAD, executed=1, taken=1)
            self.cache.insert(e)
            self._dirty = True
        return match

    # -- epoch boundary ----------------------------------------------------
    def preview_regions(self) -> list[CriticalRegion]:
        """Regions as they would be emitted now, without ending the epoch."""
        self._ensure()
        withheld = self.withheld
        regions = self._build_regions()
        self.withheld = withheld
        return regions

    def emit_regions(self) -> list[CriticalRegion]:
        self._ensure()
        regions = self._build_regions()
        self.epoch += 1
        self.epoch_misses = 0
        if self.config.clear_on_epoch:
            self.cache.clear()
            self.pending.clear()
            self.regmap = [INVALID] * NUM_REGS
        else:
            for e in self.cache.entries():
                e.access_count = max(1, e.access_count >> 1)
        self._dirty = True
        self.pred.reset_epoch()
        return regions

    def _groups(self) -> list[list[ContextInstrEntry]]:
        ready = {e.pc: e for e in self.cache.entries() if e.ready}
        parent = {pc: pc for pc in ready}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

        for e in ready.values():
            links = [e.pred1] + e.cond_preds if e.kind == OpClass.BRANCH else e.pc_preds()
            for p in links:
                if p in ready and p != e.pc:
                    union(e.pc, p)
        comps: dict[int, list] = {}
        for pc in ready:
            comps.setdefault(find(pc), []).append(ready[pc])
        groups = sorted((sorted(g, key=lambda x: x.pc) for g in comps.values()),
                        key=lambda g: g[0].pc)
        merged: list[list] = []
        for g in groups:
            if merged and g[0].pc <= merged[-1][-1].pc:
                merged[-1] = sorted(merged[-1] + g, key=lambda x: x.pc)
            else:
                merged.append(g)
        return merged

    def _build_regions(self) -> list[CriticalRegion]:
        out = []
        for group in self._groups():
            instrs = []
            needed: list[int] = []
            for e in group:
                root = self._is_context_root(e)
                instrs.append(RegionInstr(e.pc, e.kind, e.template, root, e.bias_taken,
                                          bool(e.pc_preds())))
                if e.kind == OpClass.BRANCH:
                    continue
                if root:
                    if e.dest not in needed:
                        needed.append(e.dest)
                elif e.pc_preds():
                    regs = e.operand_regs
                    for i in (0, 1):
                        r = regs[i]
                        if r is not None and r != RIP and DEAD in e.operand_preds(i) \
                                and r not in needed:
                            needed.append(r)
            if not any(i.kind == OpClass.LOAD and not i.context_root for i in instrs):
                continue
            required = []
            unresolved = False
            for r in sorted(needed):
                el: Election = self.pred.elect(r)
                if not el.resolved:
                    unresolved = True
                required.append(RequiredReg(r, el.state, el.value))
            if unresolved and self.config.withhold_unresolved:
                self.withheld += 1
                continue
            out.append(CriticalRegion(_region_id(instrs, required), instrs, required,
                                      self.epoch, self.core_id))
        return out

    # -- reporting ---------------------------------------------------------
    def storage_bytes(self) -> int:
        return self.config.cache_entries * ENTRY_BYTES + NUM_REGS * MAP_ENTRY_BYTES

    def dump_tables(self) -> str:
        self._ensure()
        lines = ["TABLE I  context instructions",
                 f"{'PC':<10} {'KIND':<8} {'PRED1':<10} {'PRED2':<10} {'RDY':<4} {'ACC':>4}  REGS"]
        for e in sorted(self.cache.entries(), key=lambda x: x.pc):
            t = e.template
            if e.kind == OpClass.BRANCH:
                regs = f"-> {t.branch_target:#x}"
            else:
                ops = e.operand_regs
                root = self._is_context_root(e)
                mark = [reg_name(r) + ("*" if r is not None and r != RIP and not root and
                                       e.pc_preds() and DEAD in e.operand_preds(i) else "")
                        for i, r in enumerate(ops)]
                dst = reg_name(e.dest) + ("*" if root else "")
                regs = f"[{dst} <- {mark[0]}, {mark[1]}]"
            p1 = _pred_str(e.pred1) + ("+" if e.alt1 else "")
            p2 = _pred_str(e.pred2) + ("+" if e.alt2 else "")
            lines.append(f"{e.pc:<#10x} {e.kind.name:<8} {p1:<10} {p2:<10} "
                         f"{'Y' if e.ready else 'N':<4} {e.access_count:>4}  {regs}")
        lines.append("")
        lines.append("TABLE II  register to pc map")
        for r in range(NUM_REGS):
            lines.append(f"{REG_NAMES[r]:<5} {_pred_str(self.regmap[r])}")
        lines.append("")
        lines.extend(self.pred.dump_state_table())
        return "\n".join(lines)
