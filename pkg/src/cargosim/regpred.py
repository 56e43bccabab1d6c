"""IN/GEN register value predictor.

Each tracked register keeps up to eight IN values: the first lives in the
register's fixed slot, the rest come from a shared overflow pool and are
chained through ``next_slot``.  Every IN slot owns one GEN entry holding the
first and the most recent distinct GEN value produced after that IN value.

A register's IN value is elected when its share of instances that went on to
produce a GEN value is strictly above ``threshold_num / threshold_den`` of all
IN observations of that register.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

from .errors import ConfigError
from .isa import NUM_REGS, REG_NAMES


class RegState(str, Enum):
    UNTRACKED = "UNTRACKED"
    TRACKED = "TRACKED"
    READY = "READY"
    READY_DYN = "READY-DYN"


@dataclass(frozen=True)
class Election:
    state: str                 # "READY", "READY-DYN" or "UNRESOLVED"
    value: Optional[int] = None

    @property
    def resolved(self) -> bool:
        return self.state != "UNRESOLVED"


UNRESOLVED = Election("UNRESOLVED")


@dataclass
class InSlot:
    reg: int
    in_value: int
    usage_count: int = 1
    transitions: int = 0
    gen_ref: Optional[int] = None
    next_slot: Optional[int] = None


@dataclass
class GenSlot:
    owner: int
    first_value: int
    first_count: int = 1
    recent_value: Optional[int] = None
    recent_count: int = 0


@dataclass
class RegPredConfig:
    threshold_num: int = 1
    threshold_den: int = 8
    in_entries: int = 48
    gen_entries: int = 132
    per_reg_limit: int = 8
    force_unresolved: bool = False

    def validate(self) -> None:
        if self.threshold_den <= 0 or self.threshold_num < 0:
            raise ConfigError("threshold_den", "threshold must be a non-negative fraction")
        if self.in_entries < NUM_REGS:
            raise ConfigError("in_entries", f"needs at least {NUM_REGS} fixed slots")
        if self.gen_entries < 1:
            raise ConfigError("gen_entries", "must be >= 1")
        if self.per_reg_limit < 1:
            raise ConfigError("per_reg_limit", "must be >= 1")


IN_ENTRY_BYTES = 20
GEN_ENTRY_BYTES = 16
STATE_ENTRY_BYTES = 17   # 8-byte value + 8-byte shadow + state/argument byte


class RegValuePredictor:
    def __init__(self, config: Optional[RegPredConfig] = None):
        self.config = config or RegPredConfig()
        self.config.validate()
        self.in_table: list[Optional[InSlot]] = [None] * self.config.in_entries
        self.gen_table: list[Optional[GenSlot]] = [None] * self.config.gen_entries
        self.state: dict[int, tuple[RegState, Optional[int]]] = {}
        self._current: dict[int, int] = {}
        self._gen_seen: set[int] = set()

    # -- bookkeeping -------------------------------------------------------
    def track(self, reg: int) -> None:
        if self.state.get(reg, (RegState.UNTRACKED,))[0] == RegState.UNTRACKED:
            self.state[reg] = (RegState.TRACKED, None)

    def state_of(self, reg: int) -> tuple[RegState, Optional[int]]:
        return self.state.get(reg, (RegState.UNTRACKED, None))

    def begin_instance(self) -> None:
        self._current.clear()
        self._gen_seen.clear()

    def reset_epoch(self) -> None:
        """Drop per-epoch register states; IN/GEN history is retained."""
        for reg, (st, _) in list(self.state.items()):
            if st in (RegState.READY, RegState.READY_DYN):
                self.state[reg] = (RegState.TRACKED, None)

    def slots_of(self, reg: int) -> list[int]:
        out = []
        idx: Optional[int] = reg
        while idx is not None:
            s = self.in_table[idx]
            if s is None:
                break
            out.append(idx)
            idx = s.next_slot
        return out

    def _free_pool_slot(self) -> Optional[int]:
        for i in range(NUM_REGS, len(self.in_table)):
            if self.in_table[i] is None:
                return i
        return None

    def _free_gen_slot(self) -> Optional[int]:
        for i, g in enumerate(self.gen_table):
            if g is None:
                return i
        return None

    def _release_gen(self, slot: InSlot) -> None:
        if slot.gen_ref is not None:
            self.gen_table[slot.gen_ref] = None
            slot.gen_ref = None

    # -- observations ------------------------------------------------------
    def observe_in(self, reg: int, value: int, nic_args: Mapping[int, int] | list = ()) -> None:
        """Record the first value of ``reg`` in the current instance."""
        if value is None:
            return
        args = nic_args.items() if isinstance(nic_args, Mapping) else enumerate(nic_args)
        for k, a in args:
            if a == value:
                self.state[reg] = (RegState.READY_DYN, k)
                self._current.pop(reg, None)
                return
        self.track(reg)
        slots = self.slots_of(reg)
        for idx in slots:
            s = self.in_table[idx]
            if s.in_value == value:
                s.usage_count += 1
                self._current[reg] = idx
                return
        if not slots:
            self.in_table[reg] = InSlot(reg, value)
            self._current[reg] = reg
            return
        free = self._free_pool_slot() if len(slots) < self.config.per_reg_limit else None
        if free is not None:
            self.in_table[free] = InSlot(reg, value)
            self.in_table[slots[-1]].next_slot = free
            self._current[reg] = free
            return
        # least frequently seen IN value of this register is replaced in place
        victim = min(slots, key=lambda i: (self.in_table[i].usage_count, i))
        old = self.in_table[victim]
        self._release_gen(old)
        self.in_table[victim] = InSlot(reg, value, next_slot=old.next_slot)
        self._current[reg] = victim

    def observe_gen(self, reg: int, value: int) -> None:
        """Record a value produced for ``reg`` after its IN value this instance."""
        idx = self._current.get(reg)
        if idx is None or value is None:
            return
        slot = self.in_table[idx]
        if reg not in self._gen_seen:
            slot.transitions += 1
            self._gen_seen.add(reg)
        if slot.gen_ref is None:
            g = self._free_gen_slot()
            if g is None:
                return
            self.gen_table[g] = GenSlot(idx, value)
            slot.gen_ref = g
            return
        gen = self.gen_table[slot.gen_ref]
        if value == gen.first_value:
            gen.first_count += 1
        elif gen.recent_value is not None and value == gen.recent_value:
            gen.recent_count += 1
        else:
            gen.recent_value = value
            gen.recent_count = 1

    # -- election ----------------------------------------------------------
    def elect(self, reg: int) -> Election:
        if self.config.force_unresolved:
            return UNRESOLVED
        st, val = self.state_of(reg)
        if st == RegState.READY_DYN:
            return Election("READY-DYN", val)
        slots = self.slots_of(reg)
        total = sum(self.in_table[i].usage_count for i in slots)
        if total == 0:
            return UNRESOLVED
        num, den = self.config.threshold_num, self.config.threshold_den
        best = None
        best_key = None
        for i in slots:
            s = self.in_table[i]
            if s.transitions * den <= num * total:
                continue
            key = (s.transitions, s.usage_count, -i)
            if best_key is None or key > best_key:
                best, best_key = s, key
        if best is None:
            return UNRESOLVED
        self.state[reg] = (RegState.READY, best.in_value)
        return Election("READY", best.in_value)

    # -- reporting ---------------------------------------------------------
    def live_in_slots(self) -> int:
        return sum(1 for s in self.in_table if s is not None)

    def live_gen_slots(self) -> int:
        return sum(1 for g in self.gen_table if g is not None)

    def storage_bytes(self) -> dict[str, int]:
        return {
            "register_state": NUM_REGS * STATE_ENTRY_BYTES,
            "predictor": (self.config.in_entries * IN_ENTRY_BYTES
                          + self.config.gen_entries * GEN_ENTRY_BYTES),
        }

    def dump_state_table(self) -> list[str]:
        lines = ["TABLE III  register state", f"{'REG':<5} {'STATE':<10} VALUE"]
        for reg in sorted(self.state):
            st, val = self.state[reg]
            if st == RegState.UNTRACKED:
                continue
            if st == RegState.READY_DYN:
                shown = f"arg{val}"
            elif val is None:
                shown = "-"
            else:
                shown = hex(val)
            lines.append(f"{REG_NAMES[reg]:<5} {st.value:<10} {shown}")
        return lines

    def dump_in_table(self) -> list[str]:
        lines = ["TABLE IV  IN values",
                 f"{'SLOT':<5} {'REG':<5} {'IN':<20} {'USES':>5} {'TRANS':>6} NEXT"]
        for i, s in enumerate(self.in_table):
            if s is None:
                continue
            nxt = "-" if s.next_slot is None else str(s.next_slot)
            lines.append(f"{i:<5} {REG_NAMES[s.reg]:<5} {s.in_value:<#20x} "
                         f"{s.usage_count:>5} {s.transitions:>6} {nxt}")
        return lines

    def dump_gen_table(self) -> list[str]:
        lines = ["TABLE V  GEN values",
                 f"{'SLOT':<5} {'OWNER':<6} {'FIRST':<20} {'CNT':>4} {'RECENT':<20} {'CNT':>4}"]
        for i, g in enumerate(self.gen_table):
            if g is None:
                continue
            rec = "-" if g.recent_value is None else hex(g.recent_value)
            lines.append(f"{i:<5} {g.owner:<6} {g.first_value:<#20x} {g.first_count:>4} "
                         f"{rec:<20} {g.recent_count:>4}")
        return lines
