"""Replay of the hash-chain lookup walkthrough against committed table dumps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .critical import CriticalConfig, CriticalEngine
from .isa import RAX, RDX, REG_NAMES, MarkerKind, OpClass, RequestMarker
from .memsys import MemorySystem
from .regpred import RegPredConfig, RegValuePredictor
from .tracegen import HASH_CHAIN_PCS, SyntheticWorkloadSpec, WorkloadKind, generate_trace

GOLDEN_PATH = Path(__file__).with_name("golden") / "hash_chain_walkthrough.txt"

GOLDEN_SPEC = SyntheticWorkloadSpec(kind=WorkloadKind.HASH_CHAIN, table_buckets=4096,
                                    population=16384, chain_length_dist=0.5,
                                    request_count=400)
GOLDEN_SEED = 7


@dataclass
class GoldenResult:
    text: str
    regions: list
    engine: CriticalEngine
    epoch_start_entries: Optional[int] = None


def golden_trace():
    return generate_trace(GOLDEN_SPEC, GOLDEN_SEED)


def run_golden(threshold_den: int = 8, clear_on_epoch: bool = False) -> GoldenResult:
    items = golden_trace()
    mem = MemorySystem()
    eng = CriticalEngine(CriticalConfig(epoch_l2_misses=1 << 30, clear_on_epoch=clear_on_epoch),
                         RegValuePredictor(RegPredConfig(threshold_den=threshold_den)))
    t = 0
    for it in items:
        if isinstance(it, RequestMarker):
            if it.kind == MarkerKind.REQ_BEGIN:
                eng.begin_request(it.key_hash, it.key)
            continue
        t += 1
        if it.opclass == OpClass.LOAD:
            r = mem.core_access(0, it.eff_addr, False, t)
            if r.level_hit in ("LLC", "DRAM"):
                eng.on_l2_miss(it)
        eng.on_retire(it, t)
    regions = eng.preview_regions()
    lines = ["# hash-chain walkthrough, end of first epoch", eng.dump_tables(), ""]
    lines.extend(eng.pred.dump_in_table())
    lines.append("")
    lines.extend(eng.pred.dump_gen_table())
    lines.append("")
    lines.append("REGIONS")
    for rg in regions:
        lines.append(f"region {rg.region_id} size={len(rg)} "
                     f"pcs={','.join(hex(p) for p in rg.pcs)}")
        for rr in rg.required_regs:
            shown = f"arg{rr.value}" if rr.state == "READY-DYN" else hex(rr.value)
            lines.append(f"  {REG_NAMES[rr.reg]:<4} {rr.state:<10} {shown}")
    text = "\n".join(lines) + "\n"
    eng.emit_regions()
    start_entries = len(eng.cache.entries())
    return GoldenResult(text, regions, eng, start_entries)


def semantic_check(res: GoldenResult) -> list[str]:
    """Narrated end state: all eight pcs ready, rdx from argument 1, rax elected."""
    problems = []
    if len(res.regions) != 1:
        problems.append(f"expected one region, got {len(res.regions)}")
        return problems
    rg = res.regions[0]
    missing = [hex(p) for p in HASH_CHAIN_PCS if p not in rg.pcs]
    if missing:
        problems.append(f"pcs not ready: {', '.join(missing)}")
    rdx = rg.required(RDX)
    if rdx is None or rdx.state != "READY-DYN" or rdx.value != 1:
        problems.append(f"rdx expected READY-DYN(1), got {rdx}")
    rax = rg.required(RAX)
    if rax is None or rax.state != "READY":
        problems.append(f"rax expected READY, got {rax}")
    return problems


def first_diff(expected: str, actual: str) -> Optional[str]:
    a = expected.splitlines()
    b = actual.splitlines()
    for i in range(max(len(a), len(b))):
        x = a[i] if i < len(a) else "<missing>"
        y = b[i] if i < len(b) else "<missing>"
        if x != y:
            return f"line {i + 1}:\n  expected: {x}\n  actual:   {y}"
    return None


def check_golden(res: Optional[GoldenResult] = None,
                 golden_path: Path = GOLDEN_PATH) -> tuple[bool, str]:
    res = res or run_golden()
    problems = semantic_check(res)
    if problems:
        return False, "; ".join(problems)
    if not golden_path.is_file():
        return False, f"golden file missing: {golden_path}"
    diff = first_diff(golden_path.read_text(), res.text)
    if diff:
        return False, "golden text differs at " + diff
    return True, "golden walkthrough matches"
