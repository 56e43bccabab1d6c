"""Trace file reading, writing and self-consistency checking.

Binary layout: a one-line ASCII header ``CARGOTRACE <version> <count>\\n``
followed by ``count`` little-endian items.  Each item starts with a tag byte:
0 for an instruction record, 1 for REQ_BEGIN, 2 for REQ_END.  Text layout uses
the same header with a trailing ``text`` word and one comma-separated item per
line.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .isa import (
    MASK64, RBP, RDX, RIP, AluOp, MarkerKind, OpClass, RequestMarker, TraceItem, TraceRecord,
)

MAGIC = b"CARGOTRACE"
VERSION = 1

_REC = struct.Struct("<QBbbbbbBiQQQBB")
_MARK = struct.Struct("<QQQ")

_F_EFF, _F_VAL, _F_TGT, _F_TAKEN, _F_STACK, _F_PCREL = (1 << i for i in range(6))


class TraceFormatError(ValueError):
    def __init__(self, message: str, index: int):
        super().__init__(f"record {index}: {message}")
        self.index = index


class TraceTruncatedError(TraceFormatError):
    pass


def _r(v: Optional[int]) -> int:
    return -1 if v is None else v


def _u(v: int) -> Optional[int]:
    return None if v < 0 else v


def _check_schema(rec: TraceRecord, index: int) -> None:
    if rec.is_mem and rec.eff_addr is None:
        raise TraceFormatError(f"{rec.opclass.name} without eff_addr", index)
    if rec.opclass == OpClass.BRANCH and rec.branch_target is None:
        raise TraceFormatError("BRANCH without branch_target", index)
    if rec.addr_scale not in (1, 2, 4, 8):
        raise TraceFormatError(f"bad addr_scale {rec.addr_scale}", index)
    for reg in (rec.dest, rec.src1, rec.src2, rec.addr_base, rec.addr_index):
        if reg is not None and not 0 <= reg < 16:
            raise TraceFormatError(f"register id {reg} out of range", index)


def encode_item(item: TraceItem) -> bytes:
    if isinstance(item, RequestMarker):
        return bytes([int(item.kind)]) + _MARK.pack(item.request_id, item.key_hash, item.key)
    flags = 0
    if item.eff_addr is not None:
        flags |= _F_EFF
    if item.value is not None:
        flags |= _F_VAL
    if item.branch_target is not None:
        flags |= _F_TGT
    if item.branch_taken:
        flags |= _F_TAKEN
    if item.is_stack_access:
        flags |= _F_STACK
    if item.is_pc_relative:
        flags |= _F_PCREL
    return b"\x00" + _REC.pack(
        item.pc, int(item.opclass), _r(item.dest), _r(item.src1), _r(item.src2),
        _r(item.addr_base), _r(item.addr_index), item.addr_scale, item.addr_disp,
        item.eff_addr or 0, item.value or 0, item.branch_target or 0, flags, int(item.alu_op),
    )


def dumps(items: Iterable[TraceItem]) -> bytes:
    body = [encode_item(it) for it in items]
    header = b"%s %d %d\n" % (MAGIC, VERSION, len(body))
    return header + b"".join(body)


def _parse_header(line: bytes, index: int = 0) -> tuple[int, bool]:
    parts = line.split()
    if len(parts) < 3 or parts[0] != MAGIC:
        raise TraceFormatError("bad header", index)
    if int(parts[1]) != VERSION:
        raise TraceFormatError(f"unsupported version {parts[1]!r}", index)
    return int(parts[2]), len(parts) > 3 and parts[3] == b"text"


def loads(data: bytes) -> list[TraceItem]:
    nl = data.find(b"\n")
    if nl < 0:
        if not data:
            raise TraceTruncatedError("empty file (missing header)", 0)
        raise TraceTruncatedError("header not terminated", 0)
    count, is_text = _parse_header(data[:nl])
    if is_text:
        return _loads_text(data[nl + 1:].decode("ascii"), count)
    items: list[TraceItem] = []
    pos = nl + 1
    n = len(data)
    for i in range(count):
        if pos >= n:
            raise TraceTruncatedError(f"expected {count} records, file ends after {i}", i)
        tag = data[pos]
        pos += 1
        if tag == 0:
            if pos + _REC.size > n:
                raise TraceTruncatedError("record cut short", i)
            (pc, opc, dest, s1, s2, base, idx, scale, disp, eff, val, tgt, flags,
             aop) = _REC.unpack_from(data, pos)
            pos += _REC.size
            try:
                opclass = OpClass(opc)
                alu_op = AluOp(aop)
            except ValueError as exc:
                raise TraceFormatError(str(exc), i) from None
            rec = TraceRecord(
                pc=pc, opclass=opclass, dest=_u(dest), src1=_u(s1), src2=_u(s2),
                addr_base=_u(base), addr_index=_u(idx), addr_scale=scale, addr_disp=disp,
                eff_addr=eff if flags & _F_EFF else None,
                value=val if flags & _F_VAL else None,
                branch_target=tgt if flags & _F_TGT else None,
                branch_taken=bool(flags & _F_TAKEN),
                is_stack_access=bool(flags & _F_STACK),
                is_pc_relative=bool(flags & _F_PCREL),
                alu_op=alu_op,
            )
            _check_schema(rec, i)
            items.append(rec)
        elif tag in (1, 2):
            if pos + _MARK.size > n:
                raise TraceTruncatedError("marker cut short", i)
            rid, kh, key = _MARK.unpack_from(data, pos)
            pos += _MARK.size
            items.append(RequestMarker(MarkerKind(tag), rid, kh, key))
        else:
            raise TraceFormatError(f"unknown tag {tag}", i)
    if pos != n:
        raise TraceFormatError(f"{n - pos} trailing bytes after {count} records", count)
    return items


def _opt(v: Optional[int]) -> str:
    return "" if v is None else str(v)


def _opt_hex(v: Optional[int]) -> str:
    return "" if v is None else hex(v)


def format_item_text(item: TraceItem) -> str:
    if isinstance(item, RequestMarker):
        if item.kind == MarkerKind.REQ_BEGIN:
            return f"B,{item.request_id},{item.key_hash:#x},{item.key:#x}"
        return f"E,{item.request_id},{item.key_hash:#x},{item.key:#x}"
    return ",".join([
        "R", hex(item.pc), item.opclass.name, _opt(item.dest), _opt(item.src1), _opt(item.src2),
        _opt(item.addr_base), _opt(item.addr_index), str(item.addr_scale), str(item.addr_disp),
        _opt_hex(item.eff_addr), _opt_hex(item.value), _opt_hex(item.branch_target),
        str(int(item.branch_taken)), str(int(item.is_stack_access)),
        str(int(item.is_pc_relative)), item.alu_op.name,
    ])


def dumps_text(items: Iterable[TraceItem]) -> str:
    lines = [format_item_text(it) for it in items]
    return f"CARGOTRACE {VERSION} {len(lines)} text\n" + "".join(line + "\n" for line in lines)


def _int_or_none(s: str) -> Optional[int]:
    return int(s, 0) if s else None


def _loads_text(text: str, count: int) -> list[TraceItem]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < count:
        raise TraceTruncatedError(f"expected {count} records, file ends after {len(lines)}",
                                  len(lines))
    items: list[TraceItem] = []
    for i, line in enumerate(lines[:count]):
        f = line.split(",")
        try:
            if f[0] == "B":
                items.append(RequestMarker(MarkerKind.REQ_BEGIN, int(f[1]), int(f[2], 0),
                                           int(f[3], 0)))
            elif f[0] == "E":
                kh, key = (int(f[2], 0), int(f[3], 0)) if len(f) > 3 else (0, 0)
                items.append(RequestMarker(MarkerKind.REQ_END, int(f[1]), kh, key))
            elif f[0] == "R" and len(f) == 17:
                rec = TraceRecord(
                    pc=int(f[1], 0), opclass=OpClass[f[2]], dest=_int_or_none(f[3]),
                    src1=_int_or_none(f[4]), src2=_int_or_none(f[5]),
                    addr_base=_int_or_none(f[6]), addr_index=_int_or_none(f[7]),
                    addr_scale=int(f[8]), addr_disp=int(f[9]), eff_addr=_int_or_none(f[10]),
                    value=_int_or_none(f[11]), branch_target=_int_or_none(f[12]),
                    branch_taken=f[13] == "1", is_stack_access=f[14] == "1",
                    is_pc_relative=f[15] == "1", alu_op=AluOp[f[16]],
                )
                _check_schema(rec, i)
                items.append(rec)
            else:
                raise TraceFormatError(f"malformed line {line!r}", i)
        except (KeyError, ValueError, IndexError) as exc:
            if isinstance(exc, TraceFormatError):
                raise
            raise TraceFormatError(f"malformed line {line!r}: {exc}", i) from None
    return items


def write_trace(items: Iterable[TraceItem], path, text: bool = False) -> None:
    path = Path(path)
    if text:
        path.write_text(dumps_text(items))
    else:
        path.write_bytes(dumps(items))


def read_trace(path) -> list[TraceItem]:
    return loads(Path(path).read_bytes())


def iter_records(items: Iterable[TraceItem]) -> Iterator[TraceRecord]:
    return (it for it in items if isinstance(it, TraceRecord))


@dataclass
class ValidationReport:
    records: int = 0
    checked_addresses: int = 0
    unchecked_addresses: int = 0
    violations: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def effective_address(rec: TraceRecord, regs: dict[int, int]) -> Optional[int]:
    """base + index*scale + disp under ``regs``; None if an operand is unknown."""
    addr = rec.addr_disp
    for reg, mul in ((rec.addr_base, 1), (rec.addr_index, rec.addr_scale)):
        if reg is None:
            continue
        v = rec.pc if reg == RIP else regs.get(reg)
        if v is None:
            return None
        addr += v * mul
    return addr & MASK64


def validate_trace(items: Iterable[TraceItem]) -> ValidationReport:
    """Replay architectural registers and report address and nesting violations."""
    rep = ValidationReport()
    regs: dict[int, int] = {}
    open_req: Optional[int] = None
    for i, item in enumerate(items):
        if isinstance(item, RequestMarker):
            if item.kind == MarkerKind.REQ_BEGIN:
                if open_req is not None:
                    rep.violations.append((i, f"REQ_BEGIN {item.request_id} while "
                                              f"request {open_req} is open"))
                open_req = item.request_id
                regs[RDX] = item.key_hash
                regs[RBP] = item.key
            else:
                if open_req != item.request_id:
                    rep.violations.append((i, f"REQ_END {item.request_id} does not match "
                                              f"open request {open_req}"))
                open_req = None
            continue
        rep.records += 1
        if item.is_mem:
            expect = effective_address(item, regs)
            if expect is None:
                rep.unchecked_addresses += 1
            else:
                rep.checked_addresses += 1
                if item.eff_addr != expect:
                    rep.violations.append(
                        (i, f"eff_addr {item.eff_addr:#x} != computed {expect:#x}"))
        if item.dest is not None and item.value is not None:
            regs[item.dest] = item.value
    if open_req is not None:
        rep.violations.append((-1, f"request {open_req} never closed"))
    return rep
