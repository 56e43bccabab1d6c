"""Abstract instruction set used by traces and by the NIC-side interpreter."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

MASK64 = (1 << 64) - 1

REG_NAMES = (
    "rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
    "r8", "r9", "r10", "r11", "r12", "r13", "r14", "rip",
)
REG_IDS = {name: i for i, name in enumerate(REG_NAMES)}
NUM_REGS = 16

RAX, RBX, RCX, RDX, RSI, RDI, RBP, RSP = range(8)
R8, R9, R10, R11, R12, R13, R14, RIP = range(8, 16)

# Registers that root a dependence chain: argument registers, frame/stack
# pointers and rip (PC-relative addressing).
ARG_REGS = frozenset({RSI, RDI, RCX, RDX, R8, R9, RBP, RSP, RIP})


def reg_name(reg: Optional[int]) -> str:
    return "-" if reg is None else REG_NAMES[reg]


class OpClass(IntEnum):
    LOAD = 0
    STORE = 1
    ALU = 2
    REGMOVE = 3
    BRANCH = 4
    OTHER = 5


class AluOp(IntEnum):
    """Operation selector for ALU records and condition selector for branches.

    ALU records compute ``dest = src1 <op> (src2 or immediate)`` where the
    immediate lives in ``addr_disp``.  Branch records use EQ/NE/LT/GE to
    compare ``src1`` against ``src2`` (or the immediate); NONE means
    unconditional.
    """

    NONE = 0
    MOVI = 1
    ADD = 2
    SUB = 3
    AND = 4
    OR = 5
    XOR = 6
    SHR = 7
    SHL = 8
    CMP = 9
    TEST = 10
    EQ = 11
    NE = 12
    LT = 13
    GE = 14


def alu_eval(op: AluOp, a: int, b: int) -> Optional[int]:
    """Value produced by an ALU op; None for flag-only ops."""
    if op == AluOp.MOVI:
        return b & MASK64
    if op == AluOp.ADD:
        return (a + b) & MASK64
    if op == AluOp.SUB:
        return (a - b) & MASK64
    if op == AluOp.AND:
        return a & b
    if op == AluOp.OR:
        return a | b
    if op == AluOp.XOR:
        return a ^ b
    if op == AluOp.SHR:
        return (a & MASK64) >> (b & 63)
    if op == AluOp.SHL:
        return (a << (b & 63)) & MASK64
    return None


def branch_eval(op: AluOp, a: int, b: int) -> bool:
    if op == AluOp.EQ:
        return a == b
    if op == AluOp.NE:
        return a != b
    if op == AluOp.LT:
        return a < b
    if op == AluOp.GE:
        return a >= b
    return True


@dataclass(frozen=True, slots=True)
class TraceRecord:
    pc: int
    opclass: OpClass
    dest: Optional[int] = None
    src1: Optional[int] = None
    src2: Optional[int] = None
    addr_base: Optional[int] = None
    addr_index: Optional[int] = None
    addr_scale: int = 1
    addr_disp: int = 0
    eff_addr: Optional[int] = None
    value: Optional[int] = None
    branch_target: Optional[int] = None
    branch_taken: bool = False
    is_stack_access: bool = False
    is_pc_relative: bool = False
    alu_op: AluOp = AluOp.NONE

    @property
    def is_mem(self) -> bool:
        return self.opclass in (OpClass.LOAD, OpClass.STORE)

    def address_regs(self) -> tuple[int, ...]:
        return tuple(r for r in (self.addr_base, self.addr_index) if r is not None)

    def read_regs(self) -> tuple[int, ...]:
        """Registers whose values feed this instruction's result or address."""
        if self.is_mem:
            return self.address_regs()
        if self.opclass == OpClass.BRANCH:
            return tuple(r for r in (self.src1, self.src2) if r is not None)
        return tuple(r for r in (self.src1, self.src2) if r is not None)


class MarkerKind(IntEnum):
    REQ_BEGIN = 1
    REQ_END = 2


@dataclass(frozen=True, slots=True)
class RequestMarker:
    """Request boundary.

    ``key_hash`` is the user-routine output for the request (argument slot 1);
    ``key`` is the raw key identity (argument slot 2).  At REQ_BEGIN the
    replayed register file receives rdx := key_hash and rbp := key.
    """

    kind: MarkerKind
    request_id: int
    key_hash: int = 0
    key: int = 0


TraceItem = Union[TraceRecord, RequestMarker]


@dataclass
class RequestSegment:
    request_id: int
    key_hash: int
    key: int
    records: list[TraceRecord] = field(default_factory=list)

    @property
    def request_class(self) -> int:
        return self.records[0].pc if self.records else 0

    def nic_args(self) -> dict[int, int]:
        return {1: self.key_hash, 2: self.key}


def split_requests(items) -> list[RequestSegment]:
    """Group a trace stream into per-request segments.

    Raises ValueError for an unterminated segment or records outside a request.
    """
    segments: list[RequestSegment] = []
    cur: Optional[RequestSegment] = None
    for i, item in enumerate(items):
        if isinstance(item, RequestMarker):
            if item.kind == MarkerKind.REQ_BEGIN:
                if cur is not None:
                    raise ValueError(f"item {i}: REQ_BEGIN inside request {cur.request_id}")
                cur = RequestSegment(item.request_id, item.key_hash, item.key)
            else:
                if cur is None or cur.request_id != item.request_id:
                    raise ValueError(f"item {i}: REQ_END without matching REQ_BEGIN")
                segments.append(cur)
                cur = None
        else:
            if cur is None:
                raise ValueError(f"item {i}: record outside a request")
            cur.records.append(item)
    if cur is not None:
        raise ValueError(f"request {cur.request_id} has no REQ_END")
    return segments
