"""Synthetic request traces shaped like a hash-chain lookup or a wide-tree descent."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError
from .isa import (
    R10, RAX, RBP, RBX, RCX, RDX, RIP, AluOp, MarkerKind, OpClass, RequestMarker, TraceItem,
    TraceRecord,
)


class WorkloadKind(str, Enum):
    HASH_CHAIN = "hash_chain"
    TREE_WALK = "tree_walk"


@dataclass
class SyntheticWorkloadSpec:
    kind: WorkloadKind = WorkloadKind.HASH_CHAIN
    table_buckets: int = 1 << 14
    tree_fanout: int = 16
    population: int = 1 << 15
    chain_length_dist: float = 0.5
    key_dist: float = 0.0
    request_count: int = 1000
    payload_bytes: int = 16
    header_bytes: int = 48
    lookup_tail: bool = False  # always look up the last item of a chain

    def validate(self) -> None:
        if not isinstance(self.kind, WorkloadKind):
            try:
                self.kind = WorkloadKind(self.kind)
            except ValueError:
                raise ConfigError("kind", f"unknown workload kind {self.kind!r}") from None
        if self.population < 1:
            raise ConfigError("population", "must be >= 1")
        if self.request_count < 1:
            raise ConfigError("request_count", "must be >= 1")
        if self.table_buckets < 1:
            raise ConfigError("table_buckets", "must be >= 1")
        if not 2 <= self.tree_fanout <= 16:
            raise ConfigError("tree_fanout", "must be in [2, 16]")
        if not 0.0 < self.chain_length_dist <= 1.0:
            raise ConfigError("chain_length_dist", "geometric parameter must be in (0, 1]")
        if self.key_dist < 0:
            raise ConfigError("key_dist", "zipf exponent must be >= 0")
        if self.payload_bytes < 0 or self.header_bytes < 0:
            raise ConfigError("payload_bytes", "sizes must be non-negative")

    @property
    def packet_bytes(self) -> int:
        return self.payload_bytes + self.header_bytes


# Hash-chain code template; PCs follow the memcached lookup loop.
PC_BASE_LOAD = 0x41B571     # mov 0x364ca0(%rip),%rax   (I-LD)
PC_BUCKET_LOAD = 0x41B578   # mov (%rax,%rdx,8),%rbx    (D-LD)
PC_ENTER_JMP = 0x41B57C     # jmp -> key check
PC_NEXT_LOAD = 0x41B580     # mov 0x10(%rbx),%rbx
PC_KEY_LOAD = 0x41B589      # movzbl 0x34(%rbx),%eax
PC_KEY_CMP = 0x41B58D       # cmp %rbp,%rax
PC_LOOP_BR = 0x41B590       # jne -> next
PC_VALUE_LOAD = 0x41B592    # movzbl 0x2b(%rbx),%eax
PC_RETRY_BR = 0x41B5AF      # retry lookup if the item is locked (never taken)
HASH_CHAIN_PCS = (PC_BASE_LOAD, PC_BUCKET_LOAD, PC_ENTER_JMP, PC_NEXT_LOAD, PC_KEY_LOAD,
                  PC_LOOP_BR, PC_VALUE_LOAD, PC_RETRY_BR)

TABLE_PTR_DISP = 0x364CA0
BUCKET_BASE = 0x1000_0000
NODE_BASE = 0x4000_0000
NEXT_OFF, KEY_OFF, VALUE_OFF = 0x10, 0x34, 0x2B

# Tree-walk template.
PC_ROOT_LOAD = 0x420100
PC_KEY_COPY = 0x420107
PC_SLOT_INIT = 0x420110
PC_SEP_LOAD = 0x420114
PC_SEP_BR = 0x420119
PC_SLOT_INC = 0x42011C
PC_SCAN_JMP = 0x420120
PC_CHILD_LOAD = 0x420128
PC_HDR_LOAD = 0x420130
PC_DESCEND_BR = 0x420133
PC_REC_LOAD = 0x420137
ROOT_PTR_DISP = 0x2F00
TREE_BASE = 0x6000_0000
SEP_OFF, CHILD_OFF, REC_VALUE_OFF = 0x08, 0x88, 0x10
INTERNAL_NODE_BYTES = 320
SENTINEL_KEY = (1 << 63) - 1


def _zipf_cdf(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** s
    cdf = np.cumsum(w)
    return cdf / cdf[-1]


def _sample_ranks(rng: np.random.Generator, n: int, s: float, count: int) -> np.ndarray:
    u = rng.random(count)
    ranks = np.searchsorted(_zipf_cdf(n, s), u, side="right")
    return np.minimum(ranks, n - 1)


def _unique_keys(rng: np.random.Generator, n: int) -> list[int]:
    keys: set[int] = set()
    while len(keys) < n:
        for k in rng.integers(1, SENTINEL_KEY, size=n - len(keys), dtype=np.int64):
            keys.add(int(k))
    return sorted(keys)


def _nonzero_u64(rng: np.random.Generator, n: int) -> list[int]:
    vals = rng.integers(1, 1 << 63, size=n, dtype=np.int64)
    return [int(v) for v in vals]


def _hash_chain(spec: SyntheticWorkloadSpec, rng: np.random.Generator) -> list[TraceItem]:
    n = spec.population
    keys = _unique_keys(rng, n)
    values = _nonzero_u64(rng, n)
    order = rng.permutation(n)            # fill order of items into buckets
    slots = rng.permutation(n)            # scatter nodes across the node arena
    node_addr = [NODE_BASE + 64 * int(slots[i]) for i in range(n)]

    chains: list[list[int]] = [[] for _ in range(spec.table_buckets)]
    pos = 0
    for b in range(spec.table_buckets):
        if pos >= n:
            break
        size = int(rng.geometric(spec.chain_length_dist))
        chains[b].extend(int(i) for i in order[pos:pos + size])
        pos += size
    b = 0
    while pos < n:
        chains[b % spec.table_buckets].append(int(order[pos]))
        pos += 1
        b += 1
    bucket_of = {}
    position_of = {}
    for b, chain in enumerate(chains):
        for p, item in enumerate(chain):
            bucket_of[item] = b
            position_of[item] = p

    if spec.lookup_tail:
        nonempty = [b for b, c in enumerate(chains) if c]
        perm = rng.permutation(len(nonempty))
        ranks = _sample_ranks(rng, len(nonempty), spec.key_dist, spec.request_count)
        targets = [chains[nonempty[int(perm[r])]][-1] for r in ranks]
    else:
        perm = rng.permutation(n)
        ranks = _sample_ranks(rng, n, spec.key_dist, spec.request_count)
        targets = [int(perm[r]) for r in ranks]

    table_ptr_addr = PC_BASE_LOAD + TABLE_PTR_DISP
    out: list[TraceItem] = []
    for rid, item in enumerate(targets):
        b = bucket_of[item]
        key = keys[item]
        out.append(RequestMarker(MarkerKind.REQ_BEGIN, rid, b, key))
        out.append(TraceRecord(PC_BASE_LOAD, OpClass.LOAD, dest=RAX, addr_base=RIP,
                               addr_disp=TABLE_PTR_DISP, eff_addr=table_ptr_addr,
                               value=BUCKET_BASE, is_pc_relative=True))
        chain = chains[b]
        head = node_addr[chain[0]]
        out.append(TraceRecord(PC_BUCKET_LOAD, OpClass.LOAD, dest=RBX, addr_base=RAX,
                               addr_index=RDX, addr_scale=8, eff_addr=BUCKET_BASE + 8 * b,
                               value=head))
        out.append(TraceRecord(PC_ENTER_JMP, OpClass.BRANCH, branch_target=PC_KEY_LOAD,
                               branch_taken=True))
        for p in range(position_of[item] + 1):
            cur = node_addr[chain[p]]
            if p > 0:
                prev = node_addr[chain[p - 1]]
                out.append(TraceRecord(PC_NEXT_LOAD, OpClass.LOAD, dest=RBX, addr_base=RBX,
                                       addr_disp=NEXT_OFF, eff_addr=prev + NEXT_OFF, value=cur))
            node_key = keys[chain[p]]
            out.append(TraceRecord(PC_KEY_LOAD, OpClass.LOAD, dest=RAX, addr_base=RBX,
                                   addr_disp=KEY_OFF, eff_addr=cur + KEY_OFF, value=node_key))
            out.append(TraceRecord(PC_KEY_CMP, OpClass.ALU, src1=RBP, src2=RAX,
                                   alu_op=AluOp.CMP))
            out.append(TraceRecord(PC_LOOP_BR, OpClass.BRANCH, src1=RBP, src2=RAX,
                                   alu_op=AluOp.NE, branch_target=PC_NEXT_LOAD,
                                   branch_taken=node_key != key))
        node = node_addr[item]
        out.append(TraceRecord(PC_VALUE_LOAD, OpClass.LOAD, dest=RAX, addr_base=RBX,
                               addr_disp=VALUE_OFF, eff_addr=node + VALUE_OFF,
                               value=values[item]))
        out.append(TraceRecord(PC_RETRY_BR, OpClass.BRANCH, src1=RAX, alu_op=AluOp.EQ,
                               branch_target=PC_BUCKET_LOAD, branch_taken=False))
        out.append(RequestMarker(MarkerKind.REQ_END, rid))
    return out


@dataclass
class _TreeNode:
    addr: int
    leaf: bool
    children: list      # child _TreeNode objects (internal) or empty
    seps: list          # upper-bound separators, last is SENTINEL_KEY
    first_key: int
    value: int = 0


def _build_tree(keys: list[int], values: list[int], fanout: int,
                slots: np.ndarray) -> _TreeNode:
    level = [_TreeNode(0, True, [], [], k, v) for k, v in zip(keys, values)]
    internals: list[_TreeNode] = []
    while True:
        groups = [level[i:i + fanout] for i in range(0, len(level), fanout)]
        nxt = []
        for g in groups:
            seps = [c.first_key for c in g[1:]] + [SENTINEL_KEY]
            node = _TreeNode(0, False, g, seps, g[0].first_key)
            nxt.append(node)
            internals.append(node)
        level = nxt
        if len(level) == 1:
            break
    n_leaf = len(keys)
    leaf_base = TREE_BASE + INTERNAL_NODE_BYTES * len(internals)
    leaves = []

    def collect(node):
        if node.leaf:
            leaves.append(node)
        else:
            for c in node.children:
                collect(c)

    collect(level[0])
    for i, leaf in enumerate(leaves):
        leaf.addr = leaf_base + 64 * int(slots[i % n_leaf])
    for i, node in enumerate(internals):
        node.addr = TREE_BASE + INTERNAL_NODE_BYTES * i
    return level[0]


def _tree_walk(spec: SyntheticWorkloadSpec, rng: np.random.Generator) -> list[TraceItem]:
    n = spec.population
    keys = _unique_keys(rng, n)
    values = _nonzero_u64(rng, n)
    root = _build_tree(keys, values, spec.tree_fanout, rng.permutation(n))
    perm = rng.permutation(n)
    ranks = _sample_ranks(rng, n, spec.key_dist, spec.request_count)
    root_ptr_addr = PC_ROOT_LOAD + ROOT_PTR_DISP

    out: list[TraceItem] = []
    for rid, r in enumerate(ranks):
        key = keys[int(perm[r])]
        out.append(RequestMarker(MarkerKind.REQ_BEGIN, rid, key, key))
        out.append(TraceRecord(PC_ROOT_LOAD, OpClass.LOAD, dest=RBX, addr_base=RIP,
                               addr_disp=ROOT_PTR_DISP, eff_addr=root_ptr_addr,
                               value=root.addr, is_pc_relative=True))
        out.append(TraceRecord(PC_KEY_COPY, OpClass.REGMOVE, dest=R10, src1=RDX, value=key))
        node = root
        while not node.leaf:
            out.append(TraceRecord(PC_SLOT_INIT, OpClass.ALU, dest=RCX, alu_op=AluOp.MOVI,
                                   addr_disp=0, value=0))
            slot = 0
            while True:
                sep = node.seps[slot]
                out.append(TraceRecord(PC_SEP_LOAD, OpClass.LOAD, dest=RAX, addr_base=RBX,
                                       addr_index=RCX, addr_scale=8, addr_disp=SEP_OFF,
                                       eff_addr=node.addr + SEP_OFF + 8 * slot, value=sep))
                found = key < sep
                out.append(TraceRecord(PC_SEP_BR, OpClass.BRANCH, src1=R10, src2=RAX,
                                       alu_op=AluOp.LT, branch_target=PC_CHILD_LOAD,
                                       branch_taken=found))
                if found:
                    break
                slot += 1
                out.append(TraceRecord(PC_SLOT_INC, OpClass.ALU, dest=RCX, src1=RCX,
                                       alu_op=AluOp.ADD, addr_disp=1, value=slot))
                out.append(TraceRecord(PC_SCAN_JMP, OpClass.BRANCH, branch_target=PC_SEP_LOAD,
                                       branch_taken=True))
            child = node.children[slot]
            out.append(TraceRecord(PC_CHILD_LOAD, OpClass.LOAD, dest=RBX, addr_base=RBX,
                                   addr_index=RCX, addr_scale=8, addr_disp=CHILD_OFF,
                                   eff_addr=node.addr + CHILD_OFF + 8 * slot, value=child.addr))
            header = 1 if child.leaf else 0
            out.append(TraceRecord(PC_HDR_LOAD, OpClass.LOAD, dest=RAX, addr_base=RBX,
                                   eff_addr=child.addr, value=header))
            out.append(TraceRecord(PC_DESCEND_BR, OpClass.BRANCH, src1=RAX, alu_op=AluOp.EQ,
                                   branch_target=PC_SLOT_INIT, branch_taken=header == 0))
            node = child
        out.append(TraceRecord(PC_REC_LOAD, OpClass.LOAD, dest=RAX, addr_base=RBX,
                               addr_disp=REC_VALUE_OFF, eff_addr=node.addr + REC_VALUE_OFF,
                               value=node.value))
        out.append(RequestMarker(MarkerKind.REQ_END, rid))
    return out


def generate_trace(spec: SyntheticWorkloadSpec, seed: int) -> list[TraceItem]:
    """Deterministic request-delimited trace for ``spec`` under ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed & ((1 << 64) - 1))
    if spec.kind == WorkloadKind.HASH_CHAIN:
        return _hash_chain(spec, rng)
    return _tree_walk(spec, rng)


def pc_profile(items) -> dict[int, tuple[int, int]]:
    """Per load PC: (access count, unique 64-byte blocks)."""
    counts: dict[int, int] = defaultdict(int)
    blocks: dict[int, set] = defaultdict(set)
    for it in items:
        if isinstance(it, TraceRecord) and it.opclass == OpClass.LOAD:
            counts[it.pc] += 1
            blocks[it.pc].add(it.eff_addr >> 6)
    return {pc: (counts[pc], len(blocks[pc])) for pc in sorted(counts)}


def memory_image(items) -> dict[int, int]:
    """Word-addressed memory contents implied by the loads of a trace."""
    mem: dict[int, int] = {}
    for it in items:
        if isinstance(it, TraceRecord) and it.opclass == OpClass.LOAD and it.value is not None:
            mem[it.eff_addr] = it.value
    return mem
