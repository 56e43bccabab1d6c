from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cargosim.isa import AluOp, MarkerKind, OpClass, RequestMarker, TraceRecord, split_requests
from cargosim.trace import (
    TraceFormatError, TraceTruncatedError, dumps, dumps_text, effective_address, loads,
    read_trace, validate_trace, write_trace,
)
from cargosim.tracegen import (
    HASH_CHAIN_PCS, SyntheticWorkloadSpec, WorkloadKind, generate_trace, memory_image, pc_profile,
)

regs = st.one_of(st.none(), st.integers(0, 15))
u64 = st.integers(0, (1 << 64) - 1)


@st.composite
def records(draw):
    opc = draw(st.sampled_from(list(OpClass)))
    mem = opc in (OpClass.LOAD, OpClass.STORE)
    return TraceRecord(
        pc=draw(u64), opclass=opc, dest=draw(regs), src1=draw(regs), src2=draw(regs),
        addr_base=draw(regs), addr_index=draw(regs),
        addr_scale=draw(st.sampled_from([1, 2, 4, 8])),
        addr_disp=draw(st.integers(-(1 << 31), (1 << 31) - 1)),
        eff_addr=draw(u64) if mem else draw(st.one_of(st.none(), u64)),
        value=draw(st.one_of(st.none(), u64)),
        branch_target=draw(u64) if opc == OpClass.BRANCH else None,
        branch_taken=draw(st.booleans()), is_stack_access=draw(st.booleans()),
        is_pc_relative=draw(st.booleans()), alu_op=draw(st.sampled_from(list(AluOp))),
    )


markers = st.builds(RequestMarker, st.sampled_from(list(MarkerKind)),
                    st.integers(0, (1 << 64) - 1), u64, u64)
items_st = st.lists(st.one_of(records(), markers), max_size=40)


@given(items_st)
def test_binary_round_trip(items):
    assert loads(dumps(items)) == items


@given(items_st)
def test_text_round_trip(items):
    assert loads(dumps_text(items).encode()) == items


@given(st.lists(records(), min_size=1, max_size=10), st.data())
def test_truncation_always_detected(items, data):
    blob = dumps(items)
    header_end = blob.index(b"\n") + 1
    cut = data.draw(st.integers(header_end, len(blob) - 1))
    with pytest.raises(TraceTruncatedError):
        loads(blob[:cut])


def test_empty_and_bad_header():
    with pytest.raises(TraceTruncatedError):
        loads(b"")
    with pytest.raises(TraceFormatError):
        loads(b"NOTATRACE 1 0\n")
    with pytest.raises(TraceFormatError):
        loads(dumps([]) + b"x")


def test_schema_violation_names_record():
    good = TraceRecord(pc=1, opclass=OpClass.ALU)
    bad = TraceRecord(pc=2, opclass=OpClass.LOAD)   # load without an address
    text = dumps_text([good, bad]).encode()
    with pytest.raises(TraceFormatError) as exc:
        loads(text)
    assert exc.value.index == 1


def test_file_round_trip(tmp_path):
    items = generate_trace(SyntheticWorkloadSpec(request_count=20), 1)
    for text in (False, True):
        p = tmp_path / f"t{text}"
        write_trace(items, p, text=text)
        assert read_trace(p) == items


def test_effective_address_rip_relative():
    rec = TraceRecord(pc=0x100, opclass=OpClass.LOAD, addr_base=15, addr_disp=0x10, eff_addr=0)
    assert effective_address(rec, {}) == 0x110
    rec = TraceRecord(pc=0, opclass=OpClass.LOAD, addr_base=0, addr_index=1, addr_scale=8,
                      addr_disp=-8, eff_addr=0)
    assert effective_address(rec, {0: 0x1000, 1: 2}) == 0x1008
    assert effective_address(rec, {0: 0x1000}) is None


@pytest.mark.parametrize("kind", list(WorkloadKind))
@pytest.mark.parametrize("seed", [0, 1, 99])
def test_generated_traces_are_self_consistent(kind, seed):
    items = generate_trace(SyntheticWorkloadSpec(kind=kind, request_count=200,
                                                 population=2048, table_buckets=512), seed)
    rep = validate_trace(items)
    assert rep.ok, rep.violations[:3]
    assert rep.unchecked_addresses == 0
    assert len(split_requests(items)) == 200


def test_generation_is_deterministic():
    spec = SyntheticWorkloadSpec(request_count=50)
    assert generate_trace(spec, 5) == generate_trace(spec, 5)
    assert generate_trace(spec, 5) != generate_trace(spec, 6)


def test_hash_chain_uses_walkthrough_pcs():
    items = generate_trace(SyntheticWorkloadSpec(request_count=100, chain_length_dist=0.3), 2)
    pcs = {it.pc for it in items if isinstance(it, TraceRecord)}
    assert set(HASH_CHAIN_PCS) <= pcs
    prof = pc_profile(items)
    assert prof[HASH_CHAIN_PCS[0]][1] == 1      # table pointer: one block


def test_memory_image_matches_loads():
    items = generate_trace(SyntheticWorkloadSpec(request_count=30), 3)
    mem = memory_image(items)
    for it in items:
        if isinstance(it, TraceRecord) and it.opclass == OpClass.LOAD:
            assert mem[it.eff_addr] is not None


def test_zipf_keys_follow_distribution():
    n, s, count = 500, 1.1, 20000
    items = generate_trace(SyntheticWorkloadSpec(population=n, key_dist=s, request_count=count,
                                                 table_buckets=1024), 11)
    freq = Counter(it.key for it in items
                   if isinstance(it, RequestMarker) and it.kind == MarkerKind.REQ_BEGIN)
    observed = sorted(freq.values(), reverse=True)[:5]
    w = 1.0 / np.arange(1, n + 1) ** s
    expected = count * w[:5] / w.sum()
    sd = np.sqrt(expected)
    assert np.all(np.abs(np.array(observed) - expected) < 5 * sd + 5)


def test_split_requests_rejects_bad_nesting():
    r = TraceRecord(pc=1, opclass=OpClass.ALU)
    with pytest.raises(ValueError):
        split_requests([r])
    with pytest.raises(ValueError):
        split_requests([RequestMarker(MarkerKind.REQ_BEGIN, 0), r])
    rep = validate_trace([RequestMarker(MarkerKind.REQ_BEGIN, 0),
                          RequestMarker(MarkerKind.REQ_BEGIN, 1)])
    assert not rep.ok
