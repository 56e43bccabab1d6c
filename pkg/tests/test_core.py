import pytest
from hypothesis import given
from hypothesis import strategies as st

from cargosim.core import BUCKETS, BranchPredictor, CoreConfig, CoreModel
from cargosim.errors import ConfigError
from cargosim.isa import AluOp, OpClass, RequestSegment, TraceRecord, split_requests
from cargosim.tracegen import SyntheticWorkloadSpec, generate_trace


def alu(pc=0x10):
    return TraceRecord(pc=pc, opclass=OpClass.ALU, dest=1, src1=1, alu_op=AluOp.ADD)


def load(addr, dest=2, base=3, pc=0x20):
    return TraceRecord(pc=pc, opclass=OpClass.LOAD, dest=dest, addr_base=base, eff_addr=addr)


def seg(records):
    return RequestSegment(0, 0, 0, list(records))


def test_pure_alu_is_issue_bound():
    m = CoreModel()
    r = m.run_request(seg([alu()] * 10))
    assert r.cycles == 3
    assert r.stack["base"] == 3


def test_smt_divides_issue_width():
    m = CoreModel()
    assert m.run_request(seg([alu()] * 8), active_threads=4).cycles == 8


def test_single_cold_load_charges_full_latency():
    m = CoreModel()
    r = m.run_request(seg([load(0x1000)]))
    assert r.cycles == 1 + 215
    assert r.stack["DRAM"] == 180 and r.stack["LLC"] == 30
    assert r.stack["L2"] == 3 and r.stack["L1"] == 2


def test_independent_loads_overlap():
    m = CoreModel()
    recs = [load((i + 1) << 20, dest=4 + i % 4, base=3) for i in range(8)]
    r = m.run_request(seg(recs))
    assert r.cycles < 2 * 215
    assert r.max_outstanding == 8


def test_dependent_loads_serialize():
    m = CoreModel()
    recs = [load((i + 1) << 20, dest=2, base=2) for i in range(4)]
    r = m.run_request(seg(recs))
    assert r.cycles >= 4 * 215


def test_mlp_window_of_one_serializes():
    recs = [load((i + 1) << 20, dest=4, base=3) for i in range(4)]
    wide = CoreModel().run_request(seg(recs)).cycles
    narrow = CoreModel(CoreConfig(mlp_window=1)).run_request(seg(recs)).cycles
    assert narrow > 3 * 215 > wide
    assert CoreConfig().effective_mlp == 32


def test_mispredict_penalty():
    br = TraceRecord(pc=0x30, opclass=OpClass.BRANCH, src1=1, src2=2, branch_target=0x10,
                     branch_taken=True, alu_op=AluOp.NE)
    m = CoreModel()
    r = m.run_request(seg([br]))
    assert r.stack["branch"] == 15      # counters start weakly not-taken
    r2 = m.run_request(seg([br]))
    assert r2.stack["branch"] == 0


def test_branch_predictor_saturates():
    bp = BranchPredictor(16)
    outcomes = [bp.predict_and_update(3, True) for _ in range(4)]
    assert outcomes == [False, True, True, True]
    assert bp.predict_and_update(3, False) is False
    assert bp.predict_and_update(3, True) is True


@given(st.lists(st.tuples(st.sampled_from(["alu", "ld", "dld", "st"]), st.integers(0, 63)),
                min_size=1, max_size=60), st.integers(1, 4))
def test_cpi_stack_sums_exactly(ops, threads):
    recs = []
    for kind, a in ops:
        if kind == "alu":
            recs.append(alu())
        elif kind == "ld":
            recs.append(load(a << 12, dest=5, base=3))
        elif kind == "dld":
            recs.append(load(a << 12, dest=5, base=5))
        else:
            recs.append(TraceRecord(pc=0x40, opclass=OpClass.STORE, src1=1, addr_base=3,
                                    eff_addr=a << 12))
    m = CoreModel()
    r = m.run_request(seg(recs), active_threads=threads)
    width = 4 // threads
    assert sum(r.stack.values()) == r.cycles
    assert r.cycles >= -(-len(recs) // width)
    assert set(r.stack) == set(BUCKETS)


def test_generated_requests_accumulate_stack():
    items = generate_trace(SyntheticWorkloadSpec(request_count=50), 0)
    m = CoreModel()
    total = sum(m.run_request(s, start_ns=i * 1000.0).cycles
                for i, s in enumerate(split_requests(items)))
    rep = m.cpi_report()
    assert rep["total"] == total
    assert 0 < rep["memory_share"] < 1
    assert sum(rep["cpi"].values()) == pytest.approx(total / rep["instructions"])


@pytest.mark.parametrize("kw", [{"cores": 0}, {"cores": 17}, {"issue_width": 0},
                                {"mlp_window": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        CoreModel(CoreConfig(**kw))
