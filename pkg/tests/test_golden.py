import time

from cargosim.golden import GOLDEN_PATH, check_golden, first_diff, run_golden
from cargosim.isa import RAX, RDX, OpClass
from cargosim.tracegen import HASH_CHAIN_PCS


def test_walkthrough_matches_committed_tables():
    t0 = time.perf_counter()
    ok, msg = check_golden()
    assert ok, msg
    assert time.perf_counter() - t0 < 1.0


def test_narrated_end_state():
    res = run_golden()
    (rg,) = res.regions
    assert rg.pcs == sorted(HASH_CHAIN_PCS)
    assert rg.required(RDX).state == "READY-DYN" and rg.required(RDX).value == 1
    assert rg.required(RAX).state == "READY"
    # branches are ready because their targets are
    for ins in rg.instructions:
        if ins.kind == OpClass.BRANCH:
            assert ins.template.branch_target in rg.pcs


def test_strict_threshold_matters():
    # a 1/1 threshold can never be exceeded: rax stays unresolved and the region is withheld
    res = run_golden(threshold_den=1)
    assert res.regions == []
    assert res.engine.withheld >= 1


def test_clear_on_epoch_starts_empty():
    assert run_golden().epoch_start_entries > 0
    assert run_golden(clear_on_epoch=True).epoch_start_entries == 0


def test_diff_reports_first_line(tmp_path):
    bad = tmp_path / "g.txt"
    text = GOLDEN_PATH.read_text().splitlines()
    text[3] = "tampered"
    bad.write_text("\n".join(text) + "\n")
    ok, msg = check_golden(golden_path=bad)
    assert not ok and "line 4" in msg
    assert first_diff("a\nb\n", "a\nb\n") is None
    assert "missing" in first_diff("a\n", "a\nb\n")
