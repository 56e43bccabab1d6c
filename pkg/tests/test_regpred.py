import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cargosim.errors import ConfigError
from cargosim.regpred import RegPredConfig, RegState, RegValuePredictor
from oracles import ElectionOracle

RAX = 0


def feed(p, reg, plan, args=None):
    """plan: list of (in_value, gen_follows) per instance."""
    for v, g in plan:
        p.begin_instance()
        p.observe_in(reg, v, args or {})
        if g:
            p.observe_gen(reg, v + 1)


def test_exact_one_eighth_is_not_elected():
    p = RegValuePredictor()
    feed(p, RAX, [(0x10, True)] + [(0x10, False)] * 7)     # 1/8 exactly
    assert not p.elect(RAX).resolved
    p2 = RegValuePredictor()
    feed(p2, RAX, [(0x10, True)] * 2 + [(0x10, False)] * 14)   # 2/16 exactly
    assert not p2.elect(RAX).resolved
    p3 = RegValuePredictor()
    feed(p3, RAX, [(0x10, True)] * 2 + [(0x10, False)] * 13)   # 2/15 > 1/8
    e = p3.elect(RAX)
    assert (e.state, e.value) == ("READY", 0x10)
    assert p3.state_of(RAX) == (RegState.READY, 0x10)


def test_denominator_counts_all_slots_of_register():
    p = RegValuePredictor()
    # one transition over eight uses of the register (A twice, B six times): not above 1/8
    feed(p, RAX, [(0xA, True), (0xA, False)] + [(0xB, False)] * 6)
    assert not p.elect(RAX).resolved
    feed(p, RAX, [(0xA, True)])
    assert p.elect(RAX).value == 0xA


def test_transitions_count_once_per_instance():
    p = RegValuePredictor()
    p.begin_instance()
    p.observe_in(RAX, 5, {})
    for v in range(10):
        p.observe_gen(RAX, v)
    assert p.in_table[RAX].transitions == 1


def test_argument_match_gives_ready_dyn():
    p = RegValuePredictor()
    p.begin_instance()
    p.observe_in(2, 777, {1: 777, 2: 9})
    e = p.elect(2)
    assert (e.state, e.value) == ("READY-DYN", 1)
    p.reset_epoch()
    assert p.state_of(2)[0] == RegState.TRACKED


def test_tie_break_prefers_transitions_then_usage_then_low_slot():
    p = RegValuePredictor()
    feed(p, RAX, [(1, True), (2, True), (2, False)])
    assert p.elect(RAX).value == 2          # equal transitions, more uses
    q = RegValuePredictor()
    feed(q, RAX, [(1, True), (2, True)])
    assert q.elect(RAX).value == 1          # full tie: lower slot index


def test_lfu_eviction_in_place_at_per_register_limit():
    p = RegValuePredictor(RegPredConfig(per_reg_limit=2))
    feed(p, RAX, [(1, False), (1, False), (2, False), (3, False)])
    assert [p.in_table[i].in_value for i in p.slots_of(RAX)] == [1, 3]
    assert p.live_in_slots() == 2


def test_pool_exhaustion_evicts():
    p = RegValuePredictor(RegPredConfig(in_entries=17, per_reg_limit=8))
    feed(p, RAX, [(1, False), (2, False)])
    feed(p, 1, [(7, False), (8, False)])       # pool full: register 1 replaces in place
    assert [p.in_table[i].in_value for i in p.slots_of(1)] == [8]
    assert len(p.slots_of(RAX)) == 2


def test_force_unresolved():
    p = RegValuePredictor(RegPredConfig(force_unresolved=True))
    feed(p, RAX, [(1, True)] * 5)
    assert not p.elect(RAX).resolved


def test_storage_bytes():
    s = RegValuePredictor().storage_bytes()
    assert s == {"register_state": 16 * 17, "predictor": 48 * 20 + 132 * 16}
    assert s["register_state"] == 272


@pytest.mark.parametrize("kw", [{"threshold_den": 0}, {"in_entries": 8}, {"per_reg_limit": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        RegValuePredictor(RegPredConfig(**kw))


def run_stream(seed: int):
    rng = random.Random(seed)
    cfg = RegPredConfig(in_entries=rng.choice([16, 18, 24, 48]),
                        per_reg_limit=rng.choice([1, 2, 3, 8]),
                        threshold_num=rng.choice([1, 1, 3]),
                        threshold_den=rng.choice([2, 4, 8, 8]))
    p, o = RegValuePredictor(cfg), ElectionOracle(cfg)
    regs = rng.sample(range(16), rng.randint(1, 4))
    vals = [rng.randrange(1, 6) for _ in range(rng.randint(1, 8))]
    for _ in range(rng.randint(1, 60)):
        p.begin_instance()
        o.begin_instance()
        args = {1: rng.choice([100, 101, vals[0]])}
        for r in regs:
            if rng.random() < 0.8:
                v = rng.choice(vals)
                p.observe_in(r, v, args)
                o.observe_in(r, v, args)
                for _ in range(rng.choice([0, 0, 1, 2])):
                    g = rng.choice(vals)
                    p.observe_gen(r, g)
                    o.observe_gen(r, g)
        if rng.random() < 0.05:
            p.reset_epoch()
            o.reset_epoch()
        for r in regs:
            e = p.elect(r)
            assert (e.state, e.value) == o.elect(r), f"seed {seed} reg {r}"


def test_matches_bruteforce_recount_1000_streams():
    for seed in range(1000):
        run_stream(seed)


@given(st.lists(st.tuples(st.integers(1, 4), st.booleans()), min_size=1, max_size=80))
def test_elected_value_exceeds_threshold(plan):
    p = RegValuePredictor()
    feed(p, RAX, plan)
    e = p.elect(RAX)
    total = len(plan)
    if e.resolved:
        trans = sum(1 for v, g in plan if v == e.value and g)
        assert trans * 8 > total
    else:
        for v in {v for v, _ in plan}:
            assert sum(1 for w, g in plan if w == v and g) * 8 <= total
