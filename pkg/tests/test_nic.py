import pytest

from cargosim.errors import ConfigError
from cargosim.isa import OpClass, split_requests
from cargosim.nic import NicConfig, NicModel, Packet, RxRing, region_state_bytes
from cargosim.tracegen import SyntheticWorkloadSpec, generate_trace, memory_image
from oracles import identify


@pytest.fixture(scope="module")
def hash_setup():
    items = generate_trace(SyntheticWorkloadSpec(table_buckets=4096, population=16384,
                                                 chain_length_dist=0.5, request_count=300), 4)
    regions, _ = identify(items, epoch_misses=1 << 30)
    assert len(regions) == 1
    return items, regions[0]


def packet(seg, i=0, core=0, truth=None):
    return Packet(i, 0.0, seg.key_hash, seg.key, core, seg.request_class, truth_blocks=truth)


def test_state_bytes_formula(hash_setup):
    _, rg = hash_setup
    nic = NicModel()
    n = nic.install_regions(0, [rg], 0.0)
    assert n == 16 + 8 * len(rg.instructions) + 9 * len(rg.required_regs)
    assert region_state_bytes(rg, 8, 9) == n - 16
    assert nic.mem.state_bytes == n


def test_region_activates_after_transfer(hash_setup):
    items, rg = hash_setup
    nic = NicModel()
    nic.install_regions(0, [rg], 0.0)
    seg = split_requests(items)[0]
    assert nic.matching(packet(seg), 1.0) == []
    assert nic.matching(packet(seg), 1e6) == [rg]


def test_offload_covers_request_blocks(hash_setup):
    items, rg = hash_setup
    nic = NicModel(memory=memory_image(items))
    root = {i.template.eff_addr >> 6 for i in rg.instructions if i.context_root}
    overshoot = 0
    for seg in split_requests(items):
        truth = frozenset(r.eff_addr >> 6 for r in seg.records if r.opclass == OpClass.LOAD)
        out = nic.execute_region(rg, seg.nic_args(), 0, 0.0, truth)
        fetched = {a >> 6 for a, _ in out.fills}
        assert out.failed_unknown == 0
        # the key-compare branch follows its bias, so the walk may run past the match
        assert truth - root <= fetched
        overshoot += out.incorrect > 0
    assert overshoot < len(split_requests(items)) // 10


def test_busy_time_and_instruction_overhead(hash_setup):
    items, rg = hash_setup
    nic = NicModel(memory=memory_image(items))
    nic.install_regions(0, [rg], 0.0)
    seg = split_requests(items)[0]
    out = nic.on_packet(packet(seg), 1e6)
    assert out is not None
    assert nic.stats.busy_ns == pytest.approx((56 + len(rg)) * 1000 / 166)
    assert nic.stats.offloads == 1
    assert nic.stats.instructions_per_offload == 56 + out.executed
    assert out.end_ns > 1e6 + 56 * 1000 / 166


def test_nic_cores_serve_fcfs(hash_setup):
    items, rg = hash_setup
    nic = NicModel(NicConfig(cores=1), memory=memory_image(items))
    nic.install_regions(0, [rg], 0.0)
    seg = split_requests(items)[0]
    nic.on_packet(packet(seg), 1e6)
    first_free = nic.free_at[0]
    nic.on_packet(packet(seg, 1), 1e6)
    assert nic.free_at[0] == pytest.approx(2 * first_free - 1e6)


def test_null_pointer_stops_walk(hash_setup):
    _, rg = hash_setup
    nic = NicModel(memory={})     # every pointer reads as zero
    out = nic.execute_region(rg, {1: 5, 2: 7}, 0, 0.0)
    assert out.loads_issued == 1   # the bucket load, then the null chain head


def test_disabled_offload_does_nothing(hash_setup):
    items, rg = hash_setup
    nic = NicModel(NicConfig(offload_enable=False))
    nic.install_regions(0, [rg], 0.0)
    assert nic.on_packet(packet(split_requests(items)[0]), 1e6) is None
    assert nic.mem.nic_fills == 0


def test_scratchpad_budget_drops_regions(hash_setup):
    _, rg = hash_setup
    size = region_state_bytes(rg, 8, 9)
    nic = NicModel(NicConfig(scratchpad_bytes=size + 1))
    nic.install_regions(0, [rg, rg], 0.0)
    assert len(nic.table[0]) == 1 and nic.stats.regions_dropped == 1


def test_class_matching(hash_setup):
    items, rg = hash_setup
    nic = NicModel()
    seg = split_requests(items)[0]
    nic.install_regions(0, [rg], 0.0, {seg.request_class: set(rg.pcs), 99: {1}})
    assert nic.matching(packet(seg), 1e6) == [rg]
    other = Packet(0, 0.0, 0, 0, 0, 99)
    assert nic.matching(other, 1e6) == []


def test_rx_ring():
    ring = RxRing(2)
    pkts = [Packet(i, 0.0, 0, 0, 0) for i in range(3)]
    assert ring.push(pkts[0]) and ring.push(pkts[1]) and not ring.push(pkts[2])
    assert ring.pop() is pkts[0] and len(ring) == 1


def test_cycle_time():
    assert NicConfig().cycle_ns == pytest.approx(6.024, abs=1e-3)


@pytest.mark.parametrize("kw", [{"cores": 0}, {"clock_mhz": 0}, {"step_budget": 0}])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        NicModel(NicConfig(**kw))
