import math

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from sustaindc import frac
from sustaindc import ftlsim as S
from sustaindc.ftlsim import DegradePolicy, Geometry, Workload

SMALL = Geometry(blocks_per_chip=8, pages_per_block=4)  # 64 units per m=8 block
MEDIUM = Geometry(blocks_per_chip=64, pages_per_block=16)


def small_chip(**kw):
    kw.setdefault("pe_cycles_per_erase", 1)
    return S.init_chip(SMALL, (0, 0), seed=0, **kw)


def test_init_pristine_and_deterministic():
    assert np.all(small_chip().erase_count == 0)
    a = S.init_chip(SMALL, (2000, 4000), seed=9).erase_count
    b = S.init_chip(SMALL, (2000, 4000), seed=9).erase_count
    assert np.array_equal(a, b) and a.min() >= 2000 and a.max() <= 4000


def test_init_sampling_mean():
    chip = S.init_chip(Geometry(10_000, 1, 64), (2000, 4000), seed=3)
    assert abs(chip.erase_count.mean() - 3000) <= 0.02 * 3000


def test_config_errors():
    with pytest.raises(S.FtlConfigError):
        S.init_chip(SMALL, (10, 5))
    with pytest.raises(S.FtlConfigError):
        Geometry(0, 4)
    with pytest.raises(S.FtlConfigError):
        DegradePolicy(rber_threshold=1.5)
    with pytest.raises(S.FtlConfigError):
        DegradePolicy(m_sequence=(8, 8, 4))
    with pytest.raises(S.FtlConfigError):
        DegradePolicy("slc-forever")
    with pytest.raises(S.FtlConfigError):
        Workload(write_size=300)
    with pytest.raises(S.FtlConfigError):
        S.config_from_json("{not json")
    with pytest.raises(S.FtlConfigError):
        S.config_from_json('{"geometry": {"blocks": 3}}')


def test_units_per_page():
    assert [S.units_per_page(m) for m in S.M_SEQUENCE] == [16, 14, 13, 12, 10, 8, 5]


def test_first_write_and_overwrite():
    chip = small_chip()
    chip.host_write(5)
    assert chip.valid.sum() == 1 and chip.stats.erases == 0
    chip.host_write(5)
    assert chip.valid.sum() == 1 and (chip.write_ptr - chip.valid).sum() == 1
    with pytest.raises(S.FtlError):
        chip.host_write(chip.span)


def test_random_overwrites_trigger_gc():
    chip = small_chip()
    rng = np.random.default_rng(0)
    chip.write_units(np.arange(chip.span))
    while chip.stats.gc_runs == 0:
        chip.write_units(rng.integers(0, chip.span, 16))
    assert chip.stats.erases >= 1 and chip.erase_count.sum() == chip.stats.erases
    chip.check_invariants()


def fill_two_blocks(chip):
    chip.write_units(np.arange(128))  # blocks 0 and 1
    assert chip.valid[0] == chip.valid[1] == 64


def test_gc_fully_invalid_block_no_relocation():
    chip = small_chip()
    fill_two_blocks(chip)
    chip.write_units(np.arange(64))  # rewrites all of block 0 elsewhere
    assert chip.valid[0] == 0
    assert chip.gc_once() == 0
    assert chip.stats.relocations == 0 and chip.erase_count[0] == 1 and 0 in chip.free


def test_gc_tie_break_and_relocation_count():
    chip = small_chip()
    fill_two_blocks(chip)
    chip.write_units([0, 1, 2, 64, 65, 66])
    chip.erase_count[0], chip.erase_count[1] = 10, 5
    assert chip.pick_victim() == 1
    valid_before = int(chip.valid[1])
    chip.gc_once()
    assert chip.stats.relocations == valid_before == 61
    assert chip.erase_count[1] == 6
    chip.check_invariants()


def test_gc_without_victim():
    with pytest.raises(S.GcError):
        small_chip().pick_victim()


def best_page_bytes(m, cells=10923):
    # best grouping by direct search over group sizes
    return max((cells // a) * math.floor(a * math.log2(m) + 1e-12) // 8 for a in range(1, 9))


def test_maybe_degrade():
    chip = small_chip()
    chip.maybe_degrade(3)
    assert chip.m[3] == 8
    chip.m[3], chip.erase_count[3] = 4, 10**6
    chip.maybe_degrade(3)
    assert chip.m[3] == 3
    assert chip.block_capacity_bytes()[3] == 4 * best_page_bytes(3) == 4 * 2145
    chip.m[3] = 2
    chip.maybe_degrade(3)
    assert chip.retired[3] and chip.block_capacity_bytes()[3] == 0


def test_degrade_threshold_edge():
    # the level changes exactly when the effective-cycle error rate passes the threshold
    chip = small_chip()
    for m in (7, 5, 3):
        chip.m[2] = m
        n = 1
        while frac.rber(m, n / frac.endurance_multiplier(m)) <= 0.012:
            n *= 2
        lo, hi = n // 2, n
        while hi - lo > 1:
            mid = (lo + hi) // 2
            lo, hi = (mid, hi) if frac.rber(m, mid / frac.endurance_multiplier(m)) <= 0.012 else (lo, mid)
        chip.erase_count[2] = lo
        chip.maybe_degrade(2)
        assert chip.m[2] == m
        chip.erase_count[2] = hi
        chip.maybe_degrade(2)
        assert chip.m[2] == m - 1


def test_policies_on_threshold():
    tlc = small_chip(policy=DegradePolicy("fixed-tlc"))
    tlc.erase_count[0] = 10**6
    tlc.maybe_degrade(0)
    assert tlc.retired[0]
    half = small_chip(policy=DegradePolicy("mlc-to-slc"))
    cap = half.capacity_bytes()
    half.erase_count[0] = 10**6
    half.maybe_degrade(0)
    assert np.all(half.m == 2) and half.capacity_bytes() == cap // 2


@settings(max_examples=25, deadline=None)
@given(
    st.integers(0, 10**6),
    st.sampled_from(["uniform", "zipf"]),
    st.sampled_from([256, 1024, 4096]),
    st.sampled_from(["frac", "mlc-to-slc"]),
)
@example(21623, "zipf", 256, "frac")  # span shrinks to zero while GC makes room
def test_mapping_invariants_hold_through_lifetime(seed, pattern, size, policy):
    chip = S.init_chip(Geometry(12, 4), (0, 20000), seed=seed, policy=DegradePolicy(policy), pe_cycles_per_erase=500)
    rep = S.run_lifetime(chip, Workload(pattern, size), check_every=1)
    chip.check_invariants()
    caps = [c for _, c, _ in rep.timeline]
    assert all(b <= a for a, b in zip(caps, caps[1:]))
    assert rep.death_cause in ("capacity_floor", "mapping_full")
    assert chip.capacity_bytes() == chip.block_capacity_bytes()[~chip.retired].sum()


def test_no_lost_writes_readback():
    chip = S.init_chip(Geometry(16, 4), (3000, 3000), seed=1, pe_cycles_per_erase=100)
    rng = np.random.default_rng(4)
    last = {}
    for _ in range(300):
        units = rng.integers(0, chip.span, 40)
        chip.write_units(units)
        base = chip.seq - units.size
        for i, u in enumerate(units):
            last[int(u)] = base + i + 1
    for u, tok in last.items():
        if u < chip.span:
            assert chip.slot_token[chip.l2p[u]] == tok


def lifetime(policy, geometry=MEDIUM, seed=42, **kw):
    chip = S.init_chip(geometry, (2000, 4000), seed=seed, policy=DegradePolicy(policy), **kw)
    return S.run_lifetime(chip)


@pytest.fixture(scope="module")
def medium_runs():
    return {p: lifetime(p) for p in S.POLICIES}


def test_frac_outlives_fixed_tlc(medium_runs):
    assert medium_runs["frac"].total_host_bytes_written > medium_runs["fixed-tlc"].total_host_bytes_written


def test_halving_has_one_half_step(medium_runs):
    rep = medium_runs["mlc-to-slc"]
    page = S.page_bytes(4) - S.page_bytes(2)
    halves = [(a, b) for a, b in rep.capacity_drops() if abs((a - b) - a / 2) <= page]
    assert len(halves) == 1


def test_frac_steps_smaller_than_halving(medium_runs):
    frac_steps = [a - b for a, b in medium_runs["frac"].capacity_drops()]
    half = max(a - b for a, b in medium_runs["mlc-to-slc"].capacity_drops())
    assert frac_steps and max(frac_steps) < half
    assert len(medium_runs["frac"].plateaus()) >= 3


def test_lifetime_deterministic(medium_runs):
    again = lifetime("frac")
    assert again.to_json() == medium_runs["frac"].to_json()
    assert again.timeline_csv() == medium_runs["frac"].timeline_csv()


def test_pristine_tiny_workload_no_degradation():
    chip = S.init_chip(MEDIUM, (0, 0), seed=1)
    rep = S.run_lifetime(chip, Workload(max_host_bytes=4 * 2**20))
    assert rep.death_cause is None and rep.stats["degrade_events"] == 0
    assert rep.capacity_drops() == []


def test_timeline_csv_header(medium_runs):
    lines = medium_runs["frac"].timeline_csv().splitlines()
    assert lines[0] == "host_bytes_written,exported_capacity_bytes,mean_m"
    first = lines[1].split(",")
    assert int(first[0]) == 0 and int(first[1]) == 64 * 16 * 4096


def test_plateau_helper():
    rep = S.LifetimeReport("frac", 100, [(0, 100, 8.0), (30, 80, 7.0), (31, 79, 7.0), (60, 50, 6.0)], None, 100)
    assert rep.plateaus(min_share=0.1) == [100, 80, 50]
    assert rep.capacity_drops() == [(100, 80), (80, 79), (79, 50)]
