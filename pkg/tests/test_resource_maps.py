import random

import pytest

from smvirt.kernel_model import ResourceSpecification
from smvirt.resource_maps import (
    ARCHITECTURES,
    MappingError,
    MappingTable,
    Placement,
    ResourceKind,
    get_arch,
    make_tables,
    reg_sets_for,
    scratch_sets_for,
    sets_required,
    table_size_bits,
)

FERMI = get_arch("fermi")


def test_arch_presets_exist():
    assert set(ARCHITECTURES) == {"fermi", "kepler", "maxwell"}
    assert FERMI.reg_sets_physical == 256
    assert FERMI.scratch_sets_physical == 48
    assert get_arch("kepler").reg_sets_physical == 512
    with pytest.raises(ValueError):
        get_arch("volta")


def test_set_rounding():
    assert reg_sets_for(0, FERMI) == 0
    assert reg_sets_for(1, FERMI) == 1  # 32 regs -> one 128-reg set
    assert reg_sets_for(4, FERMI) == 1
    assert reg_sets_for(5, FERMI) == 2
    assert reg_sets_for(32, FERMI) == 8
    assert scratch_sets_for(0, FERMI) == 0
    assert scratch_sets_for(1, FERMI) == 1
    assert scratch_sets_for(1024, FERMI) == 1
    assert scratch_sets_for(1025, FERMI) == 2
    assert scratch_sets_for(4224, FERMI) == 5


def test_sets_required_per_kind():
    spec = ResourceSpecification(
        threads_per_block=256, regs_per_thread=32, scratch_bytes_per_block=4224, num_blocks=1
    )
    assert sets_required(ResourceKind.REGISTER, spec, FERMI) == 8  # per warp
    assert sets_required(ResourceKind.SCRATCHPAD, spec, FERMI) == 5  # per block
    assert sets_required(ResourceKind.WARP_SLOT, spec, FERMI) == 1


def test_table_sizes_fermi():
    assert table_size_bits(FERMI, ResourceKind.REGISTER) == 9216
    assert table_size_bits(FERMI, ResourceKind.SCRATCHPAD) == 5376
    assert table_size_bits(FERMI, ResourceKind.WARP_SLOT) == 448


def test_allocate_physical_then_lookup():
    t = MappingTable(ResourceKind.REGISTER, capacity=8)
    t.allocate(owner=1, n_sets=3, placement=Placement.PHYSICAL)
    assert t.free_physical == 5
    assert t.owned(1) == 3
    for logical in range(3):
        assert t.lookup(1, logical) is Placement.PHYSICAL


def test_allocate_overflow_to_swap_and_budget():
    t = MappingTable(ResourceKind.REGISTER, capacity=4)
    t.allocate(1, 4, Placement.PHYSICAL)
    t.allocate(2, 3, Placement.SWAP)
    assert t.budget_swap() == 3
    assert t.lookup(2, 0) is Placement.SWAP
    # forced allocations are exempt from the budget
    t.allocate(3, 2, Placement.SWAP, forced=True)
    assert t.budget_swap() == 3
    assert t.mapped_swap == 5


def test_free_releases_tail_first():
    t = MappingTable(ResourceKind.REGISTER, capacity=4)
    t.allocate(1, 4, Placement.PHYSICAL)
    t.allocate(1, 2, Placement.SWAP)  # logical 4, 5 live in swap
    t.free(1, 3)
    # the two swap sets and one physical set went away
    assert t.owned(1) == 3
    assert t.mapped_swap == 0
    assert t.free_physical == 1


def test_lookup_counts_accesses_but_peek_does_not():
    t = MappingTable(ResourceKind.REGISTER, capacity=8)
    t.allocate(1, 2, Placement.PHYSICAL)
    assert t.peek(1, 0) is Placement.PHYSICAL
    assert t.peek(1, 5) is None
    before = t.access_stats().total_accesses
    t.peek(1, 0)
    assert t.access_stats().total_accesses == before
    t.lookup(1, 0)
    assert t.access_stats().total_accesses == before + 1


def test_migrate_in_moves_swap_set_on_chip():
    t = MappingTable(ResourceKind.SCRATCHPAD, capacity=2)
    t.allocate(1, 2, Placement.PHYSICAL)
    t.allocate(2, 1, Placement.SWAP)
    with pytest.raises(MappingError):
        t.migrate_in(2, 0)  # no free physical set
    t.free_all(1)
    t.migrate_in(2, 0)
    assert t.lookup(2, 0) is Placement.PHYSICAL
    assert t.mapped_swap == 0


def test_swap_keys_by_heat_orders_by_access_count():
    t = MappingTable(ResourceKind.REGISTER, capacity=1)
    t.allocate(1, 1, Placement.PHYSICAL)
    t.allocate(2, 2, Placement.SWAP)
    t.allocate(3, 1, Placement.SWAP, forced=True)
    t.lookup(2, 1)
    t.lookup(2, 1)
    t.lookup(2, 0)
    assert t.swap_keys_by_heat() == [(2, 1), (2, 0)]
    assert t.swap_keys_by_heat(include_forced=True)[0] == (2, 1)
    assert (3, 0) in t.swap_keys_by_heat(include_forced=True)


def test_spill_lfu_picks_coldest():
    t = MappingTable(ResourceKind.REGISTER, capacity=3)
    t.allocate(1, 3, Placement.PHYSICAL)
    t.lookup(1, 0)
    t.lookup(1, 0)
    t.lookup(1, 2)
    victims = t.spill_lfu(1)
    assert victims == [(1, 1)]  # untouched set goes first
    assert t.lookup(1, 1) is Placement.SWAP


def test_access_stats_track_swap_fraction():
    t = MappingTable(ResourceKind.REGISTER, capacity=1)
    t.allocate(1, 1, Placement.PHYSICAL)
    t.allocate(2, 1, Placement.SWAP)
    t.lookup(1, 0)
    t.lookup(1, 0)
    t.lookup(2, 0)
    stats = t.access_stats()
    assert stats.total_accesses >= 3
    assert stats.swap_accesses == 1
    assert 0.0 < stats.hit_rate < 1.0


def test_random_workload_keeps_invariants():
    rng = random.Random(11)
    t = MappingTable(ResourceKind.REGISTER, capacity=16)
    live = {}
    for step in range(2000):
        action = rng.random()
        owner = rng.randint(0, 9)
        if action < 0.45:
            n = rng.randint(1, 4)
            placement = Placement.PHYSICAL if t.free_physical >= n else Placement.SWAP
            t.allocate(owner, n, placement)
            live[owner] = live.get(owner, 0) + n
        elif action < 0.7 and live.get(owner):
            n = rng.randint(1, live[owner])
            t.free(owner, n)
            live[owner] -= n
        elif action < 0.9 and live.get(owner):
            t.lookup(owner, rng.randrange(live[owner]))
        else:
            for key in t.swap_keys_by_heat(include_forced=True):
                if t.free_physical == 0:
                    break
                t.migrate_in(*key)
        assert t.check_invariants() == [], step


def test_make_tables_covers_all_kinds():
    tables = make_tables(FERMI)
    assert set(tables) == set(ResourceKind)
    assert tables[ResourceKind.WARP_SLOT].capacity == 48
