"""Large-log space reclamation and its invalid-byte bookkeeping."""

import random
import struct

from hybridkv.engine import EngineConfig, GC_REGION, Store
from hybridkv.layout import RamDevice
from hybridkv.logs import ENTRY_OVERHEAD

from helpers import make_key, make_value, scan_all

SEGLEN = 64 * 1024
REGION = "default"


def new_store(**over):
    base = dict(
        growth_factor_f=4,
        l0_capacity=32 * 1024,
        segment_length=SEGLEN,
        leaf_size=4096,
        node_size=4096,
        chunk_size=16 * 1024,
    )
    base.update(over)
    store = Store.create(EngineConfig(**base), device=RamDevice(512 * SEGLEN))
    store.create_region(REGION)
    return store


def counter_for(store, seg_id) -> int:
    gcr = store.regions[GC_REGION]
    raw = gcr.get(struct.pack(">Q", seg_id * SEGLEN), record=False)
    return int.from_bytes(raw, "little") if raw else 0


def test_overwrite_of_large_value_charges_its_entry_bytes():
    store = new_store()
    region = store.region(REGION)
    k = make_key(1)
    v = make_value(1, 1500)
    region.put(k, v)
    seg_id = region.large_log.segments[0]
    assert counter_for(store, seg_id) == 0
    region.put(k, make_value(2, 1500))  # shadows the first entry
    assert counter_for(store, seg_id) == ENTRY_OVERHEAD + len(k) + len(v)


def test_invalid_bytes_accumulate_per_segment():
    store = new_store()
    region = store.region(REGION)
    keys = [make_key(i) for i in range(5)]
    for i, k in enumerate(keys):
        region.put(k, make_value(i, 1200))
    seg_id = region.large_log.segments[0]
    per_entry = ENTRY_OVERHEAD + 24 + 1200
    for n, k in enumerate(keys, start=1):
        region.delete(k)
        assert counter_for(store, seg_id) == n * per_entry


def test_segment_below_threshold_is_left_alone():
    store = new_store(l0_capacity=1024 * 1024)  # everything stays in L0
    region = store.region(REGION)
    n = SEGLEN // (ENTRY_OVERHEAD + 24 + 1200)
    for i in range(3 * n):
        region.put(make_key(i), make_value(i, 1200))
    store.flush()
    first_seg = region.large_log.segments[0]
    region.delete(make_key(0))  # roughly 1.9% of one segment
    assert 0 < counter_for(store, first_seg) / SEGLEN < 0.05
    segs_before = list(region.large_log.segments)
    assert store.gc.gc_tick() == 0
    assert list(region.large_log.segments) == segs_before


def test_fully_shadowed_segment_is_freed_without_relocations():
    store = new_store(gc_after_compaction=False)
    region = store.region(REGION)
    n = SEGLEN // (ENTRY_OVERHEAD + 24 + 1200) + 2  # enough to seal segment 1
    for i in range(n):
        region.put(make_key(i), make_value(i, 1200))
    store.flush()
    victim = region.large_log.segments[0]
    for i in range(n):
        region.delete(make_key(i))
    region.compact_now()
    lsn_before = region.lsn
    assert store.gc.gc_tick() >= 1
    assert victim not in region.large_log.segments
    # no live entries, so reclamation relocated nothing (no new versions)
    assert region.lsn == lsn_before
    assert counter_for(store, victim) == 0
    assert store.fsck() == []


def test_insert_only_workload_never_triggers_reclamation():
    store = new_store()
    region = store.region(REGION)
    for i in range(400):
        region.put(make_key(i), make_value(i, 1500))
        region.put(make_key(10_000 + i), make_value(i, 60))
    region.compact_now()
    assert store.gc.gc_tick() == 0
    assert all(f == 0.0 for f in store.gc.invalid_fractions().values())


def test_reclamation_is_invisible_to_readers():
    store = new_store(gc_after_compaction=False)
    region = store.region(REGION)
    rng = random.Random(21)
    model = {}
    for round_no in range(6):
        for i in range(300):
            k = make_key(rng.randrange(250))
            v = make_value((round_no, i), rng.choice([60, 400, 1500]))
            region.put(k, v)
            model[k] = v
        region.compact_now()
    before = scan_all(region)
    assert before == model
    reclaimed = store.gc.gc_tick()
    assert reclaimed > 0  # heavy overwrites leave mostly-dead segments behind
    assert scan_all(region) == model
    assert store.fsck() == []


def test_threshold_override_controls_eligibility():
    store = new_store(gc_after_compaction=False)
    region = store.region(REGION)
    n = SEGLEN // (ENTRY_OVERHEAD + 24 + 1200) + 2
    for i in range(n):
        region.put(make_key(i), make_value(i, 1200))
    store.flush()
    for i in range(0, n, 4):  # ~25% of the first segment goes stale
        region.delete(make_key(i))
    region.compact_now()
    assert store.gc.gc_tick(threshold=0.9) == 0
    assert store.gc.gc_tick(threshold=0.10) >= 1
