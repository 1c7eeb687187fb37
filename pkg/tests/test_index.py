"""Slotted leaves, reference payloads, and the bulk-built per-level tree."""

import random

import pytest

from hybridkv.index import (
    CAT_LARGE,
    CAT_MEDIUM,
    CAT_SMALL,
    CAT_TOMB,
    FLAG_INLOG,
    Leaf,
    LevelBuilder,
    LevelIndex,
    PREFIX_LEN,
    REF_SIZE,
    decode_inplace,
    decode_ref,
    encode_inplace,
    encode_ref,
    inplace_key,
    key_prefix,
)
from hybridkv.errors import InvariantViolation
from hybridkv.layout import RamDevice, StorageSpace
from hybridkv.logs import LOG_LARGE, LogAddress
from hybridkv.metrics import TrafficCounters

from helpers import make_key

SEGLEN = 64 * 1024
LEAF = 4096
NODE = 4096


def make_space(segments=64):
    return StorageSpace(RamDevice(SEGLEN * segments), SEGLEN, TrafficCounters())


def test_inplace_payload_round_trip():
    p = encode_inplace(b"k" * 24, b"v" * 40)
    assert decode_inplace(p) == (b"k" * 24, b"v" * 40)
    assert inplace_key(p) == b"k" * 24


def test_ref_payload_round_trip_carries_lsn():
    addr = LogAddress(LOG_LARGE, 123456, 789)
    p = encode_ref(b"p" * PREFIX_LEN, addr, 42)
    assert len(p) == REF_SIZE
    prefix, got_addr, lsn = decode_ref(p)
    assert (prefix, got_addr, lsn) == (b"p" * PREFIX_LEN, addr, 42)


def test_leaf_insert_search_against_dict():
    rng = random.Random(3)
    leaf = Leaf(LEAF)
    model = {}
    while True:
        k = make_key(rng.randrange(500))
        v = bytes([rng.randrange(256)]) * rng.randrange(1, 30)
        if not leaf.insert(k, encode_inplace(k, v), CAT_SMALL):
            break
        model[k] = v
    assert leaf.count == len(model)
    for k, v in model.items():
        hit = leaf.search(k)
        assert hit is not None
        assert decode_inplace(hit[1]) == (k, v)
    assert leaf.search(make_key(10_000)) is None


def test_leaf_overwrite_in_place_reclaims_on_compact():
    leaf = Leaf(LEAF)
    k = make_key(1)
    assert leaf.insert(k, encode_inplace(k, b"old-value"), CAT_SMALL)
    assert leaf.insert(k, encode_inplace(k, b"new"), CAT_SMALL)
    assert leaf.count == 1
    assert decode_inplace(leaf.search(k)[1])[1] == b"new"
    free_before = leaf.free_space()
    leaf.compact_in_leaf()
    assert leaf.free_space() >= free_before


def test_leaf_serialization_round_trip():
    leaf = Leaf(LEAF)
    for i in range(20):
        k = make_key(i)
        leaf.insert(k, encode_inplace(k, b"v%d" % i), CAT_SMALL)
    clone = Leaf.from_bytes(leaf.to_bytes())
    assert clone.count == leaf.count
    for i in range(20):
        k = make_key(i)
        assert decode_inplace(clone.search(k)[1]) == decode_inplace(leaf.search(k)[1])


def build_level(items, space=None):
    """items: sorted list of (key, value) pairs stored in place."""
    space = space or make_space()
    builder = LevelBuilder(space, "r/L1", LEAF, NODE)
    for k, v in items:
        builder.add(key_prefix(k), CAT_SMALL, encode_inplace(k, v))
    root, first_leaf, segs, count, stored, resolved = builder.finish()
    assert count == len(items)
    return LevelIndex(space, root, first_leaf, LEAF, NODE), space, segs


def test_bulk_build_and_point_lookups():
    items = sorted((make_key(i), b"val-%d" % i) for i in range(5000))
    idx, _, _ = build_level(items)
    for k, v in items[::37]:
        hit = idx.search(k)
        assert hit is not None and decode_inplace(hit[1]) == (k, v)
    assert idx.search(make_key(999_999)) is None


def test_bulk_build_rejects_unsorted_input():
    space = make_space()
    builder = LevelBuilder(space, "r/L1", LEAF, NODE)
    k1, k2 = sorted([make_key(1), make_key(2)])
    builder.add(key_prefix(k2), CAT_SMALL, encode_inplace(k2, b"a"))
    with pytest.raises(InvariantViolation):
        builder.add(key_prefix(k1), CAT_SMALL, encode_inplace(k1, b"b"))


def test_iter_items_returns_everything_in_order():
    items = sorted((make_key(i), b"%d" % i) for i in range(3000))
    idx, _, _ = build_level(items)
    walked = [(inplace_key(p), decode_inplace(p)[1]) for _, f, p in idx.iter_items()]
    assert walked == items


def test_scan_from_starts_at_lower_bound():
    items = sorted((make_key(i), b"%d" % i) for i in range(1000))
    idx, _, _ = build_level(items)
    start = items[500][0]
    got = [inplace_key(p) for _, f, p in idx.scan_from(start, None)]
    assert got == [k for k, _ in items[500:]]
    # a start key below everything yields the whole level
    assert len(list(idx.scan_from(b"\x00" * 24, None))) == len(items)


def test_single_leaf_level_has_leaf_root():
    items = sorted((make_key(i), b"tiny") for i in range(5))
    idx, _, _ = build_level(items)
    for k, v in items:
        assert decode_inplace(idx.search(k)[1]) == (k, v)


def test_level_mixes_ref_and_inplace_payloads():
    space = make_space()
    builder = LevelBuilder(space, "r/L1", LEAF, NODE)
    items = sorted((make_key(i), i) for i in range(200))
    addr_of = {}
    for k, i in items:
        if i % 3 == 0:
            addr = LogAddress(LOG_LARGE, 4 * SEGLEN + i * 64, 64)
            addr_of[k] = (addr, 1000 + i)
            builder.add(key_prefix(k), CAT_LARGE | FLAG_INLOG, encode_ref(key_prefix(k), addr, 1000 + i))
        else:
            builder.add(key_prefix(k), CAT_SMALL, encode_inplace(k, b"v%d" % i))
    root, first_leaf, *_ = builder.finish()
    idx = LevelIndex(space, root, first_leaf, LEAF, NODE)
    for k, i in items:
        flags, payload = idx.search(k, resolver=None) if i % 3 else idx.search(k, resolver=_resolver(addr_of))
        if i % 3 == 0:
            assert flags & FLAG_INLOG
            _, addr, lsn = decode_ref(payload)
            assert (addr, lsn) == addr_of[k]
        else:
            assert not flags & FLAG_INLOG


def _resolver(addr_of):
    rev = {addr: k for k, (addr, _) in addr_of.items()}

    class E:
        def __init__(self, key):
            self.key = key

    return lambda addr, lsn=None: E(rev[addr])


def test_tombstone_flag_survives_build():
    space = make_space()
    builder = LevelBuilder(space, "r/L1", LEAF, NODE)
    k = make_key(1)
    builder.add(key_prefix(k), CAT_TOMB, encode_inplace(k, b""))
    root, first_leaf, *_ = builder.finish()
    idx = LevelIndex(space, root, first_leaf, LEAF, NODE)
    flags, payload = idx.search(k)
    assert flags & 0b011 == CAT_TOMB
