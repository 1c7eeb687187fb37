"""Segment allocator, counted I/O seam, and catalog persistence."""

import pytest

from hybridkv.errors import InvariantViolation, OutOfSpaceError, StorageError
from hybridkv.layout import (
    FIRST_DATA_SEGMENT,
    RamDevice,
    StorageSpace,
    crc64,
    read_best_catalog,
    write_catalog,
)
from hybridkv.metrics import TrafficCounters

SEGLEN = 64 * 1024


def make_space(segments=16):
    return StorageSpace(RamDevice(SEGLEN * segments), SEGLEN, TrafficCounters())


def test_crc64_known_vector():
    # CRC-64/XZ check value for the standard nine-digit test string
    assert crc64(b"123456789") == 0x995DC9BBDF1939FA


def test_reserved_segments_are_preowned():
    sp = make_space()
    assert sp.owner_of(0) == sp.owner_of(1) == "catalog"
    assert sp.owner_of(2) == sp.owner_of(3) == "redo"
    with pytest.raises(InvariantViolation):
        sp.free(0)


def test_allocate_free_cycle_prefers_lowest_segment():
    sp = make_space()
    a = sp.allocate("x")
    b = sp.allocate("y")
    assert (a.segment_id, b.segment_id) == (FIRST_DATA_SEGMENT, FIRST_DATA_SEGMENT + 1)
    sp.free(a.segment_id)
    c = sp.allocate("z")
    assert c.segment_id == a.segment_id
    assert sp.owner_of(c.segment_id) == "z"


def test_double_free_rejected():
    sp = make_space()
    seg = sp.allocate("x").segment_id
    sp.free(seg)
    with pytest.raises(InvariantViolation):
        sp.free(seg)
    sp.free_if_owned(seg)  # idempotent variant is silent


def test_retag_requires_owned_segment():
    sp = make_space()
    seg = sp.allocate("x").segment_id
    sp.retag(seg, "y")
    assert sp.owner_of(seg) == "y"
    sp.free(seg)
    with pytest.raises(InvariantViolation):
        sp.retag(seg, "z")


def test_out_of_space():
    sp = make_space(segments=FIRST_DATA_SEGMENT + 1)
    sp.allocate("x")
    with pytest.raises(OutOfSpaceError):
        sp.allocate("y")


def test_io_respects_segment_boundaries_and_ownership():
    sp = make_space()
    seg = sp.allocate("x")
    sp.write_at(seg.device_offset, b"hello", "log_append")
    assert sp.read_at(seg.device_offset, 5, "lookup_read") == b"hello"
    with pytest.raises(StorageError):
        sp.write_at(seg.device_offset + SEGLEN - 2, b"span", "log_append")
    free_seg_off = (seg.segment_id + 1) * SEGLEN
    with pytest.raises(StorageError):
        sp.read_at(free_seg_off, 4, "lookup_read")


def test_every_transfer_lands_in_exactly_one_class():
    sp = make_space()
    seg = sp.allocate("x")
    sp.write_at(seg.device_offset, b"a" * 100, "log_append")
    sp.write_at(seg.device_offset + 100, b"b" * 50, "compaction_write")
    sp.read_at(seg.device_offset, 30, "lookup_read")
    snap = sp.counters.snapshot()
    assert snap["device.write_bytes"] == 150
    assert snap["device.read_bytes"] == 30
    per_class = sum(v for k, v in snap.items()
                    if k.startswith("device.") and k not in ("device.read_bytes", "device.write_bytes"))
    assert per_class == 180


def test_unknown_traffic_class_rejected():
    sp = make_space()
    seg = sp.allocate("x")
    with pytest.raises(KeyError):
        sp.write_at(seg.device_offset, b"x", "mystery_write")


def test_catalog_round_trip_and_epoch_pick():
    sp = make_space()
    write_catalog(sp, 0, 3, {"a": 1})
    write_catalog(sp, 1, 4, {"a": 2})
    epoch, payload, slot = read_best_catalog(sp)
    assert (epoch, payload, slot) == (4, {"a": 2}, 1)


def test_corrupt_catalog_copy_falls_back_to_the_other():
    sp = make_space()
    write_catalog(sp, 0, 3, {"a": 1})
    write_catalog(sp, 1, 4, {"a": 2})
    sp.device.write(1 * SEGLEN + 40, b"\xff" * 8)  # corrupt newest copy in place
    epoch, payload, slot = read_best_catalog(sp)
    assert (epoch, payload, slot) == (3, {"a": 1}, 0)


def test_no_valid_catalog_returns_none():
    sp = make_space()
    assert read_best_catalog(sp) is None


def test_owned_data_bytes_excludes_reservation():
    sp = make_space()
    assert sp.owned_data_bytes() == 0
    sp.allocate("x")
    sp.allocate("y")
    assert sp.owned_data_bytes() == 2 * SEGLEN


def test_segment_length_bounds():
    with pytest.raises(ValueError):
        StorageSpace(RamDevice(1 << 20), 1024)
    with pytest.raises(ValueError):
        StorageSpace(RamDevice(SEGLEN * 2), SEGLEN)  # too few segments
