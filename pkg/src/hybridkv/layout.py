"""Single-file space manager: devices, segment allocator, catalog persistence.

The device is addressed as a flat byte space carved into fixed-length
segments.  Segment 0 and 1 hold the two catalog copies, segments 2 and 3 are
reserved for the redo log, everything else is allocatable.  Every byte of
device traffic in the system flows through ``StorageSpace.read_at`` /
``write_at``.
"""

from __future__ import annotations

import heapq
import json
import os
import struct

from .errors import (
    InvariantViolation,
    OutOfSpaceError,
    StorageError,
    StoreError,
)
from .metrics import TrafficCounters

CATALOG_MAGIC = b"PLAXDESK"
CATALOG_VERSION = 1
MIN_SEGMENT_LENGTH = 64 * 1024
MAX_SEGMENT_LENGTH = 8 * 1024 * 1024
DEFAULT_SEGMENT_LENGTH = 2 * 1024 * 1024

CATALOG_SEGMENTS = 2
REDO_SEGMENTS = 2
FIRST_DATA_SEGMENT = CATALOG_SEGMENTS + REDO_SEGMENTS

# magic, version u32, segment_length u32, epoch u64, payload_len u32
_CATALOG_HEADER = struct.Struct("<8sIIQI")

# ---------------------------------------------------------------------------
# CRC64 (ECMA-182, reflected), used for catalog and redo records only.

_CRC64_POLY = 0xC96C5795D7870F42
_CRC64_TABLE = []
for _i in range(256):
    _crc = _i
    for _ in range(8):
        _crc = (_crc >> 1) ^ (_CRC64_POLY if _crc & 1 else 0)
    _CRC64_TABLE.append(_crc)


def crc64(data: bytes, crc: int = 0) -> int:
    crc ^= 0xFFFFFFFFFFFFFFFF
    table = _CRC64_TABLE
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# Devices


class RamDevice:
    """In-memory byte device with explicit capacity; used by tests and benches."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._buf = bytearray(capacity)

    def read(self, offset: int, length: int) -> bytes:
        if offset < 0 or offset + length > self.capacity:
            raise StorageError("read out of device bounds")
        return bytes(self._buf[offset : offset + length])

    def write(self, offset: int, data: bytes):
        if offset < 0 or offset + len(data) > self.capacity:
            raise StorageError("write out of device bounds")
        self._buf[offset : offset + len(data)] = data

    def sync(self):
        pass

    def close(self):
        pass


class FileDevice:
    """Regular-file-backed device; raw block devices are a pass-through."""

    def __init__(self, path: str, capacity: int | None = None):
        create = not os.path.exists(path)
        self._fd = os.open(path, os.O_RDWR | os.O_CREAT, 0o644)
        size = os.fstat(self._fd).st_size
        if capacity is None:
            if size == 0:
                os.close(self._fd)
                raise StorageError("capacity required for a fresh file")
            capacity = size
        elif size < capacity:
            os.ftruncate(self._fd, capacity)
        self.capacity = capacity
        self.path = path
        self._created = create

    def read(self, offset: int, length: int) -> bytes:
        data = os.pread(self._fd, length, offset)
        if len(data) < length:
            # reads past what has been written come back zero-filled
            data = data + b"\x00" * (length - len(data))
        return data

    def write(self, offset: int, data: bytes):
        if offset < 0 or offset + len(data) > self.capacity:
            raise StorageError("write out of device bounds")
        written = os.pwrite(self._fd, data, offset)
        if written != len(data):
            raise StorageError("short write")

    def sync(self):
        os.fsync(self._fd)

    def close(self):
        os.close(self._fd)


# ---------------------------------------------------------------------------


class Segment:
    __slots__ = ("segment_id", "device_offset", "length", "owner")

    def __init__(self, segment_id: int, device_offset: int, length: int, owner: str):
        self.segment_id = segment_id
        self.device_offset = device_offset
        self.length = length
        self.owner = owner

    def __repr__(self):
        return f"Segment({self.segment_id}, owner={self.owner!r})"


class StorageSpace:
    """Segment allocator plus the byte-counting seam for all device traffic."""

    def __init__(self, device, segment_length: int, counters: TrafficCounters | None = None):
        if segment_length < MIN_SEGMENT_LENGTH or segment_length > MAX_SEGMENT_LENGTH:
            raise ValueError("segment_length out of supported range")
        n = device.capacity // segment_length
        if n < FIRST_DATA_SEGMENT + 1:
            raise ValueError("device too small for the reserved layout")
        self.device = device
        self.segment_length = segment_length
        self.num_segments = n
        self.counters = counters or TrafficCounters()
        self._owners: list[str | None] = [None] * n
        self._owners[0] = self._owners[1] = "catalog"
        self._owners[2] = self._owners[3] = "redo"
        self._free_heap = list(range(FIRST_DATA_SEGMENT, n))
        heapq.heapify(self._free_heap)

    # -- allocator ----------------------------------------------------------

    def allocate(self, owner: str) -> Segment:
        if not owner or owner in ("free",):
            raise ValueError("owner tag required")
        while self._free_heap:
            seg_id = heapq.heappop(self._free_heap)
            if self._owners[seg_id] is None:
                self._owners[seg_id] = owner
                return Segment(seg_id, seg_id * self.segment_length, self.segment_length, owner)
        raise OutOfSpaceError("device full: no free segments")

    def mark_allocated(self, seg_id: int, owner: str):
        """Used by recovery to rebuild allocator state (overwrites the owner)."""
        self._owners[seg_id] = owner

    def free(self, seg_id: int):
        if seg_id < FIRST_DATA_SEGMENT:
            raise InvariantViolation("cannot free reserved segments")
        if self._owners[seg_id] is None:
            raise InvariantViolation(f"double free of segment {seg_id}")
        self._owners[seg_id] = None
        heapq.heappush(self._free_heap, seg_id)

    def free_if_owned(self, seg_id: int):
        """Idempotent free, for redo replay and recovery reconciliation."""
        if seg_id >= FIRST_DATA_SEGMENT and self._owners[seg_id] is not None:
            self.free(seg_id)

    def retag(self, seg_id: int, owner: str):
        if self._owners[seg_id] is None:
            raise InvariantViolation(f"retag of free segment {seg_id}")
        self._owners[seg_id] = owner

    def owner_of(self, seg_id: int) -> str | None:
        return self._owners[seg_id]

    def segment_of(self, device_offset: int) -> int:
        return device_offset // self.segment_length

    def owned_segments(self) -> dict:
        return {i: o for i, o in enumerate(self._owners) if o is not None}

    def free_segment_count(self) -> int:
        return sum(1 for o in self._owners if o is None)

    def owned_data_bytes(self) -> int:
        """Bytes in owned segments, excluding the catalog/redo reservation."""
        owned = sum(
            1 for i in range(FIRST_DATA_SEGMENT, self.num_segments) if self._owners[i] is not None
        )
        return owned * self.segment_length

    # -- counted I/O --------------------------------------------------------

    def _check_range(self, offset: int, length: int):
        if length < 0:
            raise StorageError("negative length")
        seg = offset // self.segment_length
        if seg >= self.num_segments or offset < 0:
            raise StorageError("offset out of bounds")
        if (offset + length - 1) // self.segment_length != seg:
            raise StorageError("I/O crosses a segment boundary")
        if self._owners[seg] is None:
            raise StorageError(f"I/O into free segment {seg}")

    def read_at(self, offset: int, length: int, purpose: str) -> bytes:
        if length == 0:
            return b""
        self._check_range(offset, length)
        data = self.device.read(offset, length)
        self.counters.add(purpose, length)
        return data

    def write_at(self, offset: int, data: bytes, purpose: str):
        if len(data) == 0:
            return
        self._check_range(offset, len(data))
        self.device.write(offset, data)
        self.counters.add(purpose, len(data))

    def sync(self):
        self.device.sync()


# ---------------------------------------------------------------------------
# Catalog persistence: two copies written alternately, epoch+CRC picks winner.


def write_catalog(space: StorageSpace, slot: int, epoch: int, payload: dict):
    if slot not in (0, 1):
        raise ValueError("catalog slot must be 0 or 1")
    body = json.dumps(payload, separators=(",", ":")).encode()
    header = _CATALOG_HEADER.pack(
        CATALOG_MAGIC, CATALOG_VERSION, space.segment_length, epoch, len(body)
    )
    buf = header + body
    buf += struct.pack("<Q", crc64(buf))
    if len(buf) > space.segment_length:
        raise StorageError("catalog does not fit in one segment")
    space.write_at(slot * space.segment_length, buf, "meta_write")
    space.sync()


def _parse_catalog(raw: bytes):
    if len(raw) < _CATALOG_HEADER.size + 8:
        return None
    magic, version, seglen, epoch, plen = _CATALOG_HEADER.unpack_from(raw, 0)
    if magic != CATALOG_MAGIC or version != CATALOG_VERSION:
        return None
    end = _CATALOG_HEADER.size + plen
    if end + 8 > len(raw):
        return None
    (stored_crc,) = struct.unpack_from("<Q", raw, end)
    if crc64(raw[:end]) != stored_crc:
        return None
    try:
        payload = json.loads(raw[_CATALOG_HEADER.size : end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    return epoch, seglen, payload


def bootstrap_segment_length(device) -> int | None:
    """Peek the fixed catalog header to learn the store's segment length."""
    raw = device.read(0, _CATALOG_HEADER.size)
    if len(raw) < _CATALOG_HEADER.size:
        return None
    magic, version, seglen, _, _ = _CATALOG_HEADER.unpack_from(raw, 0)
    if magic != CATALOG_MAGIC or version != CATALOG_VERSION:
        return None
    return seglen


def read_best_catalog(space: StorageSpace):
    """Return (epoch, payload, slot) of the highest valid-checksum copy."""
    best = None
    for slot in (0, 1):
        raw = space.read_at(slot * space.segment_length, space.segment_length, "recovery_read")
        parsed = _parse_catalog(raw)
        if parsed is None:
            continue
        epoch, seglen, payload = parsed
        if seglen != space.segment_length:
            raise StoreError("catalog segment length disagrees with space")
        if best is None or epoch > best[0]:
            best = (epoch, payload, slot)
    return best
