"""Append-only value logs with LSN stamping, tail buffers, and chunked flushing.

Entry wire format (little-endian):

    [u32 total_len][u64 lsn][u8 op|category][u16 key_len][key][value][u32 crc]

A u32 of 0xFFFFFFFF marks "rest of segment is padding, continue in the next
chained segment"; a u32 of 0 means unwritten tail.
"""

from __future__ import annotations

import struct
import zlib

from .errors import CorruptionError, InvariantViolation, StaleAddressError, StorageError

LOG_SMALL, LOG_MEDIUM, LOG_LARGE = 0, 1, 2
LOG_NAMES = {LOG_SMALL: "small", LOG_MEDIUM: "medium", LOG_LARGE: "large"}

OP_INSERT, OP_DELETE = 0, 1

_HEADER = struct.Struct("<IQBH")  # total_len, lsn, op|cat, key_len
ENTRY_OVERHEAD = _HEADER.size + 4  # + trailing crc32
PAD_MARKER = 0xFFFFFFFF
MAX_KEY_LEN = 4096


class LogEntry:
    __slots__ = ("lsn", "op_kind", "category", "key", "value")

    def __init__(self, lsn, op_kind, category, key, value):
        self.lsn = lsn
        self.op_kind = op_kind
        self.category = category  # small int: 0 small / 1 medium / 2 large
        self.key = key
        self.value = value

    @property
    def kv_bytes(self) -> int:
        return len(self.key) + len(self.value)

    def __repr__(self):
        return f"LogEntry(lsn={self.lsn}, op={self.op_kind}, key={self.key!r})"


class LogAddress:
    __slots__ = ("log_id", "device_offset", "entry_length")

    def __init__(self, log_id, device_offset, entry_length):
        self.log_id = log_id
        self.device_offset = device_offset
        self.entry_length = entry_length

    def __eq__(self, other):
        return (
            isinstance(other, LogAddress)
            and self.log_id == other.log_id
            and self.device_offset == other.device_offset
            and self.entry_length == other.entry_length
        )

    def __hash__(self):
        return hash((self.log_id, self.device_offset, self.entry_length))

    def __repr__(self):
        return f"LogAddress({LOG_NAMES[self.log_id]}, off={self.device_offset}, len={self.entry_length})"


def encode_entry(lsn, op_kind, category, key: bytes, value: bytes) -> bytes:
    if not 1 <= len(key) <= MAX_KEY_LEN:
        raise ValueError("key length out of range")
    body = _HEADER.pack(
        _HEADER.size + len(key) + len(value) + 4, lsn, (op_kind << 4) | category, len(key)
    )
    buf = body + key + value
    return buf + struct.pack("<I", zlib.crc32(buf))


def decode_entry(buf, off: int = 0):
    """Decode one entry at ``off``; returns (LogEntry, consumed_bytes).

    Raises CorruptionError on a torn or invalid record.
    """
    if off + _HEADER.size > len(buf):
        raise CorruptionError("truncated header")
    total_len, lsn, meta, key_len = _HEADER.unpack_from(buf, off)
    if total_len < _HEADER.size + key_len + 4 or off + total_len > len(buf):
        raise CorruptionError("bad record length")
    end = off + total_len
    (stored,) = struct.unpack_from("<I", buf, end - 4)
    if zlib.crc32(bytes(buf[off : end - 4])) != stored:
        raise CorruptionError("entry crc mismatch")
    key = bytes(buf[off + _HEADER.size : off + _HEADER.size + key_len])
    value = bytes(buf[off + _HEADER.size + key_len : end - 4])
    return LogEntry(lsn, meta >> 4, meta & 0x0F, key, value), total_len


class ValueLog:
    """One append-only log over a chain of segments, with a buffered tail.

    An entry is acknowledged once buffered (group commit); a chunk is written
    to the device when it fills or on explicit flush.
    """

    def __init__(self, space, owner_tag: str, log_id: int, chunk_size: int, on_extend=None):
        self.space = space
        self.owner_tag = owner_tag
        self.log_id = log_id
        self.chunk_size = chunk_size
        self.on_extend = on_extend  # callback(segment_id) when a segment is added
        self.segments: list[int] = []  # chain order
        self.tail_seg: int | None = None
        self.tail_off = 0  # next append offset within tail segment (incl. buffered)
        self._buf = bytearray()
        self._buf_base = 0  # offset within tail segment where the buffer begins
        self.last_lsn = 0
        self.durable_lsn = 0
        self._sealed = True
        self._pending_lsns: list[tuple[int, int]] = []  # (buffer_end_pos, lsn)
        self.total_appended_bytes = 0

    # -- geometry -----------------------------------------------------------

    def _seg_payload(self) -> int:
        return self.space.segment_length

    def tail_position(self):
        """(segment_id, offset) of the next append, including buffered bytes."""
        if self.tail_seg is None:
            return (None, 0)
        return (self.tail_seg, self.tail_off)

    def _extend(self):
        seg = self.space.allocate(self.owner_tag)
        self.segments.append(seg.segment_id)
        self.tail_seg = seg.segment_id
        self.tail_off = 0
        self._buf_base = 0
        self._sealed = False
        if self.on_extend:
            self.on_extend(seg.segment_id)

    # -- append / flush -----------------------------------------------------

    def append_entry(self, lsn, op_kind, category, key, value) -> LogAddress:
        return self.append_bytes(encode_entry(lsn, op_kind, category, key, value), lsn)

    def append_bytes(self, raw: bytes, lsn: int) -> LogAddress:
        if len(raw) + 4 > self._seg_payload():
            raise ValueError("entry exceeds segment payload")
        if self._sealed or self.tail_seg is None:
            self._flush_buffer()
            self._extend()
        if self.tail_off + len(raw) > self._seg_payload():
            # pad marker and zeroes to the segment end, then continue in a
            # fresh segment; the zero fill keeps stale bytes from a previous
            # use of the segment from ever decoding as entries
            remaining = self._seg_payload() - self.tail_off
            if remaining >= 4:
                self._buf += struct.pack("<I", PAD_MARKER) + b"\x00" * (remaining - 4)
            else:
                self._buf += b"\x00" * remaining
            self._flush_buffer()
            self._extend()
        addr = LogAddress(self.log_id, self.tail_seg * self.space.segment_length + self.tail_off, len(raw))
        self._buf += raw
        self.tail_off += len(raw)
        self.total_appended_bytes += len(raw)
        if lsn:
            self.last_lsn = max(self.last_lsn, lsn)
            self._pending_lsns.append((self.tail_off, lsn))
        while len(self._buf) >= self.chunk_size:
            self._write_chunk(self.chunk_size)
        return addr

    def _write_chunk(self, n: int):
        chunk = bytes(self._buf[:n])
        off = self.tail_seg * self.space.segment_length + self._buf_base
        self.space.write_at(off, chunk, "log_append")
        self.space.sync()
        del self._buf[:n]
        self._buf_base += n
        self._advance_durable()

    def _advance_durable(self):
        durable_end = self._buf_base
        keep = []
        for pos, lsn in self._pending_lsns:
            if pos <= durable_end:
                self.durable_lsn = max(self.durable_lsn, lsn)
            else:
                keep.append((pos, lsn))
        self._pending_lsns = keep

    def _flush_buffer(self):
        if self._buf:
            self._write_chunk(len(self._buf))

    def flush(self) -> int:
        """Write out all buffered chunks; returns the durable LSN watermark."""
        self._flush_buffer()
        return self.durable_lsn

    def seal(self):
        """Close the tail segment: the next append starts a fresh segment."""
        self._flush_buffer()
        if self.tail_seg is not None and not self._sealed:
            remaining = self._seg_payload() - self.tail_off
            if remaining >= 4:
                self.space.write_at(
                    self.tail_seg * self.space.segment_length + self.tail_off,
                    struct.pack("<I", PAD_MARKER),
                    "log_append",
                )
                self.space.sync()
        self._sealed = True
        self.tail_seg = None
        self.tail_off = 0
        self._buf_base = 0

    # -- read ---------------------------------------------------------------

    def _address_valid(self, addr: LogAddress) -> bool:
        seg = self.space.segment_of(addr.device_offset)
        owner = self.space.owner_of(seg)
        if owner is None:
            return False
        if self.log_id == LOG_MEDIUM:
            # medium segments are retagged to the level they are attached to
            return owner.startswith(self.owner_tag.split("/")[0] + "/") and "medium" in owner
        return owner == self.owner_tag

    def read_entry(self, addr: LogAddress, purpose: str = "lookup_read", expected_lsn=None) -> LogEntry:
        """Read one entry; ``expected_lsn`` pins the read to a specific entry.

        A reference whose segment was reclaimed (and possibly reused) fails
        either the ownership check, the checksum, or the LSN comparison, and
        surfaces as a stale address.
        """
        if addr.log_id != self.log_id:
            raise ValueError("address belongs to a different log")
        if self.tail_seg is not None and self.space.segment_of(addr.device_offset) == self.tail_seg:
            # past the written extent of the tail segment: the bytes there are
            # leftovers from a previous use of the segment, never this entry
            rel_end = addr.device_offset + addr.entry_length - self.tail_seg * self.space.segment_length
            if rel_end > self.tail_off:
                raise StaleAddressError(f"{addr} lies beyond the written tail")
        # entries ending past the flushed prefix of the tail segment live
        # (wholly or partly) in the buffer; chunked flushing does not align to
        # entry boundaries, so a straddling entry must be stitched together
        if self.tail_seg is not None and self.space.segment_of(addr.device_offset) == self.tail_seg:
            tail_base = self.tail_seg * self.space.segment_length + self._buf_base
            end = addr.device_offset + addr.entry_length
            if end > tail_base:
                if addr.device_offset >= tail_base:
                    raw = bytes(self._buf[addr.device_offset - tail_base : end - tail_base])
                else:
                    head = self.space.read_at(addr.device_offset, tail_base - addr.device_offset, purpose)
                    raw = head + bytes(self._buf[: end - tail_base])
                try:
                    entry, _ = decode_entry(raw, 0)
                except CorruptionError:
                    if expected_lsn is not None:
                        raise StaleAddressError(f"{addr} no longer holds a decodable entry") from None
                    raise
                if expected_lsn is not None and entry.lsn != expected_lsn:
                    raise StaleAddressError(f"{addr} was reused (lsn {entry.lsn} != {expected_lsn})")
                return entry
        if not self._address_valid(addr):
            raise StaleAddressError(f"{addr} points into a reclaimed segment")
        raw = self.space.read_at(addr.device_offset, addr.entry_length, purpose)
        try:
            entry, _ = decode_entry(raw, 0)
        except CorruptionError:
            if expected_lsn is not None:
                raise StaleAddressError(f"{addr} no longer holds a decodable entry") from None
            raise
        if expected_lsn is not None and entry.lsn != expected_lsn:
            raise StaleAddressError(f"{addr} was reused (lsn {entry.lsn} != {expected_lsn})")
        return entry

    # -- iteration ----------------------------------------------------------

    def iterate(self, from_position=None, purpose: str = "recovery_read"):
        """Yield (LogAddress, LogEntry) in append order from the durable image.

        Stops cleanly at the first torn/unwritten record.  ``from_position`` is
        a (segment_id, offset) pair; when the segment is no longer in the
        chain, iteration starts at the head of the chain.
        """
        if not self.segments:
            return
        start_idx, start_off = 0, 0
        if from_position is not None and from_position[0] is not None:
            seg_id, off = from_position
            if seg_id in self.segments:
                start_idx = self.segments.index(seg_id)
                start_off = off
        seglen = self.space.segment_length
        for idx in range(start_idx, len(self.segments)):
            seg = self.segments[idx]
            raw = self.space.read_at(seg * seglen, seglen, purpose)
            off = start_off if idx == start_idx else 0
            while off + 4 <= seglen:
                (marker,) = struct.unpack_from("<I", raw, off)
                if marker == 0:
                    return  # unwritten tail
                if marker == PAD_MARKER:
                    break  # rest of segment is padding
                try:
                    entry, consumed = decode_entry(raw, off)
                except CorruptionError:
                    return  # torn tail terminates the stream
                yield LogAddress(self.log_id, seg * seglen + off, consumed), entry
                off += consumed

    # -- reclamation --------------------------------------------------------

    def reclaimable_before(self, watermark) -> list[int]:
        """Segments wholly before the (segment, offset) watermark."""
        seg_id, _off = watermark
        if seg_id is None:
            # watermark at the very tail with no open segment: all sealed
            # segments are reclaimable
            return [s for s in self.segments if s != self.tail_seg]
        if seg_id not in self.segments:
            return []
        idx = self.segments.index(seg_id)
        return self.segments[:idx]

    def drop_segments(self, seg_ids):
        for s in seg_ids:
            if s == self.tail_seg:
                raise InvariantViolation("cannot drop the active tail segment")
            self.segments.remove(s)

    def state(self) -> dict:
        if self._buf:
            raise StorageError("log state captured with unflushed data")
        return {
            "segments": list(self.segments),
            "tail_seg": self.tail_seg,
            "tail_off": self.tail_off,
            "sealed": self._sealed,
            "last_lsn": self.last_lsn,
        }

    def restore(self, st: dict):
        self.segments = list(st["segments"])
        self.tail_seg = st["tail_seg"]
        self.tail_off = st["tail_off"]
        self._buf_base = self.tail_off
        self._sealed = st["sealed"]
        self.last_lsn = st["last_lsn"]
        self.durable_lsn = st["last_lsn"]
        self._buf = bytearray()
        self._pending_lsns = []
