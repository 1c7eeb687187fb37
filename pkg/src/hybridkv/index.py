"""Per-level B+-tree with dynamically slotted, variable-record leaves.

Leaves are fixed-size pages with a slot array growing from the head and an
append-only data segment growing from the tail.  Each 4-byte slot cell keeps
the KV category and in-place/in-log flag in its highest three bits and the
intra-leaf payload offset in the low bits.  Entries placed in a log are
represented by a 12-byte key prefix plus the log address; the log is
dereferenced only when prefixes compare equal.

Levels >= 1 are immutable between compactions and built bottom-up from a
sorted stream; node locations are device offsets.  Child pointers carry a
"leaf" tag in their lowest bit (all node offsets are 16-byte aligned).
"""

from __future__ import annotations

import struct

from .errors import InvariantViolation, StaleAddressError
from .logs import LogAddress

PREFIX_LEN = 12

CAT_SMALL, CAT_MEDIUM, CAT_LARGE, CAT_TOMB = 0, 1, 2, 3
FLAG_INLOG = 0b100  # or'ed with the category in the cell's high bits

NODE_LEAF, NODE_INDEX = 1, 2

_NODE_HEADER = struct.Struct("<BBHHHQ")  # type, flags, count, data_start, garbage, next_off
HEADER_SIZE = _NODE_HEADER.size  # 16

_CELL = struct.Struct("<I")
_INPLACE = struct.Struct("<HH")  # key_len, val_len
# the lsn pins the reference to one specific log entry: a segment reclaimed
# and reused can never alias an old reference
_REF = struct.Struct("<12sBQIQ")  # prefix, log_id, device_offset, entry_length, lsn
REF_SIZE = _REF.size  # 33

_LEAF_TAG = 1  # lowest bit of a child pointer marks a leaf


def key_prefix(key: bytes) -> bytes:
    return key[:PREFIX_LEN].ljust(PREFIX_LEN, b"\x00")


def encode_inplace(key: bytes, value: bytes) -> bytes:
    return _INPLACE.pack(len(key), len(value)) + key + value


def decode_inplace(payload: bytes):
    klen, vlen = _INPLACE.unpack_from(payload, 0)
    return payload[4 : 4 + klen], payload[4 + klen : 4 + klen + vlen]


def inplace_key(payload: bytes) -> bytes:
    (klen,) = struct.unpack_from("<H", payload, 0)
    return payload[4 : 4 + klen]


def encode_ref(prefix: bytes, addr: LogAddress, lsn: int) -> bytes:
    return _REF.pack(prefix, addr.log_id, addr.device_offset, addr.entry_length, lsn)


def decode_ref(payload: bytes):
    prefix, log_id, off, length, lsn = _REF.unpack_from(payload, 0)
    return prefix, LogAddress(log_id, off, length), lsn


def payload_prefix(flags: int, payload: bytes) -> bytes:
    if flags & FLAG_INLOG:
        return payload[:PREFIX_LEN]
    return key_prefix(inplace_key(payload))


def payload_kv_bytes(flags: int, payload: bytes) -> int:
    """Resolved key+value size of an entry, from its on-leaf representation."""
    if flags & FLAG_INLOG:
        _, addr, _lsn = decode_ref(payload)
        return addr.entry_length - 19  # entry framing overhead
    klen, vlen = _INPLACE.unpack_from(payload, 0)
    return klen + vlen


class Leaf:
    """Mutable view of one leaf page."""

    def __init__(self, size: int):
        if size > 65536:
            raise ValueError("leaf size exceeds u16 offset fields")
        self.size = size
        self.buf = bytearray(size)
        self.slots: list[int] = []  # raw 4-byte cells in key order
        self.data_start = size
        self.garbage = 0
        self.next_off = 0

    # -- construction -------------------------------------------------------

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Leaf":
        leaf = cls(len(raw))
        leaf.buf = bytearray(raw)
        typ, _flags, count, data_start, garbage, next_off = _NODE_HEADER.unpack_from(raw, 0)
        if typ != NODE_LEAF:
            raise InvariantViolation("not a leaf page")
        leaf.slots = list(struct.unpack_from(f"<{count}I", raw, HEADER_SIZE)) if count else []
        leaf.data_start = data_start
        leaf.garbage = garbage
        leaf.next_off = next_off
        return leaf

    def to_bytes(self) -> bytes:
        _NODE_HEADER.pack_into(
            self.buf, 0, NODE_LEAF, 0, len(self.slots), self.data_start, self.garbage, self.next_off
        )
        if self.slots:
            struct.pack_into(f"<{len(self.slots)}I", self.buf, HEADER_SIZE, *self.slots)
        # zero any dead slot-array bytes so pages are deterministic
        tail = HEADER_SIZE + 4 * len(self.slots)
        if tail < self.data_start:
            pass  # data bytes between slot array and data segment stay as-is
        return bytes(self.buf)

    # -- cell helpers -------------------------------------------------------

    @property
    def count(self) -> int:
        return len(self.slots)

    def flags_of(self, i: int) -> int:
        return self.slots[i] >> 29

    def _off_of(self, i: int) -> int:
        return self.slots[i] & 0x1FFFFFFF

    def payload_of(self, i: int) -> bytes:
        off = self._off_of(i)
        flags = self.flags_of(i)
        if flags & FLAG_INLOG:
            return bytes(self.buf[off : off + REF_SIZE])
        klen, vlen = _INPLACE.unpack_from(self.buf, off)
        return bytes(self.buf[off : off + 4 + klen + vlen])

    def prefix_of(self, i: int) -> bytes:
        off = self._off_of(i)
        if self.flags_of(i) & FLAG_INLOG:
            return bytes(self.buf[off : off + PREFIX_LEN])
        klen, _ = _INPLACE.unpack_from(self.buf, off)
        k = bytes(self.buf[off + 4 : off + 4 + min(klen, PREFIX_LEN)])
        return k.ljust(PREFIX_LEN, b"\x00")

    def key_of(self, i: int, resolver=None) -> bytes | None:
        """Full key of slot i; dereferences the log for in-log entries.

        Returns None when the log address turned stale (entry is dead).
        """
        off = self._off_of(i)
        if not (self.flags_of(i) & FLAG_INLOG):
            klen, _ = _INPLACE.unpack_from(self.buf, off)
            return bytes(self.buf[off + 4 : off + 4 + klen])
        if resolver is None:
            return None
        _, addr, lsn = decode_ref(self.payload_of(i))
        try:
            return resolver(addr, lsn).key
        except StaleAddressError:
            return None

    # -- space accounting ---------------------------------------------------

    def free_space(self) -> int:
        return self.data_start - (HEADER_SIZE + 4 * len(self.slots))

    def fits(self, payload_len: int) -> bool:
        return self.free_space() >= payload_len + 4

    def _append_payload(self, payload: bytes) -> int:
        off = self.data_start - len(payload)
        self.buf[off : self.data_start] = payload
        self.data_start = off
        return off

    def compact_in_leaf(self):
        """Rewrite the data segment keeping only live payloads."""
        live = [(cell >> 29, self.payload_of(i)) for i, cell in enumerate(self.slots)]
        self.data_start = self.size
        self.slots = []
        self.garbage = 0
        for flags, payload in live:
            off = self._append_payload(payload)
            self.slots.append((flags << 29) | off)

    # -- search / mutate ----------------------------------------------------

    def _lower_bound(self, prefix: bytes) -> int:
        lo, hi = 0, len(self.slots)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.prefix_of(mid) < prefix:
                lo = mid + 1
            else:
                hi = mid
        return lo

    def find(self, key: bytes, resolver=None):
        """(index, found): binary search by prefix, full-key compare on ties."""
        prefix = key_prefix(key)
        i = self._lower_bound(prefix)
        while i < len(self.slots) and self.prefix_of(i) == prefix:
            k = self.key_of(i, resolver)
            if k == key:
                return i, True
            if k is not None and k > key:
                return i, False
            i += 1
        return i, False

    def search(self, key: bytes, resolver=None):
        """(flags, payload) for key, or None."""
        i, found = self.find(key, resolver)
        if not found:
            return None
        return self.flags_of(i), self.payload_of(i)

    def insert(self, key: bytes, payload: bytes, flags: int, resolver=None) -> bool:
        """Insert or update; returns False when the leaf needs a split."""
        if not key:
            raise ValueError("key must be nonempty")
        i, found = self.find(key, resolver)
        need = len(payload) + (0 if found else 4)
        if self.data_start - (HEADER_SIZE + 4 * (len(self.slots) + (0 if found else 1))) < len(payload):
            if self.garbage >= len(payload):
                self.compact_in_leaf()
                i, found = self.find(key, resolver)
            if self.data_start - (HEADER_SIZE + 4 * (len(self.slots) + (0 if found else 1))) < len(payload):
                return False
        off = self._append_payload(payload)
        cell = (flags << 29) | off
        if found:
            old = self.payload_of(i)  # old payload becomes leaf-internal garbage
            self.garbage += len(old)
            self.slots[i] = cell
        else:
            self.slots.insert(i, cell)
        return True

    def append_sorted(self, payload: bytes, flags: int) -> bool:
        """Fast path for bulk build: caller guarantees key order."""
        if not self.fits(len(payload)):
            return False
        off = self._append_payload(payload)
        self.slots.append((flags << 29) | off)
        return True

    def items(self):
        for i in range(len(self.slots)):
            yield self.flags_of(i), self.payload_of(i)


# ---------------------------------------------------------------------------
# Index nodes


def _index_capacity(node_size: int) -> int:
    # header + (c+1) u64 children + c 12-byte pivots <= node_size
    return (node_size - HEADER_SIZE - 8) // (8 + PREFIX_LEN)


def encode_index_node(children: list[int], pivots: list[bytes], node_size: int) -> bytes:
    buf = bytearray(node_size)
    _NODE_HEADER.pack_into(buf, 0, NODE_INDEX, 0, len(pivots), 0, 0, 0)
    struct.pack_into(f"<{len(children)}Q", buf, HEADER_SIZE, *children)
    base = HEADER_SIZE + 8 * len(children)
    for j, p in enumerate(pivots):
        buf[base + j * PREFIX_LEN : base + (j + 1) * PREFIX_LEN] = p
    return bytes(buf)


def decode_index_node(raw: bytes):
    typ, _f, count, _ds, _g, _n = _NODE_HEADER.unpack_from(raw, 0)
    if typ != NODE_INDEX:
        raise InvariantViolation("not an index node")
    children = list(struct.unpack_from(f"<{count + 1}Q", raw, HEADER_SIZE))
    base = HEADER_SIZE + 8 * (count + 1)
    pivots = [bytes(raw[base + j * PREFIX_LEN : base + (j + 1) * PREFIX_LEN]) for j in range(count)]
    return children, pivots


# ---------------------------------------------------------------------------
# Level writer: packs nodes into level-owned segments


class LevelWriter:
    """Allocates level segments and lays out nodes sequentially within them."""

    def __init__(self, space, owner_tag: str, leaf_size: int, node_size: int):
        self.space = space
        self.owner_tag = owner_tag
        self.leaf_size = leaf_size
        self.node_size = node_size
        self.segments: list[int] = []
        self._cur_end = 0
        self._cur_off = 0

    def _place(self, nbytes: int) -> int:
        if self._cur_off + nbytes > self._cur_end:
            seg = self.space.allocate(self.owner_tag)
            self.segments.append(seg.segment_id)
            self._cur_off = seg.device_offset
            self._cur_end = seg.device_offset + seg.length
        off = self._cur_off
        self._cur_off += nbytes
        return off

    def write_node(self, raw: bytes) -> int:
        off = self._place(len(raw))
        self.space.write_at(off, raw, "compaction_write")
        return off


class LevelBuilder:
    """Bottom-up bulk construction from a strictly key-sorted entry stream."""

    def __init__(self, space, owner_tag: str, leaf_size: int, node_size: int):
        self.writer = LevelWriter(space, owner_tag, leaf_size, node_size)
        self.leaf_size = leaf_size
        self.node_size = node_size
        self._leaf = Leaf(leaf_size)
        self._leaf_firsts: list[bytes] = []  # first prefix per closed leaf
        self._leaf_offs: list[int] = []
        self._pending: Leaf | None = None  # closed leaf awaiting its next_off
        self._pending_off = 0
        self._cur_first: bytes | None = None
        self._last_prefix: bytes | None = None
        self.count = 0
        self.stored_bytes = 0
        self.resolved_bytes = 0

    def add(self, prefix: bytes, flags: int, payload: bytes):
        if self._last_prefix is not None and prefix < self._last_prefix:
            raise InvariantViolation("bulk build input not sorted")
        self._last_prefix = prefix
        if not self._leaf.append_sorted(payload, flags):
            self._close_leaf()
            if not self._leaf.append_sorted(payload, flags):
                raise InvariantViolation("payload larger than an empty leaf")
        if self._cur_first is None:
            self._cur_first = prefix
        self.count += 1
        self.stored_bytes += 4 + len(payload)
        self.resolved_bytes += payload_kv_bytes(flags, payload)

    def _close_leaf(self):
        off = self.writer._place(self.leaf_size)
        if self._pending is not None:
            self._pending.next_off = off
            self.writer.space.write_at(self._pending_off, self._pending.to_bytes(), "compaction_write")
        self._pending = self._leaf
        self._pending_off = off
        self._leaf_firsts.append(self._cur_first)
        self._leaf_offs.append(off)
        self._leaf = Leaf(self.leaf_size)
        self._cur_first = None

    def finish(self):
        """Returns (root_off_tagged, first_leaf_off_tagged, segments, count, stored, resolved).

        Offsets carry the leaf tag bit.  Empty input yields root_off 0.
        """
        if self._leaf.count:
            self._close_leaf()
        if self._pending is not None:
            self.writer.space.write_at(self._pending_off, self._pending.to_bytes(), "compaction_write")
            self._pending = None
        if not self._leaf_offs:
            return 0, 0, self.writer.segments, 0, 0, 0
        children = [(off | _LEAF_TAG) for off in self._leaf_offs]
        firsts = self._leaf_firsts
        cap = _index_capacity(self.node_size)
        while len(children) > 1:
            next_children, next_firsts = [], []
            for i in range(0, len(children), cap):
                group = children[i : i + cap]
                pivots = firsts[i + 1 : i + len(group)]
                raw = encode_index_node(group, pivots, self.node_size)
                # node offsets are sums of page sizes, so the tag bit is 0
                next_children.append(self.writer.write_node(raw))
                next_firsts.append(firsts[i])
            children, firsts = next_children, next_firsts
        root = children[0]
        first_leaf = self._leaf_offs[0] | _LEAF_TAG
        return (
            root,
            first_leaf,
            self.writer.segments,
            self.count,
            self.stored_bytes,
            self.resolved_bytes,
        )


# ---------------------------------------------------------------------------
# Reading a built level


def load_leaf(space, tagged_off: int, leaf_size: int, purpose: str) -> Leaf:
    raw = space.read_at(tagged_off & ~_LEAF_TAG, leaf_size, purpose)
    return Leaf.from_bytes(raw)


def is_leaf_ptr(tagged_off: int) -> bool:
    return bool(tagged_off & _LEAF_TAG)


def descend_to_leaf(space, root: int, prefix: bytes, leaf_size: int, node_size: int, purpose: str) -> int:
    """Walk index nodes to the leftmost leaf that may contain ``prefix``."""
    node = root
    while not is_leaf_ptr(node):
        raw = space.read_at(node, node_size, purpose)
        children, pivots = decode_index_node(raw)
        lo, hi = 0, len(pivots)
        while lo < hi:  # leftmost pivot > prefix would overshoot; use bisect_left
            mid = (lo + hi) // 2
            if pivots[mid] < prefix:
                lo = mid + 1
            else:
                hi = mid
        # child lo holds keys < pivots[lo]; equal-prefix runs may start there
        node = children[lo]
    return node


class LevelIndex:
    """Read-side view of an immutable on-device level."""

    def __init__(self, space, root: int, first_leaf: int, leaf_size: int, node_size: int):
        self.space = space
        self.root = root
        self.first_leaf = first_leaf
        self.leaf_size = leaf_size
        self.node_size = node_size

    def search(self, key: bytes, resolver=None, purpose: str = "lookup_read"):
        """(flags, payload) or None; scans sibling leaves across prefix ties."""
        if not self.root:
            return None
        prefix = key_prefix(key)
        tagged = descend_to_leaf(self.space, self.root, prefix, self.leaf_size, self.node_size, purpose)
        while tagged:
            leaf = load_leaf(self.space, tagged, self.leaf_size, purpose)
            if leaf.count and leaf.prefix_of(0) > prefix:
                return None
            hit = leaf.search(key, resolver)
            if hit is not None:
                return hit
            if leaf.count and leaf.prefix_of(leaf.count - 1) > prefix:
                return None
            tagged = leaf.next_off  # prefix run may spill into the sibling
        return None

    def iter_leaves(self, purpose: str):
        tagged = self.first_leaf
        while tagged:
            leaf = load_leaf(self.space, tagged, self.leaf_size, purpose)
            yield leaf
            tagged = leaf.next_off

    def iter_items(self, purpose: str = "compaction_read"):
        """(prefix, flags, payload) across the whole level, in key order."""
        if not self.root:
            return
        for leaf in self.iter_leaves(purpose):
            for i in range(leaf.count):
                yield leaf.prefix_of(i), leaf.flags_of(i), leaf.payload_of(i)

    def scan_from(self, start_key: bytes, resolver, purpose: str = "lookup_read"):
        """(key, flags, payload) with key >= start_key, resolving full keys.

        Entries whose log address went stale are skipped (they are shadowed by
        construction of the reclamation protocol).
        """
        if not self.root:
            return
        prefix = key_prefix(start_key)
        tagged = descend_to_leaf(self.space, self.root, prefix, self.leaf_size, self.node_size, purpose)
        first = True
        while tagged:
            leaf = load_leaf(self.space, tagged, self.leaf_size, purpose)
            # equal-prefix entries with full key < start_key are filtered by
            # the key comparison below
            start = leaf._lower_bound(prefix) if first else 0
            for i in range(start, leaf.count):
                k = leaf.key_of(i, resolver)
                if k is None:
                    continue  # stale => dead entry
                if k < start_key:
                    continue
                yield k, leaf.flags_of(i), leaf.payload_of(i)
            first = False
            tagged = leaf.next_off
