"""Leveled compaction: whole-level merge-sort into the next level.

Medium entries travel inside transient-log segments attached to the levels
they belong to; when a compaction's destination reaches the configured merge
depth, their values are fetched incrementally (fixed read units) and
materialized as plain in-place entries, after which the attached segments are
freed wholesale.
"""

from __future__ import annotations

import heapq
from itertools import chain

from .errors import OutOfSpaceError, StaleAddressError
from .index import (
    CAT_LARGE,
    CAT_MEDIUM,
    CAT_TOMB,
    FLAG_INLOG,
    LevelBuilder,
    decode_ref,
    encode_inplace,
    encode_ref,
    inplace_key,
    key_prefix,
)
from .logs import LogAddress, LogEntry, OP_INSERT, decode_entry, encode_entry


class MediumMergeReader:
    """Incremental fetches from attached transient-log segments.

    Keeps one read-unit window per segment: key-sorted segments are consumed
    with one fetch per unit, arrival-ordered segments pay a fetch per entry.
    """

    def __init__(self, store, read_unit: int):
        self.store = store
        self.space = store.space
        self.unit = read_unit
        self.windows: dict[int, tuple[int, bytes]] = {}  # seg_id -> (device_start, data)

    def _fetch(self, seg_id: int, device_off: int) -> tuple[int, bytes]:
        seglen = self.space.segment_length
        base = seg_id * seglen
        start = base + ((device_off - base) // self.unit) * self.unit
        n = min(self.unit, base + seglen - start)
        data = self.space.read_at(start, n, "compaction_read")
        self.store.extra["medium_merge_read_bytes"] += n
        win = (start, data)
        self.windows[seg_id] = win
        return win

    def read(self, addr: LogAddress) -> LogEntry:
        seg_id = self.space.segment_of(addr.device_offset)
        out = bytearray()
        pos = addr.device_offset
        end = addr.device_offset + addr.entry_length
        while pos < end:
            win = self.windows.get(seg_id)
            if win is None or not (win[0] <= pos < win[0] + len(win[1])):
                win = self._fetch(seg_id, pos)
            start, data = win
            take = min(end, start + len(data)) - pos
            out += data[pos - start : pos - start + take]
            pos += take
        entry, _ = decode_entry(bytes(out), 0)
        return entry


class _Item:
    __slots__ = ("prefix", "rank", "seq", "flags", "payload", "key", "value", "addr", "lsn", "pending", "entry")

    def __init__(self, prefix, rank, seq, flags, payload=None, key=None, value=None, addr=None, lsn=None, pending=None):
        self.prefix = prefix
        self.rank = rank
        self.seq = seq
        self.flags = flags
        self.payload = payload
        self.key = key
        self.value = value
        self.addr = addr
        self.lsn = lsn
        self.pending = pending  # (key, value, lsn) awaiting a medium-log append
        self.entry = None  # memoized resolved log entry

    def sort_key(self):
        return (self.prefix, self.rank, self.seq)

    def address(self):
        if self.addr is None:
            _, self.addr, self.lsn = decode_ref(self.payload)
        return self.addr


def _l0_stream(region, materialize: bool, sorted_mode: bool, addr_map):
    for seq, (key, e) in enumerate(region.l0.items_sorted()):
        prefix = key_prefix(key)
        if e.category == CAT_TOMB:
            yield _Item(prefix, 0, seq, CAT_TOMB, encode_inplace(key, b""), key=key)
        elif e.category == CAT_LARGE:
            yield _Item(prefix, 0, seq, CAT_LARGE | FLAG_INLOG, encode_ref(prefix, e.addr, e.lsn),
                        key=key, addr=e.addr, lsn=e.lsn)
        elif e.category == CAT_MEDIUM:
            if materialize:
                yield _Item(prefix, 0, seq, CAT_MEDIUM, encode_inplace(key, e.value), key=key, value=e.value)
            elif not sorted_mode:
                addr = addr_map[key]
                yield _Item(prefix, 0, seq, CAT_MEDIUM | FLAG_INLOG, encode_ref(prefix, addr, e.lsn),
                            key=key, addr=addr, lsn=e.lsn)
            else:
                yield _Item(prefix, 0, seq, CAT_MEDIUM | FLAG_INLOG, key=key, pending=(key, e.value, e.lsn))
        else:
            yield _Item(prefix, 0, seq, e.category, encode_inplace(key, e.value), key=key, value=e.value)


def _level_stream(region, i: int):
    for seq, (prefix, flags, payload) in enumerate(region.level_index(i).iter_items("compaction_read")):
        yield _Item(prefix, i, seq, flags, payload)


def compact(store, region, src: int):
    """Merge level ``src`` into ``src + 1``; returns True if work was done."""
    cfg = store.config
    if src == 0:
        if not len(region.l0):
            return False
    elif src >= len(region.levels) or region.levels[src].empty:
        return False
    # the redo record snapshots log state, which must not straddle a buffer
    region.small_log.flush()
    region.large_log.flush()
    dest = src + 1
    while len(region.levels) <= dest:
        region.levels.append(type(region.levels[0])())
    deepest = max(dest, region.last_level())
    is_last = dest >= deepest
    materialize = is_last if cfg.medium_merge_level == "n-1" else dest >= deepest - 1

    med_state0 = region.medium_log.state()
    med_before = set(region.medium_log.segments)

    # arrival-order variant: medium values land in the transient log in LSN order
    addr_map = {}
    if src == 0 and not materialize and not cfg.sorted_l0_segments:
        meds = sorted(
            (e.lsn, key, e.value) for key, e in region.l0.map.items() if e.category == CAT_MEDIUM
        )
        for lsn, key, value in meds:
            addr_map[key] = region.medium_log.append_bytes(
                encode_entry(lsn, OP_INSERT, CAT_MEDIUM, key, value), 0
            )

    reader = MediumMergeReader(store, cfg.medium_read_unit)
    resolver = region.make_resolver("compaction_read")
    builder = LevelBuilder(store.space, f"{region.name}/L{dest}", cfg.leaf_size, cfg.node_size)
    large_owner = f"{region.name}/large-log"

    def resolve_key(item: _Item):
        """Full key, or None when the log reference turned stale (dead entry)."""
        if item.key is not None:
            return item.key
        if not (item.flags & FLAG_INLOG):
            item.key = inplace_key(item.payload)
            return item.key
        try:
            if (item.flags & 0b011) == CAT_MEDIUM and materialize:
                item.entry = reader.read(item.address())
            else:
                item.entry = resolver(item.address(), item.lsn)
        except StaleAddressError:
            return None
        item.key = item.entry.key
        return item.key

    def emit(item: _Item):
        flags = item.flags
        cat = flags & 0b011
        if cat == CAT_TOMB and is_last:
            return
        payload = item.payload
        if cat == CAT_MEDIUM:
            if materialize and (flags & FLAG_INLOG):
                entry = item.entry or reader.read(item.address())
                payload = encode_inplace(entry.key, entry.value)
                flags = CAT_MEDIUM
            elif item.pending is not None:
                key, value, lsn = item.pending
                addr = region.medium_log.append_bytes(encode_entry(lsn, OP_INSERT, CAT_MEDIUM, key, value), 0)
                payload = encode_ref(item.prefix, addr, lsn)
        builder.add(item.prefix, flags, payload)

    def invalidate(item: _Item):
        if (item.flags & 0b011) == CAT_LARGE and (item.flags & FLAG_INLOG):
            addr = item.address()
            seg = store.space.segment_of(addr.device_offset)
            if store.space.owner_of(seg) == large_owner:
                store.gc.record_invalidation(region.name, addr)

    def process_run(run: list[_Item]):
        if len(run) == 1:
            emit(run[0])
            return
        live = [it for it in run if resolve_key(it) is not None]
        live.sort(key=lambda it: (it.key, it.rank, it.seq))
        j = 0
        while j < len(live):
            k = j + 1
            while k < len(live) and live[k].key == live[j].key:
                invalidate(live[k])
                k += 1
            emit(live[j])
            j = k

    if src == 0:
        sources = [_l0_stream(region, materialize, cfg.sorted_l0_segments, addr_map)]
    else:
        sources = [_level_stream(region, src)]
    if not region.levels[dest].empty:
        sources.append(_level_stream(region, dest))

    try:
        run: list[_Item] = []
        for item in chain(heapq.merge(*sources, key=_Item.sort_key), (None,)):
            if run and (item is None or item.prefix != run[0].prefix):
                process_run(run)
                run = []
            if item is not None:
                run.append(item)
        root, first_leaf, segs, count, stored, resolved = builder.finish()
        region.medium_log.flush()
        region.medium_log.seal()
    except OutOfSpaceError:
        for seg in builder.writer.segments:
            store.space.free(seg)
        new_meds = [s for s in region.medium_log.segments if s not in med_before]
        region.medium_log.restore(med_state0)
        for seg in new_meds:
            store.space.free(seg)
        raise

    meta_cls = type(region.levels[0])
    new_meta = meta_cls(
        root=root, first_leaf=first_leaf, segments=segs,
        count=count, stored_bytes=stored, resolved_bytes=resolved,
    )
    src_meta = region.levels[src]
    dest_meta = region.levels[dest]
    traveling = list(src_meta.medium_segments) + list(dest_meta.medium_segments)
    new_medium = [s for s in region.medium_log.segments if s not in med_before]
    freed_medium: list[int] = []
    allocs = [[s, f"{region.name}/L{dest}"] for s in segs]
    if materialize:
        freed_medium = traveling + new_medium  # new_medium is empty here by construction
        region.medium_log.drop_segments(freed_medium)
    else:
        medium_owner = f"{region.name}/L{dest}/medium"
        for s in traveling:
            store.space.retag(s, medium_owner)
        for s in new_medium:
            store.space.retag(s, medium_owner)
        new_meta.medium_segments = traveling + new_medium
        allocs += [[s, medium_owner] for s in traveling + new_medium]

    old_level_segs = list(src_meta.segments) + list(dest_meta.segments)
    region.levels[dest] = new_meta
    small_freed: list[int] = []
    if src == 0:
        region.l0.clear()
        region.lsn_base = region.lsn
        region.wm_small = region.small_log.tail_position()
        region.wm_large = region.large_log.tail_position()
        small_freed = region.small_log.reclaimable_before(region.wm_small)
        region.small_log.drop_segments(small_freed)
    else:
        region.levels[src] = meta_cls()

    freed = old_level_segs + freed_medium + small_freed
    store.redo.append(
        "compaction",
        {"region": region.name, "dest": dest, "region_state": region.to_json(),
         "alloc": allocs, "freed": freed},
    )
    for seg in freed:
        store.space.free(seg)
    store.extra["compactions"] += 1

    if cfg.gc_after_compaction and not store.gc.active:
        store.gc.gc_tick()
    return True
