"""Crash recovery: redo log, catalog checkpoints, and L0 replay.

The catalog (two alternating copies) captures the full structural state at a
checkpoint.  Between checkpoints, a store-wide redo log in the reserved
segment pair records structural changes: log-chain extensions, compactions,
and GC reclaims.  Recovery restores the best catalog, replays the redo
records of its epoch, re-derives the durable log tails, and rebuilds each
region's L0 by replaying the small and large logs from their watermarks in
merged LSN order.
"""

from __future__ import annotations

import json
import struct
import zlib

from .errors import CorruptionError, StorageError
from .index import CAT_LARGE, CAT_TOMB
from .layout import (
    CATALOG_SEGMENTS,
    FIRST_DATA_SEGMENT,
    StorageSpace,
    bootstrap_segment_length,
    read_best_catalog,
    write_catalog,
)
from .logs import OP_DELETE, PAD_MARKER, decode_entry
from .metrics import TrafficCounters

_REC_HEADER = struct.Struct("<IQ")  # total_len, epoch


class RedoLog:
    """Append-only record stream in the reserved redo segments."""

    def __init__(self, store):
        self.store = store
        seglen = store.space.segment_length
        self.base = CATALOG_SEGMENTS * seglen  # redo segments are adjacent
        self.capacity = (FIRST_DATA_SEGMENT - CATALOG_SEGMENTS) * seglen
        self.write_off = 0

    def _encode(self, kind: str, payload: dict) -> bytes:
        body = json.dumps({"kind": kind, **payload}).encode()
        head = _REC_HEADER.pack(_REC_HEADER.size + len(body) + 4, self.store.epoch)
        buf = head + body
        return buf + struct.pack("<I", zlib.crc32(buf))

    def _write(self, area_off: int, data: bytes):
        """Segment-boundary-aware write into the redo area."""
        space = self.store.space
        seglen = space.segment_length
        pos = 0
        while pos < len(data):
            off = self.base + area_off + pos
            take = min(len(data) - pos, seglen - off % seglen)
            space.write_at(off, data[pos : pos + take], "meta_write")
            pos += take

    def _read_area(self) -> bytes:
        space = self.store.space
        seglen = space.segment_length
        return b"".join(
            space.read_at(self.base + i * seglen, seglen, "recovery_read")
            for i in range(self.capacity // seglen)
        )

    def append(self, kind: str, payload: dict):
        rec = self._encode(kind, payload)
        if self.write_off + len(rec) + 4 > self.capacity:
            # no room: fold everything into a fresh checkpoint first
            persist_checkpoint(self.store)
            rec = self._encode(kind, payload)
            if len(rec) + 4 > self.capacity:
                raise StorageError("redo record exceeds the redo area")
        self._write(self.write_off, rec)
        self.store.space.sync()
        self.write_off += len(rec)

    def reset(self):
        self.write_off = 0
        self.store.space.write_at(self.base, b"\x00\x00\x00\x00", "meta_write")
        self.store.space.sync()

    def replay(self, epoch: int):
        """Yield decoded records of ``epoch`` in order, stopping at the tear."""
        raw = self._read_area()
        off = 0
        while off + _REC_HEADER.size <= self.capacity:
            total, rec_epoch = _REC_HEADER.unpack_from(raw, off)
            if total == 0 or total < _REC_HEADER.size + 4 or off + total > self.capacity:
                return
            (stored,) = struct.unpack_from("<I", raw, off + total - 4)
            if zlib.crc32(raw[off : off + total - 4]) != stored:
                return
            if rec_epoch != epoch:
                return
            yield json.loads(raw[off + _REC_HEADER.size : off + total - 4])
            off += total
        return


def persist_checkpoint(store):
    """Write a new catalog epoch covering the whole in-memory structure."""
    for region in store.regions.values():
        region.small_log.flush()
        region.medium_log.flush()
        region.large_log.flush()
    store.epoch += 1
    write_catalog(store.space, store.epoch % 2, store.epoch, store.catalog_payload())
    store.redo.reset()


def recover(device):
    """Open a store from a device, replaying redo records and region logs."""
    from .engine import EngineConfig, Region, Store

    counters = TrafficCounters()
    seglen = bootstrap_segment_length(device)
    space = StorageSpace(device, seglen, counters)
    epoch, payload, _slot = read_best_catalog(space)
    config = EngineConfig.from_json(payload["config"])
    store = Store(space, config, counters)
    store.epoch = epoch
    store.redo = RedoLog(store)

    for name, rj in payload["regions"].items():
        region = Region(store, name)
        region.restore_json(rj)
        region._in_recovery = True
        store.regions[name] = region
    for seg, owner in payload["owners"]:
        space.mark_allocated(seg, owner)

    for rec in store.redo.replay(epoch):
        _apply_redo(store, rec)

    for region in store.regions.values():
        _rederive_tail(store, region.small_log)
        _rederive_tail(store, region.large_log)
        _replay_l0(store, region)
        region._in_recovery = False

    _reconcile_segments(store)
    persist_checkpoint(store)
    return store


def _apply_redo(store, rec: dict):
    from .engine import Region

    kind = rec["kind"]
    if kind == "create-region":
        if rec["region"] not in store.regions:
            region = Region(store, rec["region"])
            region._in_recovery = True
            store.regions[rec["region"]] = region
        return
    region = store.regions[rec["region"]]
    if kind == "extend":
        log = region.small_log if rec["log"] == "small" else region.large_log
        seg = rec["seg"]
        if seg not in log.segments:
            log.segments.append(seg)
            store.space.mark_allocated(seg, log.owner_tag)
        log.tail_seg = seg
        log.tail_off = 0
        log._buf_base = 0
        log._sealed = False
    elif kind == "compaction":
        region.restore_json(rec["region_state"])
        for seg, owner in rec["alloc"]:
            store.space.mark_allocated(seg, owner)
        for seg in rec["freed"]:
            store.space.free_if_owned(seg)
    elif kind == "gc-reclaim":
        seg = rec["seg"]
        if seg in region.large_log.segments:
            region.large_log.segments.remove(seg)
        store.space.free_if_owned(seg)
    else:
        raise CorruptionError(f"unknown redo record kind {kind!r}")


def _rederive_tail(store, log):
    """Walk the durable tail segment to find where the next append goes."""
    if log.tail_seg is None:
        return
    seglen = store.space.segment_length
    raw = store.space.read_at(log.tail_seg * seglen, seglen, "recovery_read")
    off = log.tail_off
    while off + 4 <= seglen:
        (marker,) = struct.unpack_from("<I", raw, off)
        if marker == 0:
            break
        if marker == PAD_MARKER:
            # segment closed; the successor was never durably recorded
            log.tail_seg = None
            log.tail_off = 0
            log._buf_base = 0
            log._sealed = True
            return
        try:
            _, consumed = decode_entry(raw, off)
        except CorruptionError:
            break
        off += consumed
    log.tail_off = off
    log._buf_base = off
    log._sealed = False


def _replay_l0(store, region):
    """Rebuild L0 from the small and large logs, in merged LSN order.

    Only a consecutive LSN run starting at lsn_base+1 is applied; both logs
    are then truncated right after their last applied entry so discarded
    suffixes can never resurface.
    """
    from .engine import L0Entry

    entries = []
    for addr, e in region.small_log.iterate(region.wm_small, "recovery_read"):
        entries.append((e.lsn, 0, e, addr))
    for addr, e in region.large_log.iterate(region.wm_large, "recovery_read"):
        entries.append((e.lsn, 1, e, addr))
    entries.sort(key=lambda t: (t[0], t[1]))

    cut = {0: region.wm_small, 1: region.wm_large}
    expected = region.lsn_base + 1
    seglen = store.space.segment_length
    for lsn, which, e, addr in entries:
        if lsn < expected:
            continue
        if lsn > expected:
            break
        if e.op_kind == OP_DELETE:
            region.l0.put(e.key, L0Entry(lsn, CAT_TOMB))
        elif which == 1:
            region.l0.put(e.key, L0Entry(lsn, CAT_LARGE, addr=addr))
        else:
            region.l0.put(e.key, L0Entry(lsn, e.category, value=e.value))
        seg = addr.device_offset // seglen
        cut[which] = (seg, addr.device_offset % seglen + addr.entry_length)
        expected += 1
    region.lsn = expected - 1
    for log, c in ((region.small_log, cut[0]), (region.large_log, cut[1])):
        _truncate_log(store, log, c)
        log.last_lsn = region.lsn
        log.durable_lsn = region.lsn


def _truncate_log(store, log, cut):
    seg, off = cut
    if seg is None:
        if not log.segments:
            return
        seg, off = log.segments[0], 0
    if seg not in log.segments:
        return
    idx = log.segments.index(seg)
    for extra in log.segments[idx + 1 :]:
        log.segments.remove(extra)
        store.space.free_if_owned(extra)
    seglen = store.space.segment_length
    log.tail_seg = seg
    log.tail_off = off
    log._buf_base = off
    log._sealed = False
    if off + 4 <= seglen:
        store.space.write_at(seg * seglen + off, b"\x00\x00\x00\x00", "meta_write")
        store.space.sync()


def _reconcile_segments(store):
    """Free allocated segments not referenced by any recovered structure.

    Crashes mid-compaction can leave freshly allocated (but never committed)
    segments owned in the catalog image; the region states are authoritative.
    """
    referenced = set(range(FIRST_DATA_SEGMENT))
    for region in store.regions.values():
        for log in (region.small_log, region.medium_log, region.large_log):
            referenced.update(log.segments)
        for meta in region.levels[1:]:
            referenced.update(meta.segments)
            referenced.update(meta.medium_segments)
    for seg in list(store.space.owned_segments()):
        if seg not in referenced:
            store.space.free_if_owned(seg)


def fsck_device(device) -> tuple[list[str], "object"]:
    """Recover a store read-only-ish and run the structural validator."""
    store = recover(device)
    problems = store.fsck()
    return problems, store
