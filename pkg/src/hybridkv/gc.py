"""Large-log reclamation.

Free space is tracked in an internal region whose keys are large-log segment
start offsets (8 bytes, big-endian for ordered scans) and whose values are
8-byte invalid-byte counters.  A segment whose invalid fraction exceeds the
threshold is reclaimed: every entry still referenced at exactly its recorded
address is re-put through the normal write path (fresh LSN), then the segment
is freed and the counter entry dropped.
"""

from __future__ import annotations

import struct

from .errors import InvariantViolation
from .logs import PAD_MARKER, decode_entry, CorruptionError, LogAddress, LOG_LARGE


class GarbageCollector:
    def __init__(self, store):
        self.store = store
        self.active = False
        self._reclaiming_seg: int | None = None

    def _gc_region(self):
        from .engine import GC_REGION

        return self.store.regions.get(GC_REGION)

    # -- bookkeeping ----------------------------------------------------------

    def record_invalidation(self, region_name: str, addr: LogAddress):
        seglen = self.store.space.segment_length
        seg_id = addr.device_offset // seglen
        if seg_id == self._reclaiming_seg:
            return  # the whole segment is about to be freed
        gcr = self._gc_region()
        if gcr is None:
            return
        key = struct.pack(">Q", seg_id * seglen)
        cur = gcr.get(key, record=False)
        n = (int.from_bytes(cur, "little") if cur else 0) + addr.entry_length
        if n > seglen:
            raise InvariantViolation(
                f"invalid-byte counter for segment {seg_id} exceeds the segment length"
            )
        gcr.put(key, n.to_bytes(8, "little"), record=False)

    def invalid_fractions(self) -> dict[int, float]:
        gcr = self._gc_region()
        seglen = self.store.space.segment_length
        out = {}
        if gcr is None:
            return out
        for key, val in gcr.scan(b"\x00", 1 << 30, record=False):
            out[struct.unpack(">Q", key)[0] // seglen] = int.from_bytes(val, "little") / seglen
        return out

    # -- reclamation ------------------------------------------------------------

    def gc_tick(self, threshold: float | None = None) -> int:
        """Reclaim every eligible segment; returns the number reclaimed."""
        if self.active:
            return 0
        self.active = True
        try:
            return self._tick(self.store.config.gc_threshold if threshold is None else threshold)
        finally:
            self.active = False

    def _tick(self, threshold: float) -> int:
        gcr = self._gc_region()
        if gcr is None:
            return 0
        space = self.store.space
        seglen = space.segment_length
        reclaimed = 0
        touched_regions = []
        for key, val in list(gcr.scan(b"\x00", 1 << 30, record=False)):
            seg_id = struct.unpack(">Q", key)[0] // seglen
            owner = space.owner_of(seg_id)
            if owner is None or not owner.endswith("/large-log"):
                gcr.delete(key, record=False)  # segment already gone
                continue
            if int.from_bytes(val, "little") / seglen <= threshold:
                continue
            region = self.store.regions[owner.rsplit("/", 1)[0]]
            # only segments wholly behind the replay watermark may disappear
            if seg_id not in region.large_log.reclaimable_before(region.wm_large):
                continue
            self._reclaim(region, seg_id)
            gcr.delete(key, record=False)
            reclaimed += 1
            if region not in touched_regions:
                touched_regions.append(region)
        for region in touched_regions:
            region.maybe_compact()
        return reclaimed

    def _reclaim(self, region, seg_id: int):
        space = self.store.space
        seglen = space.segment_length
        raw = space.read_at(seg_id * seglen, seglen, "gc_read")
        entries = []
        off = 0
        while off + 4 <= seglen:
            (marker,) = struct.unpack_from("<I", raw, off)
            if marker == 0 or marker == PAD_MARKER:
                break
            try:
                entry, consumed = decode_entry(raw, off)
            except CorruptionError:
                break
            entries.append((LogAddress(LOG_LARGE, seg_id * seglen + off, consumed), entry))
            off += consumed

        self._reclaiming_seg = seg_id
        try:
            with self.store.counters.remapped({"lookup_read": "gc_read", "log_append": "gc_write"}):
                for addr, entry in entries:
                    # live iff the index still resolves to exactly this entry
                    if region.resolve_address(entry.key) == (addr, entry.lsn):
                        region.put(entry.key, entry.value, record=False, auto_compact=False)
                        self.store.extra["gc_relocations"] += 1
            region.large_log.flush()
            region.small_log.flush()
        finally:
            self._reclaiming_seg = None
        region.large_log.drop_segments([seg_id])
        self.store.redo.append("gc-reclaim", {"region": region.name, "seg": seg_id})
        space.free(seg_id)
        self.store.extra["gc_segments_reclaimed"] += 1
