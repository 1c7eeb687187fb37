"""Region lifecycle and the public dictionary API.

A store holds named regions.  Each region owns an in-memory L0, a stack of
immutable on-device levels, and three append-only logs: the small log (also
the write-ahead log for small and medium entries), the transient medium log
(segments attached to levels, reclaimed wholesale when merged in place), and
the large log (the durable home of large values, reclaimed by GC).
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from fractions import Fraction

from . import compaction as _compaction
from . import recovery as _recovery
from .errors import StaleAddressError, StoreError
from .gc import GarbageCollector
from .index import (
    CAT_LARGE,
    CAT_MEDIUM,
    CAT_SMALL,
    CAT_TOMB,
    FLAG_INLOG,
    LevelIndex,
    decode_inplace,
    decode_ref,
)
from .layout import DEFAULT_SEGMENT_LENGTH, RamDevice, StorageSpace
from .logs import (
    LOG_LARGE,
    LOG_MEDIUM,
    LOG_SMALL,
    MAX_KEY_LEN,
    OP_DELETE,
    OP_INSERT,
    ValueLog,
)
from .metrics import TrafficCounters
from .model import CategoryThresholds, KvCategory, classify

GC_REGION = "__gc__"
PLACEMENT_POLICIES = ("hybrid", "all-in-place", "all-in-log", "medium-as-small", "medium-as-large")

_HUGE = 1 << 62


def effective_thresholds(policy: str, base: CategoryThresholds) -> CategoryThresholds:
    """Placement policies are realized purely as threshold overrides."""
    if policy == "hybrid":
        return base
    if policy == "all-in-place":
        return replace(base, t_sm=Fraction(0), t_ml=Fraction(0), size_small_max=_HUGE, size_medium_max=_HUGE)
    if policy == "all-in-log":
        return replace(base, t_sm=Fraction(1), t_ml=Fraction(1), size_small_max=0, size_medium_max=0)
    if policy == "medium-as-small":
        return replace(base, t_sm=base.t_ml, size_small_max=base.size_medium_max)
    if policy == "medium-as-large":
        return replace(base, t_ml=base.t_sm, size_medium_max=base.size_small_max)
    raise ValueError(f"unknown placement policy {policy!r}")


@dataclass
class EngineConfig:
    growth_factor_f: int = 8
    l0_capacity: int = 8 * 1024 * 1024
    medium_merge_level: str = "n-1"  # materialize at the last level; "n-2": one above
    sorted_l0_segments: bool = True
    placement_policy: str = "hybrid"
    thresholds: CategoryThresholds = field(default_factory=CategoryThresholds)
    classify_mode: str = "size"  # or "ratio"
    segment_length: int = DEFAULT_SEGMENT_LENGTH
    gc_threshold: float = 0.10
    leaf_size: int = 8192
    node_size: int = 12288
    chunk_size: int = 256 * 1024
    medium_read_unit: int = 8192
    auto_compact: bool = True
    gc_after_compaction: bool = True

    def __post_init__(self):
        if self.growth_factor_f < 2:
            raise ValueError("growth factor must be >= 2")
        if self.medium_merge_level not in ("n-1", "n-2"):
            raise ValueError("medium_merge_level must be 'n-1' or 'n-2'")
        if self.placement_policy not in PLACEMENT_POLICIES:
            raise ValueError(f"unknown placement policy {self.placement_policy!r}")
        if self.classify_mode not in ("size", "ratio"):
            raise ValueError("classify_mode must be 'size' or 'ratio'")
        self.chunk_size = min(self.chunk_size, self.segment_length)

    def active_thresholds(self) -> CategoryThresholds:
        return effective_thresholds(self.placement_policy, self.thresholds)

    def to_json(self) -> dict:
        t = self.thresholds
        return {
            "growth_factor_f": self.growth_factor_f,
            "l0_capacity": self.l0_capacity,
            "medium_merge_level": self.medium_merge_level,
            "sorted_l0_segments": self.sorted_l0_segments,
            "placement_policy": self.placement_policy,
            "thresholds": {
                "t_sm": str(t.t_sm),
                "t_ml": str(t.t_ml),
                "size_small_max": t.size_small_max,
                "size_medium_max": t.size_medium_max,
            },
            "classify_mode": self.classify_mode,
            "segment_length": self.segment_length,
            "gc_threshold": self.gc_threshold,
            "leaf_size": self.leaf_size,
            "node_size": self.node_size,
            "chunk_size": self.chunk_size,
            "medium_read_unit": self.medium_read_unit,
            "auto_compact": self.auto_compact,
            "gc_after_compaction": self.gc_after_compaction,
        }

    @classmethod
    def from_json(cls, d: dict) -> "EngineConfig":
        t = d["thresholds"]
        thresholds = CategoryThresholds(
            t_sm=Fraction(t["t_sm"]),
            t_ml=Fraction(t["t_ml"]),
            size_small_max=t["size_small_max"],
            size_medium_max=t["size_medium_max"],
        )
        kwargs = dict(d)
        kwargs["thresholds"] = thresholds
        return cls(**kwargs)


@dataclass
class LevelMeta:
    root: int = 0
    first_leaf: int = 0
    segments: list = field(default_factory=list)
    count: int = 0
    stored_bytes: int = 0
    resolved_bytes: int = 0
    medium_segments: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.count == 0

    def to_json(self) -> dict:
        return {
            "root": self.root,
            "first_leaf": self.first_leaf,
            "segments": list(self.segments),
            "count": self.count,
            "stored_bytes": self.stored_bytes,
            "resolved_bytes": self.resolved_bytes,
            "medium_segments": list(self.medium_segments),
        }

    @classmethod
    def from_json(cls, d: dict) -> "LevelMeta":
        return cls(**d)


class L0Entry:
    __slots__ = ("lsn", "category", "value", "addr")

    def __init__(self, lsn, category, value=b"", addr=None):
        self.lsn = lsn
        self.category = category  # CAT_* constant; CAT_TOMB for deletes
        self.value = value  # resident for small/medium
        self.addr = addr  # LogAddress for large

    def resolved_bytes(self, key_len: int) -> int:
        if self.category == CAT_LARGE:
            return self.addr.entry_length - 19
        return key_len + len(self.value)


class L0Index:
    """In-memory sorted map standing in for level 0."""

    def __init__(self):
        self.map: dict[bytes, L0Entry] = {}
        self.keys: list[bytes] = []
        self.resolved_bytes = 0

    def __len__(self):
        return len(self.map)

    def put(self, key: bytes, entry: L0Entry) -> L0Entry | None:
        old = self.map.get(key)
        if old is None:
            bisect.insort(self.keys, key)
        else:
            self.resolved_bytes -= old.resolved_bytes(len(key))
        self.map[key] = entry
        self.resolved_bytes += entry.resolved_bytes(len(key))
        return old

    def get(self, key: bytes) -> L0Entry | None:
        return self.map.get(key)

    def items_sorted(self):
        for k in self.keys:
            yield k, self.map[k]

    def scan_from(self, start_key: bytes):
        i = bisect.bisect_left(self.keys, start_key)
        for k in self.keys[i:]:
            yield k, self.map[k]

    def clear(self):
        self.map.clear()
        self.keys.clear()
        self.resolved_bytes = 0


class Region:
    def __init__(self, store: "Store", name: str):
        if "/" in name or not name:
            raise ValueError("region names must be nonempty and must not contain '/'")
        self.store = store
        self.name = name
        cfg = store.config
        space = store.space
        self.l0 = L0Index()
        self.levels: list[LevelMeta] = [LevelMeta()]  # index 0 is a placeholder
        self.lsn = 0
        self.lsn_base = 0
        self.wm_small = (None, 0)
        self.wm_large = (None, 0)
        self.small_log = ValueLog(
            space, f"{name}/small-log", LOG_SMALL, cfg.chunk_size,
            on_extend=lambda seg: store._log_extend(name, "small", seg),
        )
        self.medium_log = ValueLog(space, f"{name}/medium-log", LOG_MEDIUM, cfg.chunk_size)
        self.large_log = ValueLog(
            space, f"{name}/large-log", LOG_LARGE, cfg.chunk_size,
            on_extend=lambda seg: store._log_extend(name, "large", seg),
        )
        self._in_recovery = False

    # -- classification -----------------------------------------------------

    def _classify(self, key: bytes, value: bytes) -> int:
        if self.name == GC_REGION:
            # the internal counter region stores tiny records and must stay
            # in place regardless of the placement policy, or its own writes
            # would feed the logs it accounts for
            return CAT_SMALL
        cat = classify(
            len(key), len(value), self.store.config.active_thresholds(), self.store.config.classify_mode
        )
        return {KvCategory.SMALL: CAT_SMALL, KvCategory.MEDIUM: CAT_MEDIUM, KvCategory.LARGE: CAT_LARGE}[cat]

    # -- write path ----------------------------------------------------------

    def put(self, key: bytes, value: bytes, *, auto_compact: bool | None = None, record: bool = True):
        if not 1 <= len(key) <= MAX_KEY_LEN:
            raise ValueError("key length out of range")
        cat = self._classify(key, value)
        self.lsn += 1
        lsn = self.lsn
        if cat == CAT_LARGE:
            addr = self.large_log.append_entry(lsn, OP_INSERT, cat, key, value)
            old = self.l0.put(key, L0Entry(lsn, CAT_LARGE, addr=addr))
        else:
            self.small_log.append_entry(lsn, OP_INSERT, cat, key, value)
            old = self.l0.put(key, L0Entry(lsn, cat, value=value))
        self._invalidate_if_large(old)
        if record:
            self.store.counters.record_op("put")
            self.store.counters.record_app_in(len(key) + len(value))
        if auto_compact if auto_compact is not None else self.store.config.auto_compact:
            self.maybe_compact()

    def delete(self, key: bytes, *, auto_compact: bool | None = None, record: bool = True):
        if not 1 <= len(key) <= MAX_KEY_LEN:
            raise ValueError("key length out of range")
        self.lsn += 1
        self.small_log.append_entry(self.lsn, OP_DELETE, CAT_SMALL, key, b"")
        old = self.l0.put(key, L0Entry(self.lsn, CAT_TOMB))
        self._invalidate_if_large(old)
        if record:
            self.store.counters.record_op("delete")
            self.store.counters.record_app_in(len(key))
        if auto_compact if auto_compact is not None else self.store.config.auto_compact:
            self.maybe_compact()

    def _invalidate_if_large(self, old: L0Entry | None):
        if old is not None and old.category == CAT_LARGE and not self._in_recovery:
            self.store.gc.record_invalidation(self.name, old.addr)

    def flush(self) -> int:
        """Make every acknowledged op durable; returns the covered LSN."""
        self.small_log.flush()
        self.large_log.flush()
        return self.lsn

    # -- read path -----------------------------------------------------------

    def _log_for(self, log_id: int) -> ValueLog:
        return {LOG_SMALL: self.small_log, LOG_MEDIUM: self.medium_log, LOG_LARGE: self.large_log}[log_id]

    def make_resolver(self, purpose: str = "lookup_read"):
        memo: dict = {}

        def resolve(addr, lsn=None):
            hit = memo.get((addr, lsn))
            if hit is None:
                hit = self._log_for(addr.log_id).read_entry(addr, purpose, expected_lsn=lsn)
                memo[(addr, lsn)] = hit
            return hit

        return resolve

    def _resolve_hit(self, flags: int, payload: bytes, resolver, count_resolve: bool = True):
        """Turn a leaf hit into a value, or None for tombstones."""
        cat = flags & 0b011
        if cat == CAT_TOMB:
            return None
        if flags & FLAG_INLOG:
            _, addr, lsn = decode_ref(payload)
            entry = resolver(addr, lsn)
            if count_resolve:
                self.store.extra["log_resolve_bytes"] += addr.entry_length
            return entry.value
        _, value = decode_inplace(payload)
        return value

    def level_index(self, i: int) -> LevelIndex:
        cfg = self.store.config
        meta = self.levels[i]
        return LevelIndex(self.store.space, meta.root, meta.first_leaf, cfg.leaf_size, cfg.node_size)

    def get(self, key: bytes, *, record: bool = True):
        value = self._get_internal(key)
        if record:
            self.store.counters.record_op("get")
            if value is not None:
                self.store.counters.record_app_out(len(key) + len(value))
        return value

    def _get_internal(self, key: bytes):
        e = self.l0.get(key)
        if e is not None:
            if e.category == CAT_TOMB:
                return None
            if e.category == CAT_LARGE:
                entry = self.large_log.read_entry(e.addr, expected_lsn=e.lsn)
                self.store.extra["log_resolve_bytes"] += e.addr.entry_length
                return entry.value
            return e.value
        resolver = self.make_resolver()
        for i in range(1, len(self.levels)):
            if self.levels[i].empty:
                continue
            hit = self.level_index(i).search(key, resolver)
            if hit is not None:
                return self._resolve_hit(hit[0], hit[1], resolver)
        return None

    def resolve_address(self, key: bytes):
        """Current authoritative (LogAddress, lsn) of ``key``'s value, if in a log.

        Used by GC's liveness check; returns None for absent, tombstoned, or
        in-place entries.
        """
        e = self.l0.get(key)
        if e is not None:
            return (e.addr, e.lsn) if e.category == CAT_LARGE else None
        resolver = self.make_resolver()
        for i in range(1, len(self.levels)):
            if self.levels[i].empty:
                continue
            hit = self.level_index(i).search(key, resolver)
            if hit is not None:
                flags, payload = hit
                if flags & FLAG_INLOG:
                    _, addr, lsn = decode_ref(payload)
                    return addr, lsn
                return None
        return None

    def scan(self, start_key: bytes, count: int, *, record: bool = True):
        results = []
        resolver = self.make_resolver()
        sources = [self._l0_scan_source(start_key)]
        for i in range(1, len(self.levels)):
            if not self.levels[i].empty:
                sources.append(self._level_scan_source(i, start_key, resolver))
        import heapq

        merged = heapq.merge(*sources, key=lambda t: (t[0], t[1]))
        last_key = None
        for key, _rank, fetch in merged:
            if key == last_key:
                continue
            value = fetch()
            if value is _STALE:
                continue  # dead reference; do not shadow deeper copies
            last_key = key
            if value is None:
                continue  # tombstone
            results.append((key, value))
            if len(results) >= count:
                break
        if record:
            self.store.counters.record_op("scan")
            self.store.counters.record_app_out(sum(len(k) + len(v) for k, v in results))
        return results

    def _l0_scan_source(self, start_key: bytes):
        for key, e in self.l0.scan_from(start_key):
            if e.category == CAT_TOMB:
                yield key, 0, lambda: None
            elif e.category == CAT_LARGE:
                yield key, 0, (lambda a=e.addr, n=e.lsn: self._fetch_log_value(a, n))
            else:
                yield key, 0, (lambda v=e.value: v)

    def _level_scan_source(self, i: int, start_key: bytes, resolver):
        def fetch(f, p):
            try:
                return self._resolve_hit(f, p, resolver)
            except StaleAddressError:
                return _STALE

        for key, flags, payload in self.level_index(i).scan_from(start_key, resolver):
            yield key, i, (lambda f=flags, p=payload: fetch(f, p))

    def _fetch_log_value(self, addr, lsn):
        try:
            entry = self.large_log.read_entry(addr, expected_lsn=lsn)
        except StaleAddressError:
            return _STALE
        self.store.extra["log_resolve_bytes"] += addr.entry_length
        return entry.value

    # -- compaction hooks ------------------------------------------------------

    def last_level(self) -> int:
        """Deepest nonempty level (0 when only L0 holds data)."""
        for i in range(len(self.levels) - 1, 0, -1):
            if not self.levels[i].empty:
                return i
        return 0

    def level_budget(self, i: int) -> int:
        return self.store.config.l0_capacity * (self.store.config.growth_factor_f ** i)

    def maybe_compact(self):
        if self.l0.resolved_bytes >= self.store.config.l0_capacity:
            _compaction.compact(self.store, self, 0)
        i = 1
        while i < len(self.levels):
            if not self.levels[i].empty and self.levels[i].resolved_bytes >= self.level_budget(i):
                _compaction.compact(self.store, self, i)
            i += 1

    def compact_now(self):
        """Push everything to the deepest level warranted by the data (test hook)."""
        if len(self.l0):
            _compaction.compact(self.store, self, 0)
        i = 1
        while i < len(self.levels) - 1:
            if not self.levels[i].empty:
                _compaction.compact(self.store, self, i)
            i += 1

    # -- catalog -----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "lsn": self.lsn,
            "lsn_base": self.lsn_base,
            "wm_small": list(self.wm_small),
            "wm_large": list(self.wm_large),
            "logs": {
                "small": self.small_log.state(),
                "medium": self.medium_log.state(),
                "large": self.large_log.state(),
            },
            "levels": [m.to_json() for m in self.levels],
        }

    def restore_json(self, d: dict):
        self.lsn = d["lsn"]
        self.lsn_base = d["lsn_base"]
        self.wm_small = tuple(d["wm_small"])
        self.wm_large = tuple(d["wm_large"])
        self.small_log.restore(d["logs"]["small"])
        self.medium_log.restore(d["logs"]["medium"])
        self.large_log.restore(d["logs"]["large"])
        self.levels = [LevelMeta.from_json(m) for m in d["levels"]]


_STALE = object()


class Store:
    """An open key-value store over one device."""

    def __init__(self, space: StorageSpace, config: EngineConfig, counters: TrafficCounters):
        self.space = space
        self.config = config
        self.counters = counters
        self.regions: dict[str, Region] = {}
        self.extra: dict[str, int] = {
            "log_resolve_bytes": 0,
            "medium_merge_read_bytes": 0,
            "compactions": 0,
            "gc_segments_reclaimed": 0,
            "gc_relocations": 0,
        }
        self.epoch = 0
        self.redo: _recovery.RedoLog | None = None
        self.gc = GarbageCollector(self)
        self.closed = False

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, config: EngineConfig, device=None, capacity: int | None = None, path=None):
        if device is None:
            if path is not None:
                from .layout import FileDevice

                device = FileDevice(path, capacity or 256 * 1024 * 1024)
            else:
                device = RamDevice(capacity or 256 * 1024 * 1024)
        counters = TrafficCounters()
        space = StorageSpace(device, config.segment_length, counters)
        store = cls(space, config, counters)
        store.redo = _recovery.RedoLog(store)
        store.create_region(GC_REGION)
        _recovery.persist_checkpoint(store)
        # seed the other catalog slot too: slot 0 anchors segment-length
        # discovery on open, and the first checkpoint above landed in slot 1
        from .layout import write_catalog

        write_catalog(space, (store.epoch + 1) % 2, store.epoch, store.catalog_payload())
        return store

    @classmethod
    def open(cls, device=None, path=None, capacity: int | None = None):
        if device is None:
            from .layout import FileDevice

            device = FileDevice(path, capacity or 256 * 1024 * 1024)
        return _recovery.recover(device)

    def close(self):
        if not self.closed:
            self.checkpoint()
            self.space.sync()
            self.closed = True

    def checkpoint(self):
        _recovery.persist_checkpoint(self)

    # -- regions -------------------------------------------------------------

    def create_region(self, name: str) -> Region:
        if name in self.regions:
            raise StoreError(f"region {name!r} already exists")
        region = Region(self, name)
        self.regions[name] = region
        if self.redo is not None:
            self.redo.append("create-region", {"region": name})
        return region

    def region(self, name: str) -> Region:
        try:
            return self.regions[name]
        except KeyError:
            raise StoreError(f"no such region {name!r}") from None

    def user_regions(self):
        return [r for n, r in self.regions.items() if n != GC_REGION]

    # -- convenience single-region API ---------------------------------------

    def put(self, region: str, key: bytes, value: bytes):
        self.region(region).put(key, value)

    def get(self, region: str, key: bytes):
        return self.region(region).get(key)

    def delete(self, region: str, key: bytes):
        self.region(region).delete(key)

    def scan(self, region: str, start_key: bytes, count: int):
        return self.region(region).scan(start_key, count)

    def flush(self):
        for r in self.regions.values():
            r.flush()

    # -- redo plumbing ---------------------------------------------------------

    def _log_extend(self, region: str, which: str, seg_id: int):
        if self.redo is not None:
            self.redo.append("extend", {"region": region, "log": which, "seg": seg_id})

    # -- accounting ------------------------------------------------------------

    def live_logical_bytes(self) -> int:
        """Sum of key+value over latest live versions (full scan, test mode)."""
        total = 0
        for region in self.regions.values():
            start = b"\x00"
            while True:
                batch = region.scan(start, 1024, record=False)
                if not batch:
                    break
                total += sum(len(k) + len(v) for k, v in batch)
                start = batch[-1][0] + b"\x00"
        return total

    def stats(self) -> dict:
        snap = self.counters.snapshot()
        for k, v in self.extra.items():
            snap[f"extra.{k}"] = v
        for name, region in self.regions.items():
            snap[f"region.{name}.levels"] = len(region.levels) - 1
            snap[f"region.{name}.l0_entries"] = len(region.l0)
            for i in range(1, len(region.levels)):
                m = region.levels[i]
                snap[f"region.{name}.L{i}.resolved_bytes"] = m.resolved_bytes
                snap[f"region.{name}.L{i}.stored_bytes"] = m.stored_bytes
                snap[f"region.{name}.L{i}.medium_segments"] = len(m.medium_segments)
            snap[f"region.{name}.large_segments"] = len(region.large_log.segments)
            snap[f"region.{name}.medium_segments"] = len(region.medium_log.segments)
            snap[f"region.{name}.small_segments"] = len(region.small_log.segments)
        snap["space.free_segments"] = self.space.free_segment_count()
        snap["space.owned_data_bytes"] = self.space.owned_data_bytes()
        return snap

    # -- catalog ---------------------------------------------------------------

    def catalog_payload(self) -> dict:
        owners = [[seg, owner] for seg, owner in sorted(self.space.owned_segments().items())]
        return {
            "config": self.config.to_json(),
            "owners": owners,
            "regions": {name: r.to_json() for name, r in self.regions.items()},
        }

    # -- integrity ---------------------------------------------------------------

    def fsck(self) -> list[str]:
        """Structural validation; returns a list of problems (empty when clean)."""
        from .layout import FIRST_DATA_SEGMENT

        problems: list[str] = []
        claimed: dict[int, str] = {i: "reserved" for i in range(FIRST_DATA_SEGMENT)}

        def claim(seg: int, what: str):
            if seg in claimed:
                problems.append(f"segment {seg} claimed by both {claimed[seg]} and {what}")
            claimed[seg] = what

        for name, region in self.regions.items():
            for log, label in (
                (region.small_log, "small-log"),
                (region.medium_log, "medium-log"),
                (region.large_log, "large-log"),
            ):
                for seg in log.segments:
                    claim(seg, f"{name}/{label}")
            for i in range(1, len(region.levels)):
                meta = region.levels[i]
                for seg in meta.segments:
                    claim(seg, f"{name}/L{i}")
                for seg in meta.medium_segments:
                    if seg not in region.medium_log.segments:
                        problems.append(f"{name}/L{i} medium segment {seg} missing from medium log chain")
                problems.extend(self._fsck_level(name, region, i))
        space_owned = dict(self.space.owned_segments())
        for seg, what in claimed.items():
            if seg not in space_owned:
                problems.append(f"segment {seg} ({what}) not allocated in the space map")
        for seg in space_owned:
            if seg not in claimed:
                problems.append(f"allocated segment {seg} ({space_owned[seg]}) not referenced by any structure")
        return problems

    def _fsck_level(self, name: str, region: Region, i: int) -> list[str]:
        problems = []
        meta = region.levels[i]
        if meta.empty:
            return problems
        prev_prefix = None
        seen = stored = resolved = 0
        from .index import REF_SIZE, inplace_key, key_prefix, payload_kv_bytes

        for leaf in region.level_index(i).iter_leaves("meta_read"):
            for j in range(leaf.count):
                flags, payload = leaf.flags_of(j), leaf.payload_of(j)
                prefix = leaf.prefix_of(j)
                if prev_prefix is not None and prefix < prev_prefix:
                    problems.append(f"{name}/L{i}: prefixes out of order")
                prev_prefix = prefix
                if flags & FLAG_INLOG:
                    if len(payload) != REF_SIZE:
                        problems.append(f"{name}/L{i}: in-log cell with malformed reference payload")
                    if (flags & 0b011) == CAT_SMALL:
                        problems.append(f"{name}/L{i}: small entry marked in-log")
                else:
                    k = inplace_key(payload)
                    if key_prefix(k) != prefix:
                        problems.append(f"{name}/L{i}: in-place payload key disagrees with slot prefix")
                seen += 1
                stored += 4 + len(payload)
                resolved += payload_kv_bytes(flags, payload)
        if seen != meta.count:
            problems.append(f"{name}/L{i}: leaf walk found {seen} entries, metadata says {meta.count}")
        if stored != meta.stored_bytes:
            problems.append(f"{name}/L{i}: leaf walk stored {stored} bytes, metadata says {meta.stored_bytes}")
        if resolved != meta.resolved_bytes:
            problems.append(
                f"{name}/L{i}: leaf walk resolves {resolved} bytes, metadata says {meta.resolved_bytes}"
            )
        return problems
