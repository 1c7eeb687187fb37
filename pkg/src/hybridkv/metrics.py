"""Traffic accounting and derived metrics.

Every device transfer in the system is attributed to exactly one traffic
class; the engine, compaction, GC and recovery paths pass the class down to
the storage seam.
"""

from __future__ import annotations

import time
from contextlib import contextmanager

PURPOSES = (
    "compaction_read",
    "compaction_write",
    "log_append",
    "gc_read",
    "gc_write",
    "lookup_read",
    "recovery_read",
    "meta_read",
    "meta_write",
)

READ_PURPOSES = frozenset(
    {"compaction_read", "gc_read", "lookup_read", "recovery_read", "meta_read"}
)
WRITE_PURPOSES = frozenset({"compaction_write", "log_append", "gc_write", "meta_write"})


class TrafficCounters:
    """Monotone per-class device byte counters plus application traffic."""

    def __init__(self):
        self.device = {p: 0 for p in PURPOSES}
        self.app_bytes_in = 0
        self.app_bytes_out = 0
        self.ops = {}
        self._remap = {}
        self._t0_wall = time.monotonic()
        self._t0_cpu = time.process_time()

    def add(self, purpose: str, nbytes: int):
        purpose = self._remap.get(purpose, purpose)
        if purpose not in self.device:
            raise KeyError(f"unknown traffic class {purpose!r}")
        self.device[purpose] += nbytes

    @contextmanager
    def remapped(self, mapping: dict):
        """Temporarily reroute traffic classes (e.g. lookup_read -> gc_read)."""
        old = self._remap
        merged = dict(old)
        merged.update(mapping)
        self._remap = merged
        try:
            yield
        finally:
            self._remap = old

    def reset_window(self):
        """Zero all counters and restart the measurement window."""
        self.device = {p: 0 for p in PURPOSES}
        self.app_bytes_in = 0
        self.app_bytes_out = 0
        self.ops = {}
        self._t0_wall = time.monotonic()
        self._t0_cpu = time.process_time()

    def record_op(self, verb: str, n: int = 1):
        self.ops[verb] = self.ops.get(verb, 0) + n

    def record_app_in(self, nbytes: int):
        self.app_bytes_in += nbytes

    def record_app_out(self, nbytes: int):
        self.app_bytes_out += nbytes

    @property
    def device_read_bytes(self) -> int:
        return sum(v for k, v in self.device.items() if k in READ_PURPOSES)

    @property
    def device_write_bytes(self) -> int:
        return sum(v for k, v in self.device.items() if k in WRITE_PURPOSES)

    def snapshot(self) -> dict:
        snap = {f"device.{k}": v for k, v in self.device.items()}
        snap["device.read_bytes"] = self.device_read_bytes
        snap["device.write_bytes"] = self.device_write_bytes
        snap["app.bytes_in"] = self.app_bytes_in
        snap["app.bytes_out"] = self.app_bytes_out
        for verb, n in sorted(self.ops.items()):
            snap[f"ops.{verb}"] = n
        snap["ops.total"] = sum(self.ops.values())
        snap["wall_seconds"] = time.monotonic() - self._t0_wall
        snap["cpu_seconds"] = time.process_time() - self._t0_cpu
        return snap


def amplification(snapshot: dict):
    """Device traffic (reads+writes) over application traffic; None if undefined."""
    app = snapshot["app.bytes_in"] + snapshot["app.bytes_out"]
    if app == 0:
        return None
    return (snapshot["device.read_bytes"] + snapshot["device.write_bytes"]) / app


def write_amplification(snapshot: dict):
    """Device write bytes over application write bytes; None if undefined."""
    if snapshot["app.bytes_in"] == 0:
        return None
    return snapshot["device.write_bytes"] / snapshot["app.bytes_in"]


def cpu_per_op(snapshot: dict, nominal_hz: float = 3.2e9):
    """Informational cycles-equivalent per operation from process CPU time.

    Not comparable to system-wide sampling; reported alongside throughput.
    """
    ops = snapshot.get("ops.total", 0)
    if ops == 0:
        return None
    return snapshot["cpu_seconds"] * nominal_hz / ops


def throughput(snapshot: dict):
    ops = snapshot.get("ops.total", 0)
    wall = snapshot.get("wall_seconds", 0.0)
    if wall <= 0:
        return None
    return ops / wall


def space_amplification(store) -> float:
    """Owned device bytes over live logical bytes (live computed by full scan)."""
    owned = store.space.owned_data_bytes()
    live = store.live_logical_bytes()
    if live == 0:
        return float("inf") if owned else 1.0
    return owned / live


def snapshot_to_text(snapshot: dict) -> str:
    lines = []
    for k in sorted(snapshot):
        v = snapshot[k]
        if isinstance(v, float):
            lines.append(f"{k}={v:.6f}")
        else:
            lines.append(f"{k}={v}")
    return "\n".join(lines)
