"""Shared test fixtures: fault-injecting storage, key/value makers, oracles.

These are test instruments, not product API.
"""

from __future__ import annotations

import hashlib
import random

from hybridkv.errors import StorageError
from hybridkv.layout import RamDevice


class CrashPoint(Exception):
    """Raised by FaultInjectingDevice when a scheduled crash instant arrives."""


class FaultInjectingDevice:
    """In-memory device that models volatile writes and an explicit sync barrier.

    Writes land in a volatile image; ``sync`` copies the dirtied ranges to the
    durable image.  ``crash()`` (or an armed sync countdown) abandons all
    non-synced writes; ``crashed_device()`` returns a fresh RamDevice holding
    exactly the durable bytes, as if the machine had lost power.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._volatile = bytearray(capacity)
        self._durable = bytearray(capacity)
        self._dirty: list[tuple[int, int]] = []
        self.sync_count = 0
        self.crash_after_syncs: int | None = None
        self.crashed = False

    def read(self, offset: int, length: int) -> bytes:
        if offset < 0 or offset + length > self.capacity:
            raise StorageError("read out of device bounds")
        return bytes(self._volatile[offset : offset + length])

    def write(self, offset: int, data: bytes):
        if self.crashed:
            raise StorageError("device is down")
        if offset < 0 or offset + len(data) > self.capacity:
            raise StorageError("write out of device bounds")
        self._volatile[offset : offset + len(data)] = data
        self._dirty.append((offset, len(data)))

    def sync(self):
        if self.crashed:
            raise StorageError("device is down")
        for off, n in self._dirty:
            self._durable[off : off + n] = self._volatile[off : off + n]
        self._dirty.clear()
        self.sync_count += 1
        if self.crash_after_syncs is not None:
            self.crash_after_syncs -= 1
            if self.crash_after_syncs <= 0:
                self.crash()
                raise CrashPoint(f"crash at sync #{self.sync_count}")

    def crash(self):
        """Drop every write since the last sync and stop accepting I/O."""
        self._dirty.clear()
        self.crashed = True

    def crashed_device(self) -> RamDevice:
        dev = RamDevice(self.capacity)
        dev._buf[:] = self._durable
        return dev

    def durable_image(self) -> bytes:
        return bytes(self._durable)

    def close(self):
        pass


def device_from_image(image: bytes) -> RamDevice:
    dev = RamDevice(len(image))
    dev._buf[:] = image
    return dev


def make_key(i: int) -> bytes:
    return hashlib.blake2b(str(i).encode(), digest_size=12).hexdigest().encode()


def make_value(tag, size: int) -> bytes:
    seed = hashlib.blake2b(str(tag).encode(), digest_size=16).digest()
    reps = -(-size // len(seed))
    return (seed * reps)[:size]


def assert_matches_model(region, model: dict, sample=None):
    """Every model key resolves identically through the region.

    `sample` may be an iterable of keys or a count of randomly chosen ones.
    """
    if sample is None:
        keys = model.keys()
    elif isinstance(sample, int):
        keys = random.Random(0).sample(sorted(model), min(sample, len(model)))
    else:
        keys = sample
    for k in keys:
        got = region.get(k)
        assert got == model.get(k), f"mismatch for {k!r}: {got!r} != {model.get(k)!r}"


def scan_all(region) -> dict:
    out = {}
    start = b"\x00"
    while True:
        batch = region.scan(start, 1024, record=False)
        if not batch:
            break
        out.update(batch)
        start = batch[-1][0] + b"\x00"
    return out
