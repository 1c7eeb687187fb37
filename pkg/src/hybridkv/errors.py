"""Exception hierarchy shared across the store."""


class StoreError(Exception):
    """Base class for all store errors."""


class StorageError(StoreError):
    """I/O level failure (short read/write, bad range)."""


class OutOfSpaceError(StorageError):
    """Device has no free segments left."""


class CorruptionError(StoreError):
    """CRC mismatch or undecodable on-device structure."""


class StaleAddressError(StoreError):
    """Log address points into a segment no longer owned by that log."""


class InvariantViolation(StoreError):
    """An internal invariant was broken (double free, unsorted input, ...)."""


class UnrecoverableStoreError(StoreError):
    """No valid catalog copy could be found on the device."""
