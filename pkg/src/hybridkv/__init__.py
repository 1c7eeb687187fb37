"""hybridkv: an embedded LSM key-value store with size-based hybrid placement.

Small values live in-place in the tree leaves, medium values travel in a
transient log merged in place at the deepest levels, and large values live in
a garbage-collected log.  The package also ships the closed-form traffic
model the design is built on, and a YCSB-style benchmark harness.
"""

from .engine import EngineConfig, Region, Store, effective_thresholds
from .errors import (
    CorruptionError,
    InvariantViolation,
    OutOfSpaceError,
    StaleAddressError,
    StorageError,
    StoreError,
    UnrecoverableStoreError,
)
from .metrics import TrafficCounters, amplification, space_amplification, write_amplification
from .model import (
    AmplificationParams,
    CategoryThresholds,
    KvCategory,
    capacity_ratio,
    classify,
    separation_benefit,
    simulate_leveled_traffic,
    traffic_in_place,
    traffic_kv_separated,
)
from .workload import WorkloadSpec, generate, run_workload

__all__ = [
    "AmplificationParams",
    "CategoryThresholds",
    "CorruptionError",
    "EngineConfig",
    "InvariantViolation",
    "KvCategory",
    "OutOfSpaceError",
    "Region",
    "StaleAddressError",
    "StorageError",
    "Store",
    "StoreError",
    "TrafficCounters",
    "UnrecoverableStoreError",
    "WorkloadSpec",
    "amplification",
    "capacity_ratio",
    "classify",
    "effective_thresholds",
    "generate",
    "run_workload",
    "separation_benefit",
    "simulate_leveled_traffic",
    "space_amplification",
    "traffic_in_place",
    "traffic_kv_separated",
    "write_amplification",
]

__version__ = "0.1.0"
