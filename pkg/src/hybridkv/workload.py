"""Deterministic YCSB-style workload generation and the benchmark runner.

A workload is (value-size mix, op mix, key count, op count, seed).  Key
choice for skewed op mixes uses a scrambled zipfian distribution; everything
is reproducible from the seed.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

SIZE_MIXES = {
    # fractions of keys whose values are small / medium / large
    "S": (100, 0, 0),
    "M": (0, 100, 0),
    "L": (0, 0, 100),
    "SD": (60, 20, 20),
    "MD": (20, 60, 20),
    "LD": (20, 20, 60),
}

OP_MIXES = {
    # (read, update, insert, scan) percentages; load-a is pure population
    "load-a": (0, 0, 100, 0),
    "run-a": (50, 50, 0, 0),
    "run-b": (95, 5, 0, 0),
    "run-c": (100, 0, 0, 0),
    "run-d": (95, 0, 5, 0),
    "run-e": (0, 0, 5, 95),
}

VALUE_SIZES = (9, 104, 1004)  # small / medium / large value bytes for 24-byte keys


def make_key(i: int) -> bytes:
    """24-byte key with a well-distributed 12-byte prefix."""
    return hashlib.blake2b(str(i).encode(), digest_size=12).hexdigest().encode()


def make_value(i: int, version: int, size: int) -> bytes:
    seed = hashlib.blake2b(f"{i}:{version}".encode(), digest_size=16).digest()
    reps = -(-size // len(seed))
    return (seed * reps)[:size]


def value_size_for(i: int, mix: str, sizes=VALUE_SIZES) -> int:
    s, m, _l = SIZE_MIXES[mix]
    h = int.from_bytes(hashlib.blake2b(f"sz{i}".encode(), digest_size=4).digest(), "big") % 100
    if h < s:
        return sizes[0]
    if h < s + m:
        return sizes[1]
    return sizes[2]


class ScrambledZipfian:
    """Zipfian ranks scrambled over the key space (YCSB-style)."""

    _zeta_cache: dict = {}

    def __init__(self, n: int, theta: float, rng: random.Random):
        self.n = n
        self.theta = theta
        self.rng = rng
        key = (n, theta)
        if key not in self._zeta_cache:
            self._zeta_cache[key] = sum(1.0 / (i ** theta) for i in range(1, n + 1))
        self.zetan = self._zeta_cache[key]
        self.alpha = 1.0 / (1.0 - theta)
        zeta2 = 1.0 + 2.0 ** -theta
        self.eta = (1.0 - (2.0 / n) ** (1.0 - theta)) / (1.0 - zeta2 / self.zetan)

    def next_rank(self) -> int:
        u = self.rng.random()
        uz = u * self.zetan
        if uz < 1.0:
            return 0
        if uz < 1.0 + 0.5 ** self.theta:
            return 1
        return int(self.n * (self.eta * u - self.eta + 1.0) ** self.alpha)

    def next(self) -> int:
        rank = min(self.next_rank(), self.n - 1)
        h = (rank * 0x9E3779B97F4A7C15 + 0x2545F4914F6CDD1D) & 0xFFFFFFFFFFFFFFFF
        return h % self.n


@dataclass
class WorkloadSpec:
    mix: str = "SD"
    op_mix: str = "load-a"
    keys: int = 100_000
    ops: int = 100_000
    seed: int = 1
    zipf_theta: float = 0.99
    scan_max: int = 100
    value_sizes: tuple = VALUE_SIZES
    versions: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mix not in SIZE_MIXES:
            raise ValueError(f"unknown size mix {self.mix!r}; choose from {sorted(SIZE_MIXES)}")
        if self.op_mix not in OP_MIXES:
            raise ValueError(f"unknown op mix {self.op_mix!r}; choose from {sorted(OP_MIXES)}")


def generate(spec: WorkloadSpec):
    """Yield ("put", key, value) / ("get", key) / ("scan", start_key, count) ops."""
    rng = random.Random(spec.seed)
    versions = spec.versions
    if spec.op_mix == "load-a":
        order = list(range(spec.keys))
        rng.shuffle(order)
        for i in order[: spec.ops] if spec.ops < spec.keys else order:
            versions[i] = 0
            size = value_size_for(i, spec.mix, spec.value_sizes)
            yield ("put", make_key(i), make_value(i, 0, size))
        return

    population = spec.keys  # keys assumed pre-loaded
    zipf = ScrambledZipfian(population, spec.zipf_theta, rng)
    read_p, update_p, insert_p, scan_p = OP_MIXES[spec.op_mix]
    next_new = spec.keys
    for _ in range(spec.ops):
        roll = rng.randrange(100)
        if roll < read_p:
            if spec.op_mix == "run-d":
                # read-latest: one of the most recently inserted 1% of keys
                window = max(1, next_new // 100)
                i = next_new - 1 - zipf.next() % window
            else:
                i = zipf.next()
            yield ("get", make_key(i))
        elif roll < read_p + update_p:
            i = zipf.next()
            versions[i] = versions.get(i, 0) + 1
            size = value_size_for(i, spec.mix, spec.value_sizes)
            yield ("put", make_key(i), make_value(i, versions[i], size))
        elif roll < read_p + update_p + insert_p:
            i = next_new
            next_new += 1
            versions[i] = 0
            size = value_size_for(i, spec.mix, spec.value_sizes)
            yield ("put", make_key(i), make_value(i, 0, size))
        else:
            i = zipf.next()
            yield ("scan", make_key(i), rng.randint(1, spec.scan_max))


def run_workload(store, region_name: str, spec: WorkloadSpec) -> dict:
    """Apply a generated op stream to one region; returns the stats snapshot."""
    region = store.region(region_name)
    for op in generate(spec):
        if op[0] == "put":
            region.put(op[1], op[2])
        elif op[0] == "get":
            region.get(op[1])
        else:
            region.scan(op[1], op[2])
    store.flush()
    return store.stats()
