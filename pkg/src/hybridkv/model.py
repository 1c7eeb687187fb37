"""Closed-form I/O traffic model for leveled LSM stores, with and without KV separation.

All byte quantities are computed with exact integer/rational arithmetic; ratios
come back as ``Fraction`` so callers decide how to round.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

# Guard for the discrete simulator: total number of simulated merge events.
_MAX_SIM_MERGES = 50_000_000


class KvCategory(Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def _exact(x) -> Fraction:
    """Convert user input to an exact Fraction.

    Floats are interpreted through their decimal repr (0.02 -> 1/50), which is
    what callers mean when they type threshold constants.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class AmplificationParams:
    levels_l: int
    growth_factor_f: int
    l0_size_s0: int = 1
    key_fraction_p: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "key_fraction_p", _exact(self.key_fraction_p))
        if self.levels_l < 1:
            raise ValueError("levels_l must be >= 1")
        if self.growth_factor_f < 2:
            raise ValueError("growth_factor_f must be >= 2")
        if self.l0_size_s0 <= 0:
            raise ValueError("l0_size_s0 must be > 0")
        if not (0 < self.key_fraction_p <= 1):
            raise ValueError("key_fraction_p must be in (0, 1]")

    def level_size(self, i: int) -> int:
        """S_i = S_0 * f^i."""
        if not (0 <= i <= self.levels_l):
            raise ValueError(f"level {i} out of range")
        return self.l0_size_s0 * self.growth_factor_f**i

    @property
    def last_level_size(self) -> int:
        return self.level_size(self.levels_l)


@dataclass(frozen=True)
class CategoryThresholds:
    t_sm: Fraction = field(default=Fraction(1, 5))
    t_ml: Fraction = field(default=Fraction(1, 50))
    size_small_max: int = 119
    size_medium_max: int = 1023

    def __post_init__(self):
        object.__setattr__(self, "t_sm", _exact(self.t_sm))
        object.__setattr__(self, "t_ml", _exact(self.t_ml))
        if not (0 <= self.t_ml <= self.t_sm <= 1):
            raise ValueError("need 0 <= t_ml <= t_sm <= 1")
        if self.size_small_max > self.size_medium_max:
            raise ValueError("size_small_max must be <= size_medium_max")


DEFAULT_THRESHOLDS = CategoryThresholds()


def traffic_in_place(params: AmplificationParams) -> int:
    """Total device traffic until all data reach the last level, values in place.

    D = S_l * (l - 1 + f*l)
    """
    l, f = params.levels_l, params.growth_factor_f
    return params.last_level_size * (l - 1 + f * l)


def traffic_kv_separated(params: AmplificationParams):
    """Total device traffic with a value log: D' = K_l*(l-1+f*l) + S_l."""
    l, f = params.levels_l, params.growth_factor_f
    s_l = params.last_level_size
    k_l = params.key_fraction_p * s_l
    d = k_l * (l - 1 + f * l) + s_l
    return int(d) if d.denominator == 1 else d


def separation_benefit(params: AmplificationParams) -> Fraction:
    """Benefit ratio D/D' = (l-1+f*l) / (p*(l-1+f*l) + 1)."""
    l, f = params.levels_l, params.growth_factor_f
    a = l - 1 + f * l
    return Fraction(a) / (params.key_fraction_p * a + 1)


def capacity_ratio(growth_factor_f: int, total_levels_n: int, i: int) -> Fraction:
    """R(i) = (1 - f^(N-i)) / (1 - f^N): share of capacity in the first N-i levels."""
    if growth_factor_f < 2:
        raise ValueError("growth factor must be >= 2")
    if not (1 <= i < total_levels_n):
        raise ValueError(f"i={i} out of range for N={total_levels_n}")
    f, n = growth_factor_f, total_levels_n
    return Fraction(1 - f ** (n - i), 1 - f**n)


def classify(
    key_len: int,
    value_len: int,
    thresholds: CategoryThresholds = DEFAULT_THRESHOLDS,
    mode: str = "size",
) -> KvCategory:
    """Classify a KV pair as small/medium/large.

    mode="size" (operational): by total key+value bytes against the size cutoffs.
    mode="ratio" (model studies): by p = key_len / (key_len + value_len) against
    t_sm / t_ml; p <= t_ml is large, p <= t_sm is medium, else small.
    """
    if key_len < 1:
        raise ValueError("key_len must be >= 1")
    if value_len < 0:
        raise ValueError("value_len must be >= 0")
    if mode == "size":
        total = key_len + value_len
        if total <= thresholds.size_small_max:
            return KvCategory.SMALL
        if total <= thresholds.size_medium_max:
            return KvCategory.MEDIUM
        return KvCategory.LARGE
    if mode == "ratio":
        p = Fraction(key_len, key_len + value_len)
        if p <= thresholds.t_ml:
            return KvCategory.LARGE
        if p <= thresholds.t_sm:
            return KvCategory.MEDIUM
        return KvCategory.SMALL
    raise ValueError(f"unknown classify mode {mode!r}")


def simulate_leveled_traffic(params: AmplificationParams, separated: bool = False):
    """Discrete per-merge evaluation of the leveled-compaction traffic.

    Walks every merge event level by level: each merge of L_i into L_{i+1}
    reads and writes L_i (read cost waived for the in-memory L_0) and reads and
    writes the destination's incremental content, ((j-1) mod f) times the upper
    level on the j-th merge.  Serves as the independent oracle for the closed
    forms and must agree with them exactly.
    """
    l, f = params.levels_l, params.growth_factor_f
    s0 = params.l0_size_s0
    total_merges = sum(f ** (l - i) for i in range(l))
    if total_merges > _MAX_SIM_MERGES:
        raise ValueError("parameterization too large to simulate")

    p = params.key_fraction_p if separated else Fraction(1)
    total = Fraction(0)
    for i in range(l):
        unit = p * (s0 * f**i)  # bytes moved per unit of the upper level
        merges = f ** (l - i)
        # upper level fully read+written per merge (no read for L0)
        rw_factor = 1 if i == 0 else 2
        total += merges * rw_factor * unit
        # destination grows incrementally: (j-1) mod f units on merge j
        grown = int(np.sum(np.arange(merges, dtype=np.int64) % f))
        total += 2 * unit * grown
    if separated:
        total += params.last_level_size  # one append of every KV pair to the log
    return int(total) if total.denominator == 1 else total
