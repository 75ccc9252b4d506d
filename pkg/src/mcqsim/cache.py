"""Per-user cache models: LRU state, Che's approximation, partition placement."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np


class NoFiniteRootError(ValueError):
    """Raised when the cache can hold every file that is ever requested."""


class LruCache:
    """LRU cache of whole files. ``contents`` lists file ids most-recent first."""

    __slots__ = ("capacity", "_od")

    def __init__(self, capacity: int, contents: Iterable[int] = ()):
        if capacity < 0:
            raise ValueError("capacity must be nonnegative")
        self.capacity = int(capacity)
        self._od: OrderedDict = OrderedDict()
        # stored least-recent first internally; the public view is reversed
        for f in reversed(list(contents)):
            if f in self._od:
                raise ValueError(f"duplicate file {f} in initial contents")
            self._od[f] = None
        if len(self._od) > self.capacity:
            raise ValueError("initial contents exceed capacity")

    @property
    def contents(self) -> list:
        return list(reversed(self._od))

    def __contains__(self, file_id) -> bool:
        return file_id in self._od

    def __len__(self) -> int:
        return len(self._od)

    def access(self, file_id) -> bool:
        """Look up ``file_id``; on a hit move it to the front. Misses leave
        the cache untouched, insertion happens on delivery."""
        od = self._od
        if file_id in od:
            od.move_to_end(file_id)
            return True
        return False

    def insert(self, file_id) -> Optional[int]:
        """Insert a newly delivered file at the front; returns the evicted id."""
        if self.capacity == 0:
            return None
        od = self._od
        if file_id in od:
            raise ValueError(f"file {file_id} already cached")
        od[file_id] = None
        if len(od) > self.capacity:
            return od.popitem(last=False)[0]
        return None

    def deliver(self, file_id) -> None:
        """Delivery of a requested file: refresh if already present, else insert."""
        if file_id in self._od:
            self._od.move_to_end(file_id)
        else:
            self.insert(file_id)

    def __repr__(self):
        return f"LruCache(C={self.capacity}, {self.contents})"


def lru_access(cache: LruCache, file_id) -> bool:
    return cache.access(file_id)


def lru_insert(cache: LruCache, file_id) -> LruCache:
    cache.insert(file_id)
    return cache


@dataclass(frozen=True)
class PartitionPlacement:
    """Every user stores a C/M fraction of every file."""

    file_count: int
    user_count: int
    capacity: float

    def __post_init__(self):
        if not 0 <= self.capacity <= self.file_count:
            raise ValueError("need 0 <= C <= M")
        if self.user_count < 1:
            raise ValueError("need at least one user")

    @property
    def fraction(self) -> float:
        return self.capacity / self.file_count

    @property
    def t(self) -> float:
        """Coded-caching parameter L*C/M (not necessarily integer)."""
        return self.user_count * self.capacity / self.file_count

    def integer_t(self) -> int:
        t = self.t
        k = round(t)
        if abs(t - k) > 1e-9:
            raise ValueError(f"L*C/M = {t:g} is not an integer")
        return int(k)


def che_constant(file_rates, capacity: float, tol: float = 1e-10) -> float:
    """Characteristic time T_C solving sum_i (1 - exp(-lam_i T)) = C.

    Bisection on [0, T_hi] with T_hi doubled until it brackets the root.
    """
    lam = np.asarray(file_rates, dtype=float)
    if np.any(lam < 0):
        raise ValueError("rates must be nonnegative")
    if capacity < 0:
        raise ValueError("capacity must be nonnegative")
    if capacity == 0:
        return 0.0
    lam = lam[lam > 0]
    if capacity >= lam.size:
        raise NoFiniteRootError(
            f"capacity {capacity:g} holds all {lam.size} requested files")

    def g(T):
        return float(np.sum(-np.expm1(-lam * T))) - capacity

    lo, hi = 0.0, 1.0 / lam.max()
    while g(hi) < 0:
        lo, hi = hi, 2.0 * hi
    # stop on residual or when the bracket cannot shrink any further
    while True:
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if abs(gm) < tol or mid <= lo or mid >= hi:
            return mid
        if gm < 0:
            lo = mid
        else:
            hi = mid


def miss_probability(rate: float, che_time: float) -> float:
    """Che miss probability exp(-lam * T_C); infinite T_C with zero rate is a miss."""
    if rate == 0 or che_time == 0:
        return 1.0
    return math.exp(-rate * che_time)
