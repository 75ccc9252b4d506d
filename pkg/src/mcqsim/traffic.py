"""IRM request traffic: catalogs, Zipf popularity and Poisson request streams."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

# Number of (gap, label) pairs drawn per refill of a RequestStream buffer.
_BLOCK = 1 << 14


@dataclass(frozen=True)
class Catalog:
    """File library. ``file_sizes[i]`` is the transmission time of file i in
    seconds at the nominal link rate (F_i / R)."""

    file_sizes: tuple

    def __post_init__(self):
        sizes = tuple(float(s) for s in self.file_sizes)
        if len(sizes) < 1:
            raise ValueError("catalog needs at least one file")
        if any(not s > 0 for s in sizes):
            raise ValueError("file sizes must be positive")
        object.__setattr__(self, "file_sizes", sizes)

    @classmethod
    def uniform(cls, file_count: int, file_time: float = 1.0) -> "Catalog":
        if file_count < 1:
            raise ValueError("file_count must be >= 1")
        return cls((float(file_time),) * int(file_count))

    @property
    def file_count(self) -> int:
        return len(self.file_sizes)

    @property
    def sizes(self) -> np.ndarray:
        return np.asarray(self.file_sizes)

    @property
    def equal_sizes(self) -> bool:
        return len(set(self.file_sizes)) == 1


class RateMatrix:
    """Request rates ``lam[i, j]`` (requests/s) for file i at user j."""

    def __init__(self, lam):
        lam = np.array(lam, dtype=float)
        if lam.ndim != 2:
            raise ValueError("rate matrix must be 2-D (files x users)")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("rates must be finite and nonnegative")
        lam.setflags(write=False)
        self.lam = lam

    @property
    def file_count(self) -> int:
        return self.lam.shape[0]

    @property
    def user_count(self) -> int:
        return self.lam.shape[1]

    @property
    def file_rates(self) -> np.ndarray:
        """Aggregate rate per file, summed over users."""
        return self.lam.sum(axis=1)

    @property
    def user_rates(self) -> np.ndarray:
        return self.lam.sum(axis=0)

    @property
    def total_rate(self) -> float:
        return float(self.lam.sum())

    def popularity(self) -> np.ndarray:
        """Per-user request probabilities p_ij = lam_ij / sum_i lam_ij.
        Columns of idle users are left at zero."""
        col = self.user_rates
        out = np.zeros_like(self.lam)
        np.divide(self.lam, col, out=out, where=col > 0)
        return out

    def __repr__(self):
        return f"RateMatrix(M={self.file_count}, L={self.user_count}, total={self.total_rate:g})"


class RequestEvent(NamedTuple):
    file: int
    user: int
    time: float


def zipf_pmf(file_count: int, alpha: float) -> np.ndarray:
    """Zipf popularity over files 1..M: p_i proportional to i**-alpha."""
    if file_count < 1:
        raise ValueError("file_count must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    w = np.arange(1, file_count + 1, dtype=float) ** -float(alpha)
    return w / w.sum()


def build_rate_matrix(file_count: int, user_count: int, per_user_rate: float,
                      pmf: Sequence[float]) -> RateMatrix:
    """Homogeneous users: every user requests file i at ``per_user_rate * pmf[i]``."""
    pmf = np.asarray(pmf, dtype=float)
    if pmf.shape != (file_count,):
        raise ValueError(f"pmf has length {pmf.size}, expected {file_count}")
    if user_count < 1:
        raise ValueError("user_count must be >= 1")
    if per_user_rate < 0:
        raise ValueError("per_user_rate must be nonnegative")
    if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
        raise ValueError("pmf must be a probability vector")
    col = per_user_rate * pmf
    return RateMatrix(np.repeat(col[:, None], user_count, axis=1))


class RequestStream:
    """Superposition of all (file, user) Poisson streams.

    One exponential clock at the total rate, plus a categorical label drawn
    with probability lam_ij / total. Draws are buffered in blocks so the
    event loop does not pay numpy call overhead per request.
    """

    def __init__(self, rates: RateMatrix, rng: np.random.Generator, start: float = 0.0):
        self.rates = rates
        self.rng = rng
        self.time = float(start)
        self.total = rates.total_rate
        self.users = rates.user_count
        flat = rates.lam.ravel()  # index = i * L + j
        if self.total > 0:
            cdf = np.cumsum(flat) / self.total
            cdf[-1] = 1.0
            self._cdf = cdf
        else:
            self._cdf = None
        self._gaps: list = []
        self._labels: list = []
        self._pos = 0

    def _refill(self):
        g = self.rng.exponential(1.0 / self.total, size=_BLOCK)
        u = self.rng.random(size=_BLOCK)
        lab = np.searchsorted(self._cdf, u, side="right")
        # guard against u landing exactly on a cdf edge of a zero-rate tail
        np.minimum(lab, self._cdf.size - 1, out=lab)
        self._gaps = g.tolist()
        self._labels = lab.tolist()
        self._pos = 0

    def next(self) -> Optional[RequestEvent]:
        """Next request, or None when the total rate is zero."""
        if self._cdf is None:
            return None
        if self._pos >= len(self._gaps):
            self._refill()
        k = self._pos
        self._pos = k + 1
        gap = self._gaps[k]
        # exponential draws of exactly 0.0 are possible in principle
        t = self.time + gap
        if t <= self.time:
            t = np.nextafter(self.time, np.inf)
        self.time = t
        i, j = divmod(self._labels[k], self.users)
        return RequestEvent(i, j, t)

    def __iter__(self):
        while True:
            ev = self.next()
            if ev is None:
                return
            yield ev


def next_request(stream: RequestStream) -> Optional[RequestEvent]:
    return stream.next()


def replication_rng(seed: int, replication: int, purpose: int = 0) -> np.random.Generator:
    """Independent generator for (seed, replication, purpose).

    ``purpose`` separates streams inside one run (0 traffic, 1 channel) so
    changing the channel model never perturbs the request sequence.
    """
    ss = np.random.SeedSequence([int(seed), int(replication), int(purpose)])
    return np.random.Generator(np.random.PCG64(ss))
