"""Downlink channel models and the service time of one file transmission.

Three link kinds are supported:

``error-free``
    every transmission of a file of size s takes s seconds.
``retransmit``
    fixed-rate transmission; user j decodes an attempt with probability r_j
    and the server repeats until every intended user has decoded.
``worst-rate``
    block Rayleigh fading known at the server; the rate is matched to the
    weakest intended user so one (variable-length) transmission suffices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ERROR_FREE = "error-free"
RETRANSMIT = "retransmit"
WORST_RATE = "worst-rate"
CHANNEL_KINDS = (ERROR_FREE, RETRANSMIT, WORST_RATE)

_BLOCK = 1 << 12


def success_probability_awgn_rayleigh(snr: float, spectral_target: float) -> float:
    """P[log2(1 + H^2 snr) / 2 >= target] for H^2 ~ Exp(1)."""
    if snr <= 0:
        raise ValueError("snr must be positive")
    if spectral_target < 0:
        raise ValueError("spectral_target must be nonnegative")
    if math.isinf(snr):
        return 1.0
    return math.exp(-(2.0 ** (2.0 * spectral_target) - 1.0) / snr)


def nt_cdf(success_probs: Sequence[float], n: int) -> float:
    """P[N <= n] where N is the number of rounds until every user decoded."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = 1.0
    for r in success_probs:
        out *= -math.expm1(n * math.log1p(-r)) if r < 1 else 1.0
    return out


def draw_transmission_count(success_probs: Sequence[float], rng: np.random.Generator) -> int:
    """Rounds needed until all users decode: max of independent Geometric(r_j)."""
    if len(success_probs) == 0:
        raise ValueError("need at least one requester")
    n = 1
    for r in success_probs:
        if r < 1:
            k = int(rng.geometric(r))
            if k > n:
                n = k
    return n


def draw_transmission_count_rounds(success_probs: Sequence[float], rng: np.random.Generator) -> int:
    """Same law as :func:`draw_transmission_count`, by simulating rounds and
    dropping users as they decode."""
    pending = [r for r in success_probs]
    if not pending:
        raise ValueError("need at least one requester")
    n = 0
    while pending:
        n += 1
        u = rng.random(len(pending))
        pending = [r for r, x in zip(pending, u) if x >= r]
    return n


def worst_rate_service_time(gains: Sequence[float], file_bits: float, snr: float,
                            bandwidth: float) -> float:
    """Seconds to send ``file_bits`` at the rate of the weakest user's gain."""
    if len(gains) == 0:
        raise ValueError("need at least one requester")
    g = min(gains)
    if g <= 0:
        return math.inf
    return file_bits / (bandwidth * math.log2(1.0 + g * snr) / 2.0)


@dataclass(frozen=True)
class ChannelModel:
    """Link description shared by every transmission of a run.

    ``success`` holds r_j per user for the retransmit kind. ``fixed_rate``
    is the spectral efficiency (bits/s/Hz, per real dimension) at which a
    file of nominal size s is sent in exactly s seconds; the worst-rate kind
    scales transmission time relative to it.
    """

    kind: str = ERROR_FREE
    success: tuple = ()
    snr: float = 10.0
    bandwidth: float = 10e6
    fixed_rate: float = 1.0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        object.__setattr__(self, "success", tuple(float(r) for r in self.success))
        if any(not 0 < r <= 1 for r in self.success):
            raise ValueError("success probabilities must lie in (0, 1]")
        if self.snr <= 0 or self.bandwidth <= 0 or self.fixed_rate <= 0:
            raise ValueError("snr, bandwidth and fixed_rate must be positive")

    @classmethod
    def rayleigh_retransmit(cls, user_count: int, snr: float, fixed_rate: float = 1.0,
                            bandwidth: float = 10e6) -> "ChannelModel":
        r = success_probability_awgn_rayleigh(snr, fixed_rate)
        return cls(RETRANSMIT, (r,) * user_count, snr, bandwidth, fixed_rate)

    def success_for(self, user_count: int) -> tuple:
        if not self.success:
            return (1.0,) * user_count
        if len(self.success) == 1:
            return self.success * user_count
        if len(self.success) != user_count:
            raise ValueError(f"channel has {len(self.success)} success probs for {user_count} users")
        return self.success


class ChannelSampler:
    """Turns a nominal transmission time into an actual one for a user set."""

    def __init__(self, model: ChannelModel, user_count: int, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self.kind = model.kind
        self.success = model.success_for(user_count) if model.kind == RETRANSMIT else ()
        self.trivial = self.kind == ERROR_FREE or (
            self.kind == RETRANSMIT and all(r == 1.0 for r in self.success))
        self._gains: list = []
        self._pos = 0

    def _gain(self) -> float:
        if self._pos >= len(self._gains):
            self._gains = self.rng.exponential(1.0, size=_BLOCK).tolist()
            self._pos = 0
        g = self._gains[self._pos]
        self._pos += 1
        return g

    def service_time(self, nominal: float, users) -> float:
        if self.trivial:
            return nominal
        if self.kind == RETRANSMIT:
            return nominal * draw_transmission_count([self.success[u] for u in users], self.rng)
        m = self.model
        gains = [self._gain() for _ in users]
        bits = nominal * m.bandwidth * m.fixed_rate
        return worst_rate_service_time(gains, bits, m.snr, m.bandwidth)
