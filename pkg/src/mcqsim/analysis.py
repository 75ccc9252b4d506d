"""Analytical mean-delay approximations.

The multicast queue is approximated by an M/G/1 queue fed by the
*effective* (type-1) arrival rates lam_i / (1 + lam_i d), where d is the
mean type-1 waiting time itself. This gives a scalar fixed point d = f(d)
which has a unique root above the point d0 where utilization reaches one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .cache import NoFiniteRootError, che_constant
from .queues import pcs_service_time
from .traffic import Catalog, RateMatrix

EQ5 = "eq5"  # full Pollaczek-Khinchine factor
EQ6 = "eq6"  # rho / (1 - rho) only
BRACKET_MODES = (EQ5, EQ6)

ENUMERATION_LIMIT = 15
MC_SAMPLES = 100_000


class ConvergenceError(RuntimeError):
    def __init__(self, msg, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


@dataclass
class FixedPointSolution:
    d: float
    rho: float
    residual: float
    effective_rates: np.ndarray
    file_rates: np.ndarray
    bracket_mode: str = EQ5
    d0: float = 0.0
    mean_service: float = 0.0
    var_service: float = 0.0
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    def per_file_delay(self) -> np.ndarray:
        """Mean delay over all requests (type 1 and 2) reaching the queue, per
        file; NaN for files that never arrive."""
        out = np.full(self.file_rates.shape, np.nan)
        pos = self.file_rates > 0
        out[pos] = [per_file_mean_delay(l, lp, self.d)
                    for l, lp in zip(self.file_rates[pos], self.effective_rates[pos])]
        return out

    def mixture_delay(self) -> float:
        """Rate-weighted average of :meth:`per_file_delay`."""
        lam = self.file_rates
        tot = lam.sum()
        if tot == 0 or self.d == 0:
            return 0.0
        lp = self.effective_rates
        return float(np.sum(lp * self.d + (lam - lp) * self.d / 2) / tot)


def _effective(lam: np.ndarray, d: float) -> np.ndarray:
    """lam / (1 + lam d), with infinite rates mapped to 1/d."""
    with np.errstate(invalid="ignore", divide="ignore"):
        out = lam / (1.0 + lam * d)
    inf = np.isinf(lam)
    if inf.any():
        out[inf] = 1.0 / d if d > 0 else math.inf
    return out


def _bisect_decreasing(h, lo: float, hi: float) -> float:
    """Root of a strictly decreasing h with h(lo) > 0 > h(hi), bisected to
    adjacent floats."""
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        hm = h(mid)
        if hm == 0:
            return mid
        if hm > 0:
            lo = mid
        else:
            hi = mid
    return lo if abs(h(lo)) <= abs(h(hi)) else hi


def service_moments(file_rates, sizes) -> tuple:
    """Mean and variance of the service time when file i is picked with
    probability lam_i / sum(lam). Infinite rates share the mass equally."""
    lam = np.asarray(file_rates, dtype=float)
    s = np.asarray(sizes, dtype=float)
    inf = np.isinf(lam)
    w = inf / inf.sum() if inf.any() else lam / lam.sum()
    es = float(np.dot(w, s))
    var = float(np.dot(w, (s - es) ** 2))
    return es, var


def solve_fixed_point(file_rates, mean_service: float, var_service: float = 0.0,
                      bracket_mode: str = EQ5) -> FixedPointSolution:
    """Root of f(d) = d with rho(d) = E[S] sum_i lam_i / (1 + lam_i d) and
    f = rho/(1-rho) * K, where K = E[S]/2 + Var[S]/(2 E[S]) (``eq5``) or
    K = 1 (``eq6``)."""
    if bracket_mode not in BRACKET_MODES:
        raise ValueError(f"bracket_mode must be one of {BRACKET_MODES}")
    lam = np.asarray(file_rates, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("rates must be nonnegative")
    es = float(mean_service)
    if not lam.any() or es == 0:
        return FixedPointSolution(0.0, 0.0, 0.0, np.zeros_like(lam), lam, bracket_mode,
                                  mean_service=es, var_service=var_service)
    K = 1.0 if bracket_mode == EQ6 else es / 2 + var_service / (2 * es)

    def rho(d):
        return es * float(np.sum(_effective(lam, d)))

    def f(d):
        r = rho(d)
        return math.inf if r >= 1 else r / (1 - r) * K

    if rho(0.0) < 1:
        d0 = 0.0
    else:
        hi = 1.0
        while rho(hi) >= 1:
            hi *= 2
        # smallest d with rho(d) < 1
        lo = 0.0
        while True:
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if rho(mid) >= 1:
                lo = mid
            else:
                hi = mid
        d0 = hi

    def h(d):
        return f(d) - d

    hi = max(2 * d0, 1.0)
    while h(hi) >= 0:
        hi *= 2
    d = _bisect_decreasing(h, d0, hi)
    r = rho(d)
    if r >= 1:  # root sits on the last float of the pole; step off it
        d = np.nextafter(d, math.inf)
        r = rho(d)
    return FixedPointSolution(float(d), r, abs(h(d)), _effective(lam, d), lam, bracket_mode,
                              d0=d0, mean_service=es, var_service=var_service)


def multicast_fixed_point(file_rates, catalog: Catalog, bracket_mode: str = EQ5) -> FixedPointSolution:
    """Mean type-1 waiting time of the multicast queue without caches."""
    lam = np.asarray(file_rates, dtype=float)
    if lam.shape != (catalog.file_count,):
        raise ValueError("need one rate per file")
    if not lam.any():
        return solve_fixed_point(lam, 0.0, 0.0, bracket_mode)
    es, var = service_moments(lam, catalog.sizes)
    return solve_fixed_point(lam, es, var, bracket_mode)


def per_file_mean_delay(lam: float, lam_eff: float, d: float) -> float:
    """Type-1 requests wait d, merged (type-2) ones about d/2."""
    if lam <= 0:
        raise ValueError("file rate must be positive")
    return (lam_eff * d + (lam - lam_eff) * d / 2) / lam


def upper_bound_eq6(mean_service: float, file_count: int) -> float:
    """Infinite-rate limit of the eq6 fixed point: E[S] M (1 + sqrt(1 + 4/(M E[S]))) / 2."""
    x = mean_service * file_count
    return x * (1 + math.sqrt(1 + 4 / x)) / 2


def fifo_mean_delay(rates: RateMatrix, catalog: Catalog) -> float:
    """Pollaczek-Khinchine mean wait of the FIFO queue; ``inf`` if rho >= 1."""
    lam = rates.file_rates
    total = lam.sum()
    if total == 0:
        return 0.0
    es, var = service_moments(lam, catalog.sizes)
    rho = total * es
    if rho >= 1:
        return math.inf
    return rho / (1 - rho) * (es / 2 + var / (2 * es))


def miss_rates(rates: RateMatrix, capacity: float) -> tuple:
    """Per (file, user) miss rates under Che's approximation, and T_C per user.

    A user whose cache holds every file it requests misses nothing
    (T_C = inf)."""
    lam = rates.lam
    L = rates.user_count
    tc = np.zeros(L)
    pm = np.ones_like(lam)
    for j in range(L):
        col = lam[:, j]
        try:
            tc[j] = che_constant(col, capacity)
        except NoFiniteRootError:
            tc[j] = math.inf
        if math.isinf(tc[j]):
            pm[:, j] = np.where(col > 0, 0.0, 1.0)
        else:
            pm[:, j] = np.exp(-col * tc[j])
    return lam * pm, tc, pm


def lru_fed_fixed_point(rates: RateMatrix, capacity: float, catalog: Catalog,
                        bracket_mode: str = EQ5) -> FixedPointSolution:
    """Multicast queue fed by LRU miss streams.

    ``extra`` carries ``che_times``, ``miss_prob`` and ``request_delay``, the
    mean queuing delay over *all* user requests with local hits counted as
    zero.
    """
    lam_m, tc, pm = miss_rates(rates, capacity)
    per_file = lam_m.sum(axis=1)
    sol = multicast_fixed_point(per_file, catalog, bracket_mode)
    total = rates.total_rate
    sol.extra.update(che_times=tc, miss_prob=pm, miss_rates=lam_m,
                     request_delay=sol.mixture_delay() * per_file.sum() / total if total else 0.0,
                     hit_ratio=1 - per_file.sum() / total if total else 0.0)
    return sol


def _masks(L: int) -> np.ndarray:
    m = np.arange(1 << L)
    return ((m[:, None] >> np.arange(L)) & 1).astype(bool)


def transmission_moments(success_probs, bits: np.ndarray, tol: float = 1e-16) -> tuple:
    """E[N] and E[N^2] for every user subset given as rows of ``bits``.

    Uses P(N > n) = 1 - prod_{k in S} (1 - (1 - r_k)^n), summed until the
    tail is negligible for every subset.
    """
    r = np.asarray(success_probs, dtype=float)
    en = np.zeros(bits.shape[0])
    en2 = np.zeros(bits.shape[0])
    empty = ~bits.any(axis=1)
    n = 0
    while True:
        # P(N > n)
        if n == 0:
            tail = np.where(empty, 0.0, 1.0)
        else:
            with np.errstate(divide="ignore"):
                a = -np.expm1(n * np.log1p(-r))
            a[r >= 1] = 1.0
            logp = bits @ np.log(a)
            tail = -np.expm1(logp)
        en += tail
        en2 += (2 * n + 1) * tail
        n += 1
        if tail.max() < tol:
            return en, en2


class _MergedSetModel:
    """Distribution of the number of transmissions for an entry in service.

    For file i the entry was opened by user j with probability
    lam_ij / lam_i, and every other user k joined with probability
    1 - exp(-lam_ik d).
    """

    def __init__(self, rates: RateMatrix, success, sizes, exact_limit=ENUMERATION_LIMIT,
                 samples=MC_SAMPLES, seed=0):
        self.lam = rates.lam
        self.success = np.asarray(success, dtype=float)
        self.sizes = np.asarray(sizes, dtype=float)
        L = rates.user_count
        self.file_rates = rates.file_rates
        total = self.file_rates.sum()
        self.weights = self.file_rates / total
        self.active = np.flatnonzero(self.file_rates > 0)
        # identical users: only the number of merged users matters
        self.homogeneous = bool(np.all(self.success == self.success[0])
                                and np.allclose(self.lam, self.lam[:, :1], rtol=0, atol=0))
        self.exact = self.homogeneous or L <= exact_limit
        if self.homogeneous:
            self.bits = np.tri(L, dtype=bool)  # row k-1: the first k users
            self.en, self.en2 = transmission_moments(self.success, self.bits)
        elif self.exact:
            self.bits = _masks(L)
            self.en, self.en2 = transmission_moments(self.success, self.bits)
        else:
            rng = np.random.default_rng(seed)
            cdf = np.cumsum(self.weights)
            self.mc_file = np.minimum(np.searchsorted(cdf, rng.random(samples), side="right"),
                                      len(cdf) - 1)
            self.mc_origin_u = rng.random(samples)
            self.mc_join_u = rng.random((samples, L))
            r = np.clip(self.success, 1e-300, 1.0)
            self.mc_geo = np.where(r >= 1, 1, rng.geometric(r, size=(samples, L)))

    def moments(self, d: float) -> tuple:
        """(E[S], Var[S]) of the entry in service. Entries of file i are
        opened at the effective rate lam_i / (1 + lam_i d), which sets the
        file mixture."""
        if self.exact:
            return self._moments_exact(d)
        return self._moments_mc(d)

    def file_moments(self, i: int, d: float) -> tuple:
        """E[N], E[N^2] for an entry of file i."""
        if self.homogeneous:
            L = self.lam.shape[1]
            q = -math.expm1(-self.lam[i, 0] * d)
            p = stats.binom.pmf(np.arange(L), L - 1, q)
            return float(p @ self.en), float(p @ self.en2)
        lam = self.lam[i]
        q = -np.expm1(-lam * d)
        w = lam / lam.sum()
        bits = self.bits
        fac = np.where(bits, q, 1.0 - q)
        ones = np.ones((fac.shape[0], 1))
        pre = np.cumprod(np.hstack([ones, fac]), axis=1)[:, :-1]
        suf = np.cumprod(np.hstack([fac, ones])[:, ::-1], axis=1)[:, ::-1][:, 1:]
        p = (bits * (pre * suf) * w).sum(axis=1)
        return float(p @ self.en), float(p @ self.en2)

    def _mix(self, d):
        lp = _effective(self.file_rates, d)
        return lp / lp.sum()

    def _moments_exact(self, d):
        w = self._mix(d)
        es = es2 = 0.0
        for i in self.active:
            en, en2 = self.file_moments(i, d)
            s = self.sizes[i]
            es += w[i] * s * en
            es2 += w[i] * s * s * en2
        return es, max(es2 - es * es, 0.0)

    def _moments_mc(self, d):
        lam = self.lam[self.mc_file]  # samples x L
        rows = lam.sum(axis=1, keepdims=True)
        cw = np.cumsum(lam / rows, axis=1)
        origin = np.minimum((cw < self.mc_origin_u[:, None]).sum(axis=1), lam.shape[1] - 1)
        member = self.mc_join_u < -np.expm1(-lam * d)
        member[np.arange(len(origin)), origin] = True
        n = np.where(member, self.mc_geo, 0).max(axis=1)
        s = self.sizes[self.mc_file] * n
        # files were sampled by lam_i; reweight to the effective-rate mixture
        iw = (self._mix(d) / self.weights)[self.mc_file]
        es = float(np.mean(iw * s))
        es2 = float(np.mean(iw * s * s))
        return es, max(es2 - es * es, 0.0)


def fading_fixed_point(rates: RateMatrix, success_probs, catalog: Catalog,
                       bracket_mode: str = EQ5, damping: float = 0.5, tol: float = 1e-8,
                       max_iter: int = 500, exact_limit: int = ENUMERATION_LIMIT,
                       samples: int = MC_SAMPLES, seed: int = 0) -> FixedPointSolution:
    """Multicast queue over a fixed-rate link with retransmissions.

    The service-time moments depend on how many users are merged into the
    entry being served, which depends on d. Each outer step solves the
    scalar fixed point with the current moments and moves d halfway there.
    """
    L = rates.user_count
    r = np.asarray(success_probs, dtype=float)
    if r.size == 1:
        r = np.repeat(r, L)
    if r.shape != (L,) or np.any(r <= 0) or np.any(r > 1):
        raise ValueError("need one success probability in (0, 1] per user")
    lam = rates.file_rates
    if not lam.any():
        return solve_fixed_point(lam, 0.0, 0.0, bracket_mode)
    model = _MergedSetModel(rates, r, catalog.sizes, exact_limit, samples, seed)
    d = 0.0
    history = []
    for it in range(1, max_iter + 1):
        es, var = model.moments(d)
        sol = solve_fixed_point(lam, es, var, bracket_mode)
        new = d + damping * (sol.d - d) if it > 1 else sol.d
        history.append(new)
        if abs(new - d) < tol:
            es, var = model.moments(new)
            out = solve_fixed_point(lam, es, var, bracket_mode)
            if abs(out.d - new) < 10 * tol:
                out.iterations = it
                out.extra["trace"] = history
                out.extra["exact"] = model.exact
                return out
        d = new
    raise ConvergenceError(f"fading fixed point did not converge in {max_iter} steps", history)


def coded_per_user_fixed_point(rates: RateMatrix, capacity: float, catalog: Catalog,
                               bracket_mode: str = EQ5) -> list:
    """Per-user queues of the partition-coded scheme with merging.

    Each user's queue is treated alone, with deterministic service equal to
    one coded delivery to all L users.
    """
    if not catalog.equal_sizes:
        raise ValueError("coded schemes need equal file sizes")
    M, L = rates.file_count, rates.user_count
    s = pcs_service_time(L, capacity, M, catalog.file_sizes[0])
    return [solve_fixed_point(rates.lam[:, j], s, 0.0, bracket_mode) for j in range(L)]
