"""Discrete-event simulation of the download queue for every scheme."""
from __future__ import annotations

import heapq
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from . import queues as Q
from .cache import LruCache, PartitionPlacement
from .channel import ERROR_FREE, RETRANSMIT, ChannelModel, ChannelSampler
from .traffic import Catalog, RateMatrix, RequestStream, build_rate_matrix, replication_rng, zipf_pmf

FIFO = "FIFO"
MULTICAST = "MULTICAST"
FADING_RETX = "FADING-RETX"
LRU_M = "LRU-M"
LRU_CM = "LRU-CM"
CDLS = "CDLS"
CDLS_M = "CDLS-M"
PCS_M = Q.PCS_M
MPCS_M = Q.MPCS_M
UPO_M = "UPO-M"

SCHEMES = (FIFO, MULTICAST, FADING_RETX, LRU_M, LRU_CM, CDLS, CDLS_M, PCS_M, MPCS_M, UPO_M)
LRU_SCHEMES = (LRU_M, LRU_CM, CDLS, CDLS_M)
PARTITION_SCHEMES = (PCS_M, MPCS_M, UPO_M)
MERGING_SCHEMES = (MULTICAST, FADING_RETX, LRU_M, LRU_CM, CDLS_M, PCS_M, MPCS_M, UPO_M)

QUEUING_DELAY = "queuing-delay"
SOJOURN = "sojourn"
METRICS = (QUEUING_DELAY, SOJOURN)

SWEEP_AXES = ("user_count", "per_user_rate", "C", "alpha", "snr")

N_BATCHES = 20

_DEPARTURE = 0  # sorts before arrivals at equal times
_ARRIVAL = 1


@dataclass(frozen=True)
class SchemeConfig:
    """Everything needed to reproduce one experiment.

    Traffic is homogeneous Zipf unless ``rates`` is given explicitly; the
    catalog is uniform at ``file_time`` unless ``file_sizes`` is given.
    ``horizon_events`` counts exogenous requests per replication.
    """

    scheme: str = MULTICAST
    file_count: int = 100
    file_time: float = 1.0
    user_count: int = 10
    per_user_rate: float = 0.1
    zipf_alpha: float = 1.0
    cache_capacity: float = 0
    channel: ChannelModel = field(default_factory=ChannelModel)
    horizon_events: int = 200_000
    warmup_frac: float = 0.2
    seed: int = 1
    replications: int = 1
    metric: str = QUEUING_DELAY
    rates: Optional[RateMatrix] = None
    file_sizes: Optional[tuple] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.horizon_events <= 0:
            raise ValueError("horizon_events must be positive")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.cache_capacity < 0:
            raise ValueError("cache capacity must be nonnegative")
        cat, rm = self.catalog, self.rate_matrix
        if rm.file_count != cat.file_count:
            raise ValueError("rate matrix and catalog disagree on M")
        if self.scheme in PARTITION_SCHEMES:
            if not cat.equal_sizes:
                raise ValueError(f"{self.scheme} requires all files to have the same size")
            if self.cache_capacity > cat.file_count:
                raise ValueError("cache capacity exceeds M")
            if self.scheme == UPO_M:
                self.placement.integer_t()
        if self.scheme in LRU_SCHEMES and int(self.cache_capacity) != self.cache_capacity:
            raise ValueError("LRU cache capacity must be a whole number of files")
        if self.scheme == FADING_RETX and self.channel.kind != RETRANSMIT:
            raise ValueError("FADING-RETX needs a retransmit channel")

    @property
    def catalog(self) -> Catalog:
        if self.file_sizes is not None:
            return Catalog(self.file_sizes)
        return Catalog.uniform(self.file_count, self.file_time)

    @property
    def rate_matrix(self) -> RateMatrix:
        if self.rates is not None:
            return self.rates
        return build_rate_matrix(self.file_count, self.user_count, self.per_user_rate,
                                 zipf_pmf(self.file_count, self.zipf_alpha))

    @property
    def placement(self) -> PartitionPlacement:
        rm = self.rate_matrix
        return PartitionPlacement(rm.file_count, rm.user_count, self.cache_capacity)

    def with_axis(self, axis: str, value) -> "SchemeConfig":
        if axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
        if self.rates is not None and axis in ("user_count", "per_user_rate", "alpha"):
            raise ValueError(f"cannot sweep {axis} over an explicit rate matrix")
        if axis == "user_count":
            n = int(value)
            ch = self.channel
            if len(ch.success) > 1:
                raise ValueError("cannot sweep user_count with per-user success probabilities")
            return replace(self, user_count=n)
        if axis == "per_user_rate":
            return replace(self, per_user_rate=float(value))
        if axis == "C":
            return replace(self, cache_capacity=value)
        if axis == "alpha":
            return replace(self, zipf_alpha=float(value))
        ch = self.channel
        succ = ch.success
        if ch.kind == RETRANSMIT:
            from .channel import success_probability_awgn_rayleigh
            r = success_probability_awgn_rayleigh(float(value), ch.fixed_rate)
            succ = (r,) * max(1, len(ch.success))
        return replace(self, channel=replace(ch, snr=float(value), success=succ))


@dataclass
class DelayStats:
    """Delay estimates of one replication, or the aggregate of several.

    ``mean_delay`` follows the configured metric. Waits are measured to the
    start of the serving transmission, sojourns to its end; local cache hits
    count as zero for both. Per-file and per-user arrays are NaN where no
    request was observed.
    """

    metric: str
    mean_delay: float
    variance: float
    ci95: float
    mean_wait: float
    mean_sojourn: float
    mean_type1_wait: float
    per_file_mean: np.ndarray
    per_user_mean: np.ndarray
    per_user_type1_wait: np.ndarray
    arrivals: int = 0
    hits: int = 0
    type1: int = 0
    type2: int = 0
    served: int = 0
    waiting: int = 0
    in_service: int = 0
    max_queue_len: int = 0
    max_wait: float = 0.0
    unstable: bool = False
    sim_time: float = 0.0
    replications: list = field(default_factory=list)

    @property
    def conserved(self) -> bool:
        return (self.arrivals == self.hits + self.type2 + self.type1
                and self.type1 == self.served + self.waiting + self.in_service)


def batch_means_ci(values, n_batches: int = N_BATCHES, level: float = 0.95) -> float:
    """Half-width of the Student-t CI from contiguous batch means."""
    values = np.asarray(values, dtype=float)
    b = values.size // n_batches
    if b == 0:
        return math.nan
    means = values[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    sd = means.std(ddof=1)
    return float(stats.t.ppf(0.5 + level / 2, n_batches - 1) * sd / math.sqrt(n_batches))


def trend_unstable(times, lengths, n_batches: int = N_BATCHES, alpha: float = 0.01) -> bool:
    """Growth test on sampled queue lengths.

    Samples are averaged in contiguous batches, then regressed on batch
    index. Flags a significant positive slope whose fitted rise across the
    run is at least half the average level (so small drifts of a stationary
    queue are not reported).
    """
    lengths = np.asarray(lengths, dtype=float)
    b = lengths.size // n_batches
    if b < 2:
        return False
    means = lengths[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    if np.ptp(means) == 0:
        return False
    fit = stats.linregress(np.arange(n_batches), means)
    rise = fit.slope * (n_batches - 1)
    return bool(fit.slope > 0 and fit.pvalue < alpha and rise >= 0.5 * means.mean() + 1.0)


class _Server:
    """Scheme-specific queue state plus the user caches the server tracks."""

    def __init__(self, cfg: SchemeConfig):
        rm = cfg.rate_matrix
        self.scheme = s = cfg.scheme
        self.sizes = cfg.catalog.file_sizes
        self.file_time = cfg.catalog.file_sizes[0]
        L = rm.user_count
        self.caches = None
        if s in LRU_SCHEMES:
            self.caches = [LruCache(int(cfg.cache_capacity)) for _ in range(L)]
        if s in (FIFO,):
            self.queue = Q.MergeQueue(merge=False)
        elif s in (MULTICAST, FADING_RETX, LRU_M, LRU_CM):
            self.queue = Q.MulticastQueue()
        else:
            self.queue = Q.PerUserQueues(L, merge=(s != CDLS))
        if s in PARTITION_SCHEMES:
            self.placement = cfg.placement
        self.decisions: Optional[list] = None  # set to a list to log coded checks

    def arrive(self, file: int, user: int, t: float, k: int) -> int:
        """0 for a local hit, else the request type."""
        if self.caches is not None and self.caches[user].access(file):
            return 0
        return self.queue.enqueue(file, user, t, k)

    def select(self, now: float) -> Optional[Q.ServiceDecision]:
        s = self.scheme
        if s in (FIFO, MULTICAST, FADING_RETX, LRU_M):
            return Q.head_service(self.queue, self.sizes)
        if s == LRU_CM:
            d = Q.lrucm_select(self.queue, self.caches, self.sizes)
        elif s in (CDLS, CDLS_M):
            d = Q.cdls_select(self.queue, self.caches, now, self.sizes)
        elif s == UPO_M:
            return Q.upo_batch(self.queue, self.placement, self.file_time)
        else:
            return Q.pcsm_batch(self.queue, s, self.placement, self.file_time)
        if d is not None and self.decisions is not None and d.coded_checks:
            # decodability is verified against the caches at decision time
            self.decisions.append([(u, want, side, side in self.caches[u])
                                   for u, want, side in d.coded_checks])
        return d

    def deliver(self, decision: Q.ServiceDecision) -> None:
        if self.caches is None:
            return
        caches = self.caches
        for e in decision.entries:
            for u in e.users:
                caches[u].deliver(e.file)

    def waiting_entries(self) -> int:
        return len(self.queue)


def simulate_replication(cfg: SchemeConfig, replication: int = 0, trace: Optional[list] = None,
                         decisions: Optional[list] = None) -> DelayStats:
    """Run one replication and return its statistics.

    Pass a list as ``trace`` to collect (time, event, file, user) tuples for
    arrivals and (time, "start", files, duration) for services.
    """
    rm = cfg.rate_matrix
    M, L = rm.file_count, rm.user_count
    n = cfg.horizon_events
    stream = RequestStream(rm, replication_rng(cfg.seed, replication, 0))
    sampler = ChannelSampler(cfg.channel, L, replication_rng(cfg.seed, replication, 1))
    server = _Server(cfg)
    server.decisions = decisions

    nan = math.nan
    wait = [nan] * n
    soj = [nan] * n
    req_file = [0] * n
    req_user = [0] * n
    is_type1 = bytearray(n)
    q_times: list = []
    q_lens: list = []

    arrivals = hits = type1 = type2 = served = 0
    max_q = 0
    max_wait = 0.0
    busy = False
    current = None  # (decision, service_time)
    seq = 0
    heap: list = []
    now = 0.0

    first = stream.next()
    if first is not None:
        heapq.heappush(heap, (first.time, _ARRIVAL, seq, first))
        seq += 1

    def start_service(t):
        nonlocal busy, current, seq, max_wait
        d = server.select(t)
        if d is None:
            busy = False
            current = None
            return
        st = sampler.service_time(d.nominal_time, d.users)
        for e in d.entries:
            for _, ta, k in e.requesters:
                w = t - ta
                wait[k] = w
                if w > max_wait:
                    max_wait = w
        if trace is not None:
            trace.append((t, "start", tuple(e.file for e in d.entries), st))
        busy = True
        current = (d, st)
        heapq.heappush(heap, (t + st, _DEPARTURE, seq, None))
        seq += 1

    while heap:
        now, kind, _, ev = heapq.heappop(heap)
        if kind == _ARRIVAL:
            k = arrivals
            arrivals += 1
            req_file[k] = ev.file
            req_user[k] = ev.user
            if trace is not None:
                trace.append((now, "arrival", ev.file, ev.user))
            typ = server.arrive(ev.file, ev.user, now, k)
            if typ == 0:
                hits += 1
                wait[k] = 0.0
                soj[k] = 0.0
            elif typ == Q.TYPE1:
                type1 += 1
                is_type1[k] = 1
            else:
                type2 += 1
            ql = server.waiting_entries()
            if ql > max_q:
                max_q = ql
            q_times.append(now)
            q_lens.append(ql + busy)
            if arrivals < n:
                nxt = stream.next()
                heapq.heappush(heap, (nxt.time, _ARRIVAL, seq, nxt))
                seq += 1
            if not busy:
                start_service(now)
        else:
            d, st = current
            for e in d.entries:
                served += 1
                for _, _, k in e.requesters:
                    soj[k] = wait[k] + st
            server.deliver(d)
            if trace is not None:
                trace.append((now, "end", tuple(e.file for e in d.entries), st))
            busy = False
            start_service(now)

    wait_a = np.asarray(wait[:arrivals])
    soj_a = np.asarray(soj[:arrivals])
    files_a = np.asarray(req_file[:arrivals], dtype=np.int64)
    users_a = np.asarray(req_user[:arrivals], dtype=np.int64)
    t1_a = np.frombuffer(bytes(is_type1[:arrivals]), dtype=np.uint8).astype(bool)

    skip = int(cfg.warmup_frac * arrivals)
    sl = slice(skip, arrivals)
    values = soj_a[sl] if cfg.metric == SOJOURN else wait_a[sl]
    w_post, s_post = wait_a[sl], soj_a[sl]
    f_post, u_post, t1_post = files_a[sl], users_a[sl], t1_a[sl]

    def group_mean(vals, idx, size):
        cnt = np.bincount(idx, minlength=size).astype(float)
        tot = np.bincount(idx, weights=vals, minlength=size)
        out = np.full(size, nan)
        np.divide(tot, cnt, out=out, where=cnt > 0)
        return out

    qs = 0 if first is None else len(q_lens)
    unstable = trend_unstable(q_times[int(cfg.warmup_frac * qs):], q_lens[int(cfg.warmup_frac * qs):])

    return DelayStats(
        metric=cfg.metric,
        mean_delay=_mean(values),
        variance=float(values.var(ddof=1)) if values.size > 1 else 0.0,
        ci95=batch_means_ci(values) if values.size else 0.0,
        mean_wait=_mean(w_post),
        mean_sojourn=_mean(s_post),
        mean_type1_wait=_mean(w_post[t1_post]),
        per_file_mean=group_mean(values, f_post, M),
        per_user_mean=group_mean(values, u_post, L),
        per_user_type1_wait=group_mean(w_post[t1_post], u_post[t1_post], L),
        arrivals=arrivals,
        hits=hits,
        type1=type1,
        type2=type2,
        served=served,
        waiting=server.waiting_entries(),
        in_service=int(busy),
        max_queue_len=max_q,
        max_wait=max_wait,
        unstable=unstable,
        sim_time=now,
    )


def _mean(a) -> float:
    return float(a.mean()) if a.size else 0.0


def aggregate(reps: Sequence[DelayStats]) -> DelayStats:
    """Combine independent replications; CI across replication means when
    there are at least two, else the single run's batch-means CI."""
    reps = list(reps)
    if len(reps) == 1:
        out = replace(reps[0])
        out.replications = reps
        return out
    means = np.array([r.mean_delay for r in reps])
    ci = float(stats.t.ppf(0.975, len(reps) - 1) * means.std(ddof=1) / math.sqrt(len(reps)))

    def avg(attr):
        return float(np.mean([getattr(r, attr) for r in reps]))

    def avg_arr(attr):
        return np.nanmean(np.vstack([getattr(r, attr) for r in reps]), axis=0) \
            if not all(np.all(np.isnan(getattr(r, attr))) for r in reps) \
            else np.full_like(getattr(reps[0], attr), math.nan)

    return DelayStats(
        metric=reps[0].metric,
        mean_delay=float(means.mean()),
        variance=avg("variance"),
        ci95=ci,
        mean_wait=avg("mean_wait"),
        mean_sojourn=avg("mean_sojourn"),
        mean_type1_wait=avg("mean_type1_wait"),
        per_file_mean=avg_arr("per_file_mean"),
        per_user_mean=avg_arr("per_user_mean"),
        per_user_type1_wait=avg_arr("per_user_type1_wait"),
        arrivals=sum(r.arrivals for r in reps),
        hits=sum(r.hits for r in reps),
        type1=sum(r.type1 for r in reps),
        type2=sum(r.type2 for r in reps),
        served=sum(r.served for r in reps),
        waiting=sum(r.waiting for r in reps),
        in_service=sum(r.in_service for r in reps),
        max_queue_len=max(r.max_queue_len for r in reps),
        max_wait=max(r.max_wait for r in reps),
        unstable=any(r.unstable for r in reps),
        sim_time=avg("sim_time"),
        replications=reps,
    )


def default_workers() -> int:
    env = os.environ.get("MCQ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _pool_map(fn, items, workers: Optional[int]):
    workers = default_workers() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(_star, [(fn, it) for it in items]))


def _star(job):
    fn, args = job
    return fn(*args)


def run(cfg: SchemeConfig, workers: Optional[int] = 1) -> DelayStats:
    """All replications of ``cfg``, aggregated; per-run stats in ``.replications``."""
    reps = _pool_map(simulate_replication, [(cfg, r) for r in range(cfg.replications)], workers)
    return aggregate(reps)


def sweep(base: SchemeConfig, axis: str, values, workers: Optional[int] = 1) -> list:
    """Independent runs along one parameter axis; returns [(value, DelayStats)].

    Every point reuses the base seed, so replication r sees the same random
    streams across the axis (common random numbers).
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    cfgs = [base.with_axis(axis, v) for v in values]
    jobs = [(c, r) for c in cfgs for r in range(c.replications)]
    flat = _pool_map(simulate_replication, jobs, workers)
    out, pos = [], 0
    for v, c in zip(values, cfgs):
        out.append((v, aggregate(flat[pos:pos + c.replications])))
        pos += c.replications
    return out
