"""Server-side queues and the scheduling decisions of every delivery scheme.

All queues here only ever remove entries from their head(s), so a deque
plus a file -> entry index for merging is enough.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Sequence

from .cache import PartitionPlacement

TYPE1 = 1
TYPE2 = 2

UNCODED = "uncoded"
CODED_PAIR = "coded-pair"
CODED_BATCH = "coded-batch"
DUMMY_PADDED = "dummy-padded-batch"
IDLE = "idle"


class UnsupportedConfiguration(ValueError):
    pass


class QueueEntry:
    """A pending transmission of ``file`` to the merged requesters.

    ``requesters`` holds (user, arrival_time, request_index) triples; one
    user may appear more than once if it re-requested while waiting.
    """

    __slots__ = ("file", "requesters", "enqueue_time")

    def __init__(self, file: int, user: int, time: float, index: int = -1):
        self.file = file
        self.requesters = [(user, time, index)]
        self.enqueue_time = time

    @property
    def users(self) -> set:
        return {r[0] for r in self.requesters}

    def waiting_time(self, now: float) -> float:
        return now - self.enqueue_time

    def __repr__(self):
        return f"QueueEntry({self.file}, {sorted(self.users)})"


class MergeQueue:
    """Head-to-tail queue of entries.

    With ``merge`` on, a request for a file that already has a waiting entry
    joins it (type 2); otherwise it opens a new tail entry (type 1). Entries
    leave the merge index the moment they are dequeued, so a request for a
    file currently in service always opens a new entry.
    """

    __slots__ = ("merge", "entries", "_index")

    def __init__(self, merge: bool = True):
        self.merge = merge
        self.entries: deque = deque()
        self._index: dict = {}

    def enqueue(self, file: int, user: int, time: float, index: int = -1) -> int:
        if self.merge:
            e = self._index.get(file)
            if e is not None:
                e.requesters.append((user, time, index))
                return TYPE2
            e = QueueEntry(file, user, time, index)
            self._index[file] = e
        else:
            e = QueueEntry(file, user, time, index)
        self.entries.append(e)
        return TYPE1

    def head(self) -> Optional[QueueEntry]:
        return self.entries[0] if self.entries else None

    def peek(self, n: int = 2) -> list:
        es = self.entries
        return [es[k] for k in range(min(n, len(es)))]

    def popleft(self) -> QueueEntry:
        e = self.entries.popleft()
        if self.merge and self._index.get(e.file) is e:
            del self._index[e.file]
        return e

    def pending_requests(self) -> int:
        return sum(len(e.requesters) for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __repr__(self):
        return f"MergeQueue({list(self.entries)})"


class MulticastQueue(MergeQueue):
    """Single server queue with merging and an in-service slot."""

    __slots__ = ("in_service",)

    def __init__(self):
        super().__init__(merge=True)
        self.in_service: Optional[QueueEntry] = None


class PerUserQueues:
    """One queue per user; ``merge`` controls merging inside each queue."""

    def __init__(self, user_count: int, merge: bool = True):
        self.queues = [MergeQueue(merge) for _ in range(user_count)]

    def enqueue(self, file: int, user: int, time: float, index: int = -1) -> int:
        return self.queues[user].enqueue(file, user, time, index)

    def heads(self) -> list:
        return [(u, q.entries[0]) for u, q in enumerate(self.queues) if q.entries]

    def __len__(self) -> int:
        return sum(len(q) for q in self.queues)

    def __getitem__(self, user: int) -> MergeQueue:
        return self.queues[user]


@dataclass
class ServiceDecision:
    """What the server transmits next.

    ``entries`` are the queue entries completed by this transmission and
    ``users`` the distinct receivers whose decoding the channel must cover.
    ``nominal_time`` is the duration on an error-free link. ``coded_checks``
    lists (user, wanted_file, side_information_file) for every user that
    decodes a coded pair from its cache.
    """

    kind: str
    entries: list = field(default_factory=list)
    users: tuple = ()
    nominal_time: float = 0.0
    coded_checks: list = field(default_factory=list)
    slots: int = 0

    @property
    def idle(self) -> bool:
        return self.kind == IDLE


def enqueue_merge(queue: MergeQueue, request, index: int = -1) -> int:
    """Merge ``request`` (a RequestEvent) into ``queue``; returns 1 or 2."""
    return queue.enqueue(request.file, request.user, request.time, index)


def multicast_dequeue(queue: MergeQueue) -> Optional[QueueEntry]:
    """Pop the head entry for service; None when the queue is idle."""
    if not queue:
        return None
    e = queue.popleft()
    if isinstance(queue, MulticastQueue):
        queue.in_service = e
    return e


def _distinct_users(entries) -> tuple:
    seen = []
    for e in entries:
        for u, _, _ in e.requesters:
            if u not in seen:
                seen.append(u)
    return tuple(seen)


def head_service(queue: MergeQueue, sizes: Sequence[float]) -> Optional[ServiceDecision]:
    """Plain FIFO / multicast service of the head entry."""
    e = multicast_dequeue(queue)
    if e is None:
        return None
    return ServiceDecision(UNCODED, [e], _distinct_users([e]), sizes[e.file], slots=1)


def pcs_service_time(active_users: int, capacity: float, file_count: int,
                     file_time: float = 1.0) -> float:
    """Duration of one partition-coded delivery to ``active_users`` users:
    l (1 - C/M) / (1 + C l / M) file times. Zero users means idle (0.0)."""
    if not 0 <= capacity <= file_count:
        raise ValueError("need 0 <= C <= M")
    if active_users < 0:
        raise ValueError("active_users must be nonnegative")
    if active_users == 0:
        return 0.0
    frac = capacity / file_count
    return file_time * active_users * (1.0 - frac) / (1.0 + frac * active_users)


def upo_rate(users: int, t, distinct_files: int) -> float:
    """Load, in file transmissions, of the uncoded-placement optimal delivery:
    [C(K, t+1) - C(K-Ne, t+1)] / C(K, t)."""
    if isinstance(t, float):
        if not t.is_integer():
            raise UnsupportedConfiguration(f"t = {t:g} must be an integer")
        t = int(t)
    if not 0 <= t <= users:
        raise ValueError("need 0 <= t <= K")
    if not 1 <= distinct_files <= users:
        raise ValueError("need 1 <= Ne <= K")
    k, ne = users, distinct_files
    return (math.comb(k, t + 1) - math.comb(k - ne, t + 1)) / math.comb(k, t)


def cdls_select(queues: PerUserQueues, caches, now: float,
                sizes: Sequence[float]) -> Optional[ServiceDecision]:
    """Coded delivery with LRU caches.

    Head-of-line requests are checked pairwise: heads (u wants A) and
    (v wants B), A != B, can be XOR-ed when u caches B and v caches A. Among
    such pairs the one with the largest combined waiting time wins. Without
    a pair the longest-waiting head is sent uncoded. Either way every other
    head that can decode the transmission is served by it too.
    """
    heads = queues.heads()
    if not heads:
        return None
    best = None
    best_wait = -math.inf
    for (u, a), (v, b) in combinations(heads, 2):
        if a.file != b.file and b.file in caches[u] and a.file in caches[v]:
            w = (now - a.enqueue_time) + (now - b.enqueue_time)
            if w > best_wait:
                best, best_wait = (a.file, b.file), w
    if best is not None:
        fa, fb = best
        served, checks = [], []
        for u, e in heads:
            if e.file == fa and fb in caches[u]:
                checks.append((u, fa, fb))
            elif e.file == fb and fa in caches[u]:
                checks.append((u, fb, fa))
            else:
                continue
            served.append(u)
        entries = [queues[u].popleft() for u in served]
        return ServiceDecision(CODED_PAIR, entries, tuple(served),
                               max(sizes[fa], sizes[fb]), checks, slots=2)
    u0, e0 = max(heads, key=lambda h: (now - h[1].enqueue_time, -h[0]))
    served = [u for u, e in heads if e.file == e0.file]
    entries = [queues[u].popleft() for u in served]
    return ServiceDecision(UNCODED, entries, tuple(served), sizes[e0.file], slots=1)


def lrucm_select(queue: MergeQueue, caches, sizes: Sequence[float]) -> Optional[ServiceDecision]:
    """Single multicast queue with a coding check on the first two entries.

    The XOR of head file A and next file B is decodable when every head
    requester caches B and every next requester caches A. Whichever option
    serves more users is used; ties go to the uncoded transmission.
    """
    if not queue:
        return None
    first = queue.peek(2)
    head = first[0]
    head_users = head.users
    if len(first) == 2:
        nxt = first[1]
        nxt_users = nxt.users
        if (head.file != nxt.file
                and all(nxt.file in caches[u] for u in head_users)
                and all(head.file in caches[u] for u in nxt_users)
                and len(head_users) + len(nxt_users) > len(head_users)):
            checks = [(u, head.file, nxt.file) for u in sorted(head_users)]
            checks += [(u, nxt.file, head.file) for u in sorted(nxt_users)]
            entries = [queue.popleft(), queue.popleft()]
            return ServiceDecision(CODED_PAIR, entries, _distinct_users(entries),
                                   max(sizes[head.file], sizes[nxt.file]), checks, slots=2)
    return head_service(queue, sizes)


PCS_M = "PCS-M"
MPCS_M = "MPCS-M"


def pcsm_batch(queues: PerUserQueues, variant: str, placement: PartitionPlacement,
               file_time: float = 1.0) -> Optional[ServiceDecision]:
    """Partition-coded batch over the head of every user queue.

    PCS-M pads empty queues with dummy requests and always codes for all L
    users; MPCS-M codes only over the nonempty queues.
    """
    heads = queues.heads()
    if not heads:
        return None
    if variant == PCS_M:
        slots = placement.user_count
        kind = DUMMY_PADDED if len(heads) < slots else CODED_BATCH
    elif variant == MPCS_M:
        slots = len(heads)
        kind = CODED_BATCH
    else:
        raise ValueError(f"unknown partition variant {variant!r}")
    st = pcs_service_time(slots, placement.capacity, placement.file_count, file_time)
    users = tuple(u for u, _ in heads)
    entries = [queues[u].popleft() for u in users]
    return ServiceDecision(kind, entries, users, st, slots=slots)


def upo_batch(queues: PerUserQueues, placement: PartitionPlacement,
              file_time: float = 1.0) -> Optional[ServiceDecision]:
    """Coded batch over nonempty heads at the uncoded-placement optimal rate.

    The placement is fixed for all L users, so idle users are treated as
    repeating an already-demanded file: the load is upo_rate(L, t, Ne) with
    Ne the number of distinct files among the served heads.
    """
    heads = queues.heads()
    if not heads:
        return None
    t = placement.integer_t()
    ne = len({e.file for _, e in heads})
    st = file_time * upo_rate(placement.user_count, t, ne)
    users = tuple(u for u, _ in heads)
    entries = [queues[u].popleft() for u in users]
    return ServiceDecision(CODED_BATCH, entries, users, st, slots=len(users))
