from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Eviction:
    time: int
    request_id: int
    tokens: int


class KvLedger:
    """Alive KV tokens per request, with a usage sample after every change.

    ``reserved`` counts tokens promised to batches in flight (one per decode
    member, one per prefill member for its first output token) so admission
    checks never let the committed total pass capacity.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.alive: dict[int, int] = {}
        self.total = 0
        self.reserved = 0
        self.evictions: list[Eviction] = []
        self.samples: list[tuple[int, int]] = [(0, 0)]
        self.peak = 0
        self.step_log = None  # optional list of (request_id, emitted, footprint)

    def _sample(self, t: int) -> None:
        if self.total < 0:
            raise AssertionError("KV ledger went negative")
        if self.total > self.peak:
            self.peak = self.total
        if self.samples[-1][0] == t:
            self.samples[-1] = (t, self.total)
        else:
            self.samples.append((t, self.total))

    def headroom(self) -> int:
        return self.capacity - self.total - self.reserved

    def allocate(self, items, t: int) -> None:
        """``items``: iterable of (request_id, tokens)."""
        for rid, n in items:
            self.alive[rid] = self.alive.get(rid, 0) + n
            self.total += n
        self._sample(t)

    def free(self, rids, t: int) -> int:
        freed = 0
        for rid in rids:
            freed += self.alive.pop(rid)
        self.total -= freed
        self._sample(t)
        return freed

    def evict(self, rids, t: int) -> None:
        for rid in rids:
            n = self.alive.pop(rid)
            self.total -= n
            self.evictions.append(Eviction(t, rid, n))
        self._sample(t)
