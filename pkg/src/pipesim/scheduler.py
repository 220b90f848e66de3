"""Phase-switching and load-balancing policies for the temporally split pipeline.

* prefill -> decode: forecast KV usage at sampled future decode points and
  switch once any forecast exceeds capacity (:func:`update_usage`,
  :func:`check_switch`, :func:`schedule_prefill`).
* decode-batch balance: a sliding window of recent batch sizes decides how
  many requests a returning batch may resubmit (:func:`steal_work`).
* decode -> prefill: switch when achieved/peak decode rate drops below one
  minus the bubble ratio a switch would cost (:func:`spatial_intensity`,
  :func:`temporal_intensity`, :func:`should_switch_to_prefill`).

A "future point" ``fp`` is counted in emitted output tokens: a request with
``input_len`` prompt tokens holds ``input_len + fp`` KV slots at the moment
it emits its ``fp``-th token, and is counted at ``fp`` while
``fp <= predicted_len``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .cost_model import ProfileTable
from .errors import ConfigurationError

DEFAULT_POINT_SPACING = 32
DEFAULT_HORIZON = 1024
DEFAULT_TOKEN_BUDGET = 2048


class PhaseDecision(enum.Enum):
    RemainPrefill = "RemainPrefill"
    SwitchToDecode = "SwitchToDecode"
    RemainDecode = "RemainDecode"
    SwitchToPrefill = "SwitchToPrefill"


def future_points(spacing: int = DEFAULT_POINT_SPACING, horizon: int = DEFAULT_HORIZON) -> tuple[int, ...]:
    if spacing < 1 or horizon < spacing:
        raise ConfigurationError(f"future points need 1 <= spacing <= horizon, got ({spacing}, {horizon})")
    return tuple(range(spacing, horizon + 1, spacing))


class KvUsageMap:
    """Forecast KV tokens alive at each future point."""

    __slots__ = ("points", "usage", "_parr")

    def __init__(self, points: Sequence[int] = None, usage: Optional[Sequence[int]] = None):
        pts = tuple(points) if points is not None else future_points()
        if not pts or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigurationError("future points must be non-empty and strictly ascending")
        self.points = pts
        self._parr = np.asarray(pts, dtype=np.int64)
        if usage is None:
            self.usage = np.zeros(len(pts), dtype=np.int64)
        else:
            self.usage = np.asarray(usage, dtype=np.int64).copy()
            if self.usage.shape != (len(pts),) or (self.usage < 0).any():
                raise ConfigurationError("usage must hold one non-negative value per future point")

    @classmethod
    def from_dict(cls, d: dict[int, int]) -> "KvUsageMap":
        pts = sorted(d)
        return cls(pts, [d[p] for p in pts])

    def as_dict(self) -> dict[int, int]:
        return {p: int(u) for p, u in zip(self.points, self.usage)}

    def copy(self) -> "KvUsageMap":
        return KvUsageMap(self.points, self.usage)

    def add(self, input_len: int, predicted_len: int) -> None:
        mask = self._parr <= predicted_len
        self.usage[mask] += input_len + self._parr[mask]

    def add_many(self, input_lens: np.ndarray, predicted_lens: np.ndarray) -> None:
        if len(input_lens) == 0:
            return
        inp = np.asarray(input_lens, dtype=np.int64)[:, None]
        pred = np.asarray(predicted_lens, dtype=np.int64)[:, None]
        self.usage += ((inp + self._parr) * (self._parr <= pred)).sum(axis=0)

    def max_usage(self) -> int:
        return int(self.usage.max()) if len(self.usage) else 0

    def __eq__(self, other) -> bool:
        return isinstance(other, KvUsageMap) and self.points == other.points and bool(
            (self.usage == other.usage).all()
        )

    def __repr__(self) -> str:
        return f"KvUsageMap({self.as_dict()})"


def update_usage(input_len: int, predicted_len: int, usage: KvUsageMap) -> KvUsageMap:
    out = usage.copy()
    out.add(input_len, max(predicted_len, 1))
    return out


def check_switch(usage: KvUsageMap, kv_capacity_tokens: int) -> PhaseDecision:
    if kv_capacity_tokens <= 0:
        raise ConfigurationError("KV capacity must be positive")
    if usage.max_usage() > kv_capacity_tokens:
        return PhaseDecision.SwitchToDecode
    return PhaseDecision.RemainPrefill


@dataclass(frozen=True)
class PendingRequest:
    """A request waiting for prefill, as seen by the batch former."""

    id: int
    input_len: int  # tokens to prefill (prompt plus any output kept across an eviction)
    predicted_len: int  # predicted tokens still to emit, >= 1


def form_prefill_batch(pending: Sequence[PendingRequest], token_budget: int) -> list[PendingRequest]:
    """Greedy in submission order; stops at the first request that would overflow the budget.

    A lone request larger than the budget still forms a batch by itself.
    """
    batch: list[PendingRequest] = []
    tokens = 0
    for req in pending:
        if batch and tokens + req.input_len > token_budget:
            break
        batch.append(req)
        tokens += req.input_len
        if tokens >= token_budget:
            break
    return batch


def schedule_prefill(
    pending: Sequence[PendingRequest],
    usage: KvUsageMap,
    kv_capacity_tokens: int,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> tuple[list[PendingRequest], KvUsageMap, PhaseDecision]:
    """Launch one prefill batch, fold it into the forecast, then check the switch."""
    if not pending:
        raise ConfigurationError("schedule_prefill needs at least one pending request")
    batch = form_prefill_batch(pending, token_budget)
    new_usage = usage.copy()
    for req in batch:
        new_usage.add(req.input_len, req.predicted_len)
    return batch, new_usage, check_switch(new_usage, kv_capacity_tokens)


class SlidingWindow:
    """The last ``W`` submitted decode batch sizes."""

    def __init__(self, capacity: int, initial: Iterable[int] = ()):
        if capacity < 1:
            raise ConfigurationError("sliding window capacity must be >= 1")
        self.capacity = capacity
        self.recent_sizes: deque[int] = deque(initial, maxlen=capacity)

    def push(self, size: int) -> None:
        self.recent_sizes.append(size)

    def total(self) -> int:
        return sum(self.recent_sizes)

    def copy(self) -> "SlidingWindow":
        return SlidingWindow(self.capacity, self.recent_sizes)

    def __len__(self) -> int:
        return len(self.recent_sizes)

    def __repr__(self) -> str:
        return f"SlidingWindow({list(self.recent_sizes)})"


@dataclass(frozen=True)
class StealDecision:
    submit_count: int
    withheld: int  # requests moved from this batch into the pool
    refilled: int  # requests taken from the pool into this batch
    average: int
    window: SlidingWindow = field(repr=False, compare=False)


def steal_work(returned_batch_size: int, finished_in_batch: int, window: SlidingWindow,
               pool_size: int = 0, include_pool: bool = False) -> StealDecision:
    """Decide how many requests a returning decode batch resubmits.

    The average is taken over the window after deducting the requests that
    just finished; a batch above it gives the excess to the pool, a batch
    below it is topped up from the pool.

    With ``include_pool`` the withheld requests count toward the average, a
    batch is trimmed to the floor of the fair share and topped up to its
    ceiling, so rounding cannot strand requests in the pool.
    """
    if not 0 <= finished_in_batch <= returned_batch_size:
        raise ConfigurationError("finished_in_batch must be within [0, returned_batch_size]")
    remaining = returned_batch_size - finished_in_batch
    if include_pool:
        active = max(window.total() - finished_in_batch + pool_size, 0)
        average, spare = divmod(active, window.capacity)
        ceiling = average + (1 if spare else 0)
    else:
        average = ceiling = max(window.total() - finished_in_batch, 0) // window.capacity
    if remaining > average:
        withheld, refilled = remaining - average, 0
    else:
        withheld, refilled = 0, min(pool_size, ceiling - remaining)
    submit = remaining - withheld + refilled
    new_window = window.copy()
    new_window.push(submit)
    return StealDecision(submit, withheld, refilled, average, new_window)


def spatial_intensity(current_batch_size: float, table: ProfileTable) -> float:
    if current_batch_size <= 0:
        return 0.0
    return table.achieved_rate(current_batch_size) / table.peak_rate


def temporal_intensity(pending_prefill_times: Sequence[float], current_decode_step_time: float,
                       one_decode_step_per_batch_time: float) -> float:
    if not pending_prefill_times:
        raise ConfigurationError("temporal intensity needs at least one pending prefill")
    bubble = max(0.0, max(pending_prefill_times) - current_decode_step_time)
    total = sum(pending_prefill_times) + one_decode_step_per_batch_time + bubble
    return 1.0 - bubble / total


def should_switch_to_prefill(spatial: float, temporal: float, *, decode_batches_empty: bool = False,
                             prefills_pending: bool = True) -> PhaseDecision:
    if not prefills_pending:
        return PhaseDecision.RemainDecode
    if decode_batches_empty:
        return PhaseDecision.SwitchToPrefill
    return PhaseDecision.SwitchToPrefill if spatial < temporal else PhaseDecision.RemainDecode
