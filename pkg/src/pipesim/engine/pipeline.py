"""Execution plane: one executor per stage plus one link per stage boundary.

Batches enter stage 0, run on each stage in FIFO order of arrival, and are
handed to the next stage over a point-to-point link that is a separate
resource (compute and transfer never share a timeline). Times are integer
nanoseconds; simultaneous events are ordered by (time, stage, batch id).
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional


def to_ns(seconds: float) -> int:
    return int(round(seconds * 1e9))


@dataclass
class Batch:
    id: int
    kind: str  # "Prefill", "DecodeStep" or "HybridChunk"
    members: tuple
    scheduled_tokens: int
    stage_ns: list
    transfer_ns: list
    phase: str = "Prefill"
    decode_step_index: Optional[int] = None
    slot: Optional[int] = None
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TraceEvent:
    resource: str  # "stage{i}" or "link{i}"
    batch_id: int
    kind: str  # "compute" or "transfer"
    start: int
    duration: int
    phase: str

    @property
    def end(self) -> int:
        return self.start + self.duration


class StageState:
    __slots__ = ("index", "busy_until", "queue", "busy_ns", "current")

    def __init__(self, index: int):
        self.index = index
        self.busy_until = 0
        self.queue: deque = deque()
        self.busy_ns = 0
        self.current = None


_ARRIVE, _STAGE_DONE, _LINK_DONE = 0, 1, 2


class Pipeline:
    """Runs batches through the stages and reports exits to a controller."""

    def __init__(self, num_stages: int, record_trace: bool = True):
        self.num_stages = num_stages
        self.stages = [StageState(i) for i in range(num_stages)]
        self.link_free = [0] * max(num_stages - 1, 0)
        self.events: list[TraceEvent] = []
        self.record_trace = record_trace
        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.on_exit: Callable[[Batch, int], None] = lambda b, t: None
        self.poll: Callable[[int], None] = lambda t: None
        self.executions = 0
        self.transfers = 0

    def _push(self, t: int, stage: int, batch: Batch, kind: int) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, stage, batch.id, kind, self._seq, batch))

    def submit(self, batch: Batch, t: int) -> None:
        if t < self.now:
            raise RuntimeError(f"batch {batch.id} submitted in the past ({t} < {self.now})")
        self._push(t, 0, batch, _ARRIVE)

    def stage0_free(self, t: int) -> bool:
        """Stage 0 is not executing, has nothing queued and nothing about to arrive."""
        s = self.stages[0]
        if s.current is not None or s.queue:
            return False
        return not any(e[1] == 0 and e[3] == _ARRIVE for e in self._heap)

    def _start(self, s: StageState, batch: Batch, t: int) -> None:
        dur = batch.stage_ns[s.index]
        s.current = batch
        s.busy_until = t + dur
        s.busy_ns += dur
        self.executions += 1
        if self.record_trace:
            self.events.append(TraceEvent(f"stage{s.index}", batch.id, "compute", t, dur, batch.phase))
        self._push(t + dur, s.index, batch, _STAGE_DONE)

    def run(self) -> int:
        """Process events until none remain; returns the final simulated time."""
        self.poll(self.now)
        while self._heap:
            t, stage, _, kind, _, batch = heapq.heappop(self._heap)
            self.now = t
            s = self.stages[stage]
            if kind == _ARRIVE:
                if s.current is None:
                    self._start(s, batch, t)
                else:
                    s.queue.append(batch)
            elif kind == _STAGE_DONE:
                s.current = None
                if stage + 1 < self.num_stages:
                    dur = batch.transfer_ns[stage]
                    start = max(t, self.link_free[stage])
                    self.link_free[stage] = start + dur
                    self.transfers += 1
                    if self.record_trace:
                        self.events.append(TraceEvent(f"link{stage}", batch.id, "transfer", start, dur, batch.phase))
                    self._push(start + dur, stage + 1, batch, _ARRIVE)
                else:
                    self.on_exit(batch, t)
                if s.queue:
                    self._start(s, s.queue.popleft(), t)
            self.poll(t)
        return self.now
