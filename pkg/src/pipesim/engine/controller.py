"""Control-plane state shared by every policy: requests, KV ledger, batch costing."""

from __future__ import annotations

from collections import deque
from typing import Optional, Sequence

from ..cost_model import CostParams, StageSpec, activation_bytes, iteration_time, p2p_time
from ..workload import RequestSet
from .common import PolicyParams, ReqState
from .ledger import KvLedger
from .pipeline import Batch, Pipeline, to_ns


class Controller:
    def __init__(
        self,
        requests: RequestSet,
        predictions: dict[int, int],
        stages: Sequence[StageSpec],
        capacity_tokens: int,
        params: PolicyParams,
        cost: CostParams,
        pipeline: Pipeline,
        comm_time=None,
        record_steps: bool = False,
    ):
        self.params = params
        self.cost = cost
        self.stages = list(stages)
        self.model = self.stages[0].model
        self.W = len(self.stages)
        self.pipeline = pipeline
        self.comm_time = comm_time  # tokens -> seconds added to every iteration (TP all-reduce)
        self.capacity = capacity_tokens
        self.ledger = KvLedger(capacity_tokens)
        if record_steps:
            self.ledger.step_log = []
        self.reqs = {r.id: ReqState(r.id, r.input_len, r.true_output_len, predictions[r.id]) for r in requests}
        self.pending: deque[ReqState] = deque(self.reqs[r.id] for r in requests)
        self.unfinished = len(self.reqs)
        self._admit = 0
        self._batch_id = 0
        self.phase_spans: list[list] = []
        self.generated_total = 0
        pipeline.on_exit = self.on_exit
        pipeline.poll = self.poll

    # -- bookkeeping -----------------------------------------------------

    def next_batch_id(self) -> int:
        self._batch_id += 1
        return self._batch_id

    def admit(self, r: ReqState) -> None:
        self._admit += 1
        r.admit_seq = self._admit

    def set_phase(self, phase: str, t: int) -> None:
        if self.phase_spans and self.phase_spans[-1][0] == phase:
            return
        if self.phase_spans:
            self.phase_spans[-1][2] = t
        self.phase_spans.append([phase, t, None])

    def close_spans(self, t: int) -> None:
        if self.phase_spans:
            self.phase_spans[-1][2] = t

    def emit(self, members: Sequence[ReqState], t: int) -> list[ReqState]:
        """Each member emits one token; returns the ones that just finished."""
        self.ledger.allocate(((r.id, 1) for r in members), t)
        finished = []
        log = self.ledger.step_log
        for r in members:
            r.generated += 1
            r.kv += 1
            if log is not None:
                log.append((r.id, r.generated, r.kv))
            if r.generated >= r.output_len:
                r.finished_at = t
                finished.append(r)
        self.generated_total += len(members)
        if finished:
            self.ledger.free((r.id for r in finished), t)
            for r in finished:
                r.kv = 0
            self.unfinished -= len(finished)
        return finished

    def allocate_prompt(self, members: Sequence[ReqState], t: int) -> None:
        self.ledger.allocate(((r.id, r.prefill_tokens) for r in members), t)
        for r in members:
            r.kv = r.prefill_tokens

    def evict(self, victims: Sequence[ReqState], t: int) -> None:
        """Drop victims' KV and requeue them at the head of the pending queue, oldest first."""
        if not victims:
            return
        self.ledger.evict((r.id for r in victims), t)
        for r in sorted(victims, key=lambda r: r.admit_seq, reverse=True):
            r.kv = 0
            r.prefilled = 0
            r.evictions += 1
            self.pending.appendleft(r)

    # -- costing ---------------------------------------------------------

    def _stage_ns(self, **work) -> list[int]:
        tokens = work.get("decode_requests", 0) + work.get("prefill_tokens", 0)
        extra = self.comm_time(tokens) if self.comm_time else 0.0
        cache: dict = {}
        out = []
        for st in self.stages:
            key = st.layer_count
            if key not in cache:
                cache[key] = to_ns(iteration_time(st, cost=self.cost, **work) + extra)
            out.append(cache[key])
        return out

    def _transfer_ns(self, tokens: int) -> list[int]:
        if self.W == 1:
            return []
        return [to_ns(p2p_time(activation_bytes(tokens, self.model), self.stages[0].device))] * (self.W - 1)

    def make_batch(self, kind: str, members: Sequence[ReqState], phase: str, *, decode_requests: int = 0,
                   decode_kv_tokens: int = 0, prefill_tokens: int = 0, prefill_context_tokens: int = 0,
                   slot: Optional[int] = None, info: Optional[dict] = None) -> Batch:
        stage_ns = self._stage_ns(decode_requests=decode_requests, decode_kv_tokens=decode_kv_tokens,
                                  prefill_tokens=prefill_tokens, prefill_context_tokens=prefill_context_tokens)
        tokens = decode_requests + prefill_tokens
        return Batch(self.next_batch_id(), kind, tuple(members), tokens, stage_ns,
                     self._transfer_ns(tokens), phase=phase, slot=slot, info=info or {})

    # -- hooks -----------------------------------------------------------

    def poll(self, t: int) -> None:
        raise NotImplementedError

    def on_exit(self, batch: Batch, t: int) -> None:
        raise NotImplementedError
