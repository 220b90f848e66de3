"""Baseline schedulers: separate batching (SB) and chunked hybrid batching (HB).

Both run ``W`` independent micro-batch slots, one per pipeline stage (``W = 1``
for tensor parallelism). A slot's next iteration is scheduled only after its
previous one leaves the last stage. The KV cache is split evenly across
slots and the waiting queue is shared, first come first served.

SB: a slot alternates prefill and decode iterations while both kinds of work
exist (``prefill_ratio`` prefills in a row at most). HB: every iteration
carries all of the slot's running decodes plus prefill chunks up to
``chunk_size`` scheduled tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from ..errors import ConfigurationError
from ..workload import Request
from .common import ReqState
from .controller import Controller
from .pipeline import Batch


@dataclass(frozen=True)
class HybridChunk:
    request_id: int
    index: int
    tokens: int
    prior_tokens: int  # KV written by earlier chunks, re-read by this one


def chunked_prefill_splitter(request: Union[Request, int], chunk_size: int) -> list[HybridChunk]:
    """Split a prompt into sequential chunks of at most ``chunk_size`` tokens."""
    if chunk_size < 1:
        raise ConfigurationError("chunk_size must be >= 1")
    if isinstance(request, Request):
        rid, length = request.id, request.input_len
    else:
        rid, length = -1, int(request)
    chunks = []
    done = 0
    while done < length:
        n = min(chunk_size, length - done)
        chunks.append(HybridChunk(rid, len(chunks), n, done))
        done += n
    return chunks


def chunk_reread_bytes(chunks: list[HybridChunk], kv_bytes_per_token: int) -> int:
    return kv_bytes_per_token * sum(c.prior_tokens for c in chunks)


class Slot:
    __slots__ = ("index", "capacity", "running", "partial", "prefilling", "reserved",
                 "in_flight", "last_kind", "streak")

    def __init__(self, index: int, capacity: int):
        self.index = index
        self.capacity = capacity
        self.running: list[ReqState] = []  # prompt done, decoding
        self.partial: list[ReqState] = []  # HB: prompt partly processed
        self.prefilling: list[ReqState] = []  # SB: inside an in-flight prefill batch
        self.reserved = 0  # one token per member of the in-flight iteration that will emit
        self.in_flight = False
        self.last_kind: Optional[str] = None
        self.streak = 0

    def used(self) -> int:
        held = sum(r.kv for r in self.running) + sum(r.kv for r in self.prefilling)
        # A partially prefilled prompt keeps its whole footprint booked, first output token included.
        held += sum(r.prefill_tokens + 1 for r in self.partial)
        return held + self.reserved

    def count(self) -> int:
        return len(self.running) + len(self.partial) + len(self.prefilling)


class SlotController(Controller):
    def __init__(self, *args, hybrid: bool = False, **kwargs):
        super().__init__(*args, **kwargs)
        self.hybrid = hybrid
        per_slot = self.capacity // self.W
        self.slots = [Slot(i, per_slot) for i in range(self.W)]
        self.set_phase("Hybrid" if hybrid else "Mixed", 0)

    def poll(self, t: int) -> None:
        if not self.unfinished:
            return
        for slot in self.slots:
            if not slot.in_flight:
                batch = self._hybrid_iteration(slot, t) if self.hybrid else self._separate_iteration(slot, t)
                if batch is not None:
                    slot.in_flight = True
                    self.pipeline.submit(batch, t)

    # -- admission and eviction ----------------------------------------------

    def _take(self, slot: Slot, token_budget: int, allow_overflow: bool, growth: int = 0) -> list[ReqState]:
        """Pop queue heads that fit the slot's KV share, the request cap and the token budget.

        ``growth`` is KV the same iteration adds for members already in the slot.
        """
        cap = self.params.max_batch_requests
        free = slot.capacity - slot.used() - growth
        out: list[ReqState] = []
        tokens = 0
        while self.pending and tokens < token_budget:
            r = self.pending[0]
            need = r.prefill_tokens
            if cap is not None and slot.count() + len(out) >= cap:
                break
            if need + 1 > free:
                break
            if not allow_overflow and out and tokens + need > token_budget:
                break
            self.pending.popleft()
            self.admit(r)
            out.append(r)
            free -= need + 1
            tokens += need
        return out

    def _make_room(self, slot: Slot, t: int) -> None:
        """Evict the most recently admitted running requests until every runner can grow by one."""
        victims = []
        while slot.running and slot.used() + len(slot.running) > slot.capacity:
            r = max(slot.running, key=lambda r: r.admit_seq)
            slot.running.remove(r)
            victims.append(r)
        self.evict(victims, t)

    # -- iteration building ----------------------------------------------------

    def _separate_iteration(self, slot: Slot, t: int) -> Optional[Batch]:
        p = self.params
        want_prefill = bool(self.pending) and (
            not slot.running or slot.last_kind != "prefill" or slot.streak < p.prefill_ratio
        )
        if want_prefill:
            new = self._take(slot, p.token_budget, allow_overflow=False)
            if new:
                self.allocate_prompt(new, t)
                for r in new:
                    r.busy = True
                slot.prefilling = new
                slot.reserved += len(new)
                slot.streak = slot.streak + 1 if slot.last_kind == "prefill" else 1
                slot.last_kind = "prefill"
                tokens = sum(r.prefill_tokens for r in new)
                return self.make_batch("Prefill", new, "Prefill", prefill_tokens=tokens, slot=slot.index)
        self._make_room(slot, t)
        if not slot.running:
            return None
        members = list(slot.running)
        for r in members:
            r.busy = True
        slot.reserved += len(members)
        slot.last_kind = "decode"
        slot.streak = 0
        kv = sum(r.kv for r in members)
        return self.make_batch("DecodeStep", members, "Decode", decode_requests=len(members),
                               decode_kv_tokens=kv, slot=slot.index)

    def _hybrid_iteration(self, slot: Slot, t: int) -> Optional[Batch]:
        self._make_room(slot, t)
        decodes = list(slot.running)
        budget = self.params.chunk_size - len(decodes)
        chunks: list[tuple[ReqState, int]] = []
        if budget > 0:
            for r in slot.partial:
                if budget <= 0:
                    break
                n = min(budget, r.prefill_tokens - r.prefilled)
                chunks.append((r, n))
                budget -= n
            if budget > 0 and self.pending:
                for r in self._take(slot, budget, allow_overflow=True, growth=len(decodes)):
                    r.prefilled = 0
                    slot.partial.append(r)
                    n = min(budget, r.prefill_tokens)
                    chunks.append((r, n))
                    budget -= n
        if not decodes and not chunks:
            return None
        prefill_tokens = sum(n for _, n in chunks)
        context = sum(r.prefilled for r, _ in chunks)
        completing = [r for r, n in chunks if r.prefilled + n >= r.prefill_tokens]
        if chunks:
            # Each chunk writes its KV when it runs.
            self.ledger.allocate(((r.id, n) for r, n in chunks), t)
            for r, n in chunks:
                r.kv += n
        members = decodes + [r for r, _ in chunks]
        for r in members:
            r.busy = True
        slot.reserved += len(decodes) + len(completing)
        kv = sum(r.kv for r in decodes)
        return self.make_batch(
            "HybridChunk", members, "Hybrid", decode_requests=len(decodes), decode_kv_tokens=kv,
            prefill_tokens=prefill_tokens, prefill_context_tokens=context, slot=slot.index,
            info={"decodes": len(decodes), "chunks": [(r.id, n) for r, n in chunks],
                  "completing": len(completing)},
        )

    # -- completions -----------------------------------------------------------

    def on_exit(self, batch: Batch, t: int) -> None:
        slot = self.slots[batch.slot]
        slot.in_flight = False
        for r in batch.members:
            r.busy = False
        if batch.kind == "Prefill":
            slot.reserved -= len(batch.members)
            slot.prefilling = []
            emitting = list(batch.members)
            slot.running.extend(emitting)
        elif batch.kind == "DecodeStep":
            slot.reserved -= len(batch.members)
            emitting = list(batch.members)
        else:
            ndec = batch.info["decodes"]
            slot.reserved -= ndec + batch.info["completing"]
            emitting = list(batch.members[:ndec])
            for rid, n in batch.info["chunks"]:
                r = self.reqs[rid]
                r.prefilled += n
                if r.prefilled >= r.prefill_tokens:
                    slot.partial.remove(r)
                    slot.running.append(r)
                    emitting.append(r)
        finished = self.emit(emitting, t)
        if finished:
            done = set(id(r) for r in finished)
            slot.running = [r for r in slot.running if id(r) not in done]
