"""Temporally split pipeline: long prefill-only phases alternate with decode-only phases."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..cost_model import ProfileTable, iteration_time
from ..scheduler import (
    KvUsageMap,
    PhaseDecision,
    SlidingWindow,
    check_switch,
    future_points,
    should_switch_to_prefill,
    spatial_intensity,
    steal_work,
    temporal_intensity,
)
from .common import ReqState, split_even
from .controller import Controller
from .pipeline import Batch

PREFILL, DECODE = "Prefill", "Decode"


class DecodeSlot:
    __slots__ = ("index", "members", "in_flight", "launched", "last_step_s", "steps")

    def __init__(self, index: int, members: list):
        self.index = index
        self.members = members
        self.in_flight = False
        self.launched = False
        self.last_step_s = 0.0
        self.steps = 0


class TDPipeController(Controller):
    def __init__(self, *args, profile: ProfileTable, **kwargs):
        super().__init__(*args, **kwargs)
        p = self.params
        self.profile = profile
        self.points = future_points(p.point_spacing, p.horizon)
        self.phase = PREFILL
        self.usage = KvUsageMap(self.points)
        self.slots: list[DecodeSlot] = []
        self.pool: list[ReqState] = []
        self.window: Optional[SlidingWindow] = None
        self.decode_phase_id = 0
        self.entry_count = 0
        self.finished_in_phase = 0
        self.returns_in_phase = 0
        self.decisions: list[tuple] = []
        self.phase_count = {PREFILL: 0, DECODE: 0}
        self._enter_prefill(0)

    # -- phase transitions -------------------------------------------------

    def _alive(self) -> list[ReqState]:
        return sorted((r for r in self.reqs.values() if r.kv > 0), key=lambda r: r.admit_seq)

    def _rebuild_usage(self) -> KvUsageMap:
        """Forecast from requests already holding KV; the forecast never shrinks on its own."""
        alive = [r for r in self.reqs.values() if r.kv > 0]
        usage = KvUsageMap(self.points)
        if alive:
            usage.add_many(np.fromiter((r.kv for r in alive), np.int64, len(alive)),
                           np.fromiter((r.predicted_remaining for r in alive), np.int64, len(alive)))
        return usage

    def _enter_prefill(self, t: int) -> None:
        self.phase = PREFILL
        self.phase_count[PREFILL] += 1
        self.set_phase(PREFILL, t)
        self.usage = self._rebuild_usage()

    def _enter_decode(self, t: int) -> None:
        self.phase = DECODE
        self.phase_count[DECODE] += 1
        self.decode_phase_id += 1
        self.set_phase(DECODE, t)
        live = self._alive()
        self.pool = []
        self.slots = [DecodeSlot(i, m) for i, m in enumerate(split_even(live, self.W))]
        self.window = SlidingWindow(self.W, [len(s.members) for s in self.slots])
        self.entry_count = len(live)
        self.finished_in_phase = 0
        self.returns_in_phase = 0

    # -- event hooks -----------------------------------------------------------

    def poll(self, t: int) -> None:
        if self.phase == PREFILL:
            while self.phase == PREFILL and self.pipeline.stage0_free(t):
                if not self._launch_prefill(t):
                    break
        if self.phase == DECODE:
            self._launch_ready_slots(t)
            if self.unfinished and all(s.launched and not s.in_flight for s in self.slots):
                # Every batch emptied (evictions or completions) with work left over.
                if self.pending:
                    self._enter_prefill(t)
                    self.poll(t)
                elif self.pool:
                    self._revive_idle_slots(t)

    def _launch_prefill(self, t: int) -> bool:
        if not self.pending:
            if self.unfinished:
                self._switch_to_decode(t, "no pending prefills")
            return False
        p = self.params
        batch: list[ReqState] = []
        tokens = 0
        headroom = self.ledger.headroom()
        for r in self.pending:
            need = r.prefill_tokens
            if batch and tokens + need > p.token_budget:
                break
            if tokens + need + len(batch) + 1 > headroom:
                break
            batch.append(r)
            tokens += need
            if tokens >= p.token_budget:
                break
        if not batch:
            if not any(r.kv > 0 for r in self.reqs.values()):
                raise RuntimeError("request does not fit into an empty KV cache")
            self._switch_to_decode(t, "memory guard")
            return False
        for _ in batch:
            self.pending.popleft()
        for r in batch:
            self.admit(r)
            r.busy = True
        self.allocate_prompt(batch, t)
        self.ledger.reserved += len(batch)
        b = self.make_batch("Prefill", batch, PREFILL, prefill_tokens=tokens)
        self.pipeline.submit(b, t)
        # Launch precedes the check: the batch that crosses the threshold still runs.
        if p.prefill_switch == "forecast":
            for r in batch:
                self.usage.add(r.prefill_tokens, r.predicted_remaining)
            decision = check_switch(self.usage, self.capacity)
        else:
            occupied = (self.ledger.total + self.ledger.reserved) / self.capacity
            decision = PhaseDecision.SwitchToDecode if occupied >= p.kv_ratio else PhaseDecision.RemainPrefill
        self.decisions.append((t, "prefill", decision.value, self.usage.max_usage(), self.capacity))
        if decision is PhaseDecision.SwitchToDecode or not self.pending:
            self._switch_to_decode(t, decision.value)
            return False
        return True

    def _switch_to_decode(self, t: int, reason: str) -> None:
        self._enter_decode(t)
        self._launch_ready_slots(t)

    def _launch_ready_slots(self, t: int) -> None:
        # Slots launch in order so batch 0 leads the rotation.
        for slot in self.slots:
            if slot.launched:
                continue
            slot.members = [r for r in slot.members if not r.done and r.kv > 0]
            if any(r.busy for r in slot.members):
                return
            slot.launched = True
            self._launch_decode(slot, t)

    def _launch_decode(self, slot: DecodeSlot, t: int) -> None:
        members = slot.members
        over = self.ledger.total + self.ledger.reserved + len(members) - self.capacity
        if over > 0:
            victims = []
            for r in sorted(members, key=lambda r: r.admit_seq, reverse=True):
                if over <= 0:
                    break
                victims.append(r)
                over -= r.kv + 1
            vset = set(id(v) for v in victims)
            members = [r for r in members if id(r) not in vset]
            self.evict(victims, t)
            slot.members = members
        if not members:
            slot.in_flight = False
            return
        for r in members:
            r.busy = True
        kv = sum(r.kv for r in members)
        b = self.make_batch("DecodeStep", members, DECODE, decode_requests=len(members),
                            decode_kv_tokens=kv, slot=slot.index,
                            info={"decode_phase": self.decode_phase_id})
        b.decode_step_index = slot.steps
        slot.steps += 1
        slot.in_flight = True
        slot.last_step_s = max(b.stage_ns) / 1e9
        self.ledger.reserved += len(members)
        self.pipeline.submit(b, t)

    def on_exit(self, batch: Batch, t: int) -> None:
        self.ledger.reserved -= len(batch.members)
        for r in batch.members:
            r.busy = False
        finished = self.emit(batch.members, t)
        if batch.kind == "Prefill":
            return
        slot = self.slots[batch.slot] if batch.info.get("decode_phase") == self.decode_phase_id else None
        if slot is None or self.phase != DECODE:
            # A batch from a decode phase that already ended: its members just park.
            if slot is not None:
                slot.in_flight = False
            return
        slot.in_flight = False
        self.returns_in_phase += 1
        self.finished_in_phase += len(finished)
        remaining = [r for r in batch.members if not r.done]
        submit = self._balance(slot, len(batch.members), len(finished), remaining)
        slot.members = submit
        if self._should_leave_decode(slot, t):
            self.decisions.append((t, "decode", PhaseDecision.SwitchToPrefill.value))
            self._enter_prefill(t)
            self.poll(t)
            return
        if submit:
            self._launch_decode(slot, t)
        self._revive_idle_slots(t)

    # -- decode-phase policies ---------------------------------------------------

    def _balance(self, slot: DecodeSlot, returned: int, finished: int, remaining: list) -> list:
        if not self.params.stealing:
            return remaining
        d = steal_work(returned, finished, self.window, len(self.pool), include_pool=True)
        refill = d.refilled
        submit_count = d.submit_count
        if submit_count == 0 and self.pool:
            # Never let an emptied batch stall while withheld requests wait.
            refill = min(len(self.pool), max(1, d.average))
            submit_count = refill
        self.window = d.window
        if submit_count != d.submit_count:
            self.window.recent_sizes.pop()
            self.window.push(submit_count)
        keep = remaining
        if d.withheld:
            keep = remaining[:len(remaining) - d.withheld]
            self.pool.extend(remaining[len(remaining) - d.withheld:])
        if refill:
            keep = keep + self.pool[:refill]
            del self.pool[:refill]
        return keep

    def _revive_idle_slots(self, t: int) -> None:
        if not self.pool:
            return
        for s in self.slots:
            if s.launched and not s.in_flight and not s.members and self.pool:
                share = max(1, len(self.pool) // self.W)
                s.members = self.pool[:share]
                del self.pool[:share]
                if self.window is not None:
                    self.window.push(len(s.members))
                self._launch_decode(s, t)

    def _active_decode_requests(self) -> int:
        return sum(len(s.members) for s in self.slots) + len(self.pool)

    def _should_leave_decode(self, slot: DecodeSlot, t: int) -> bool:
        prefills_pending = bool(self.pending)
        empty = self._active_decode_requests() == 0
        if not prefills_pending:
            return False
        if empty:
            return True
        if self.params.decode_switch == "finish_ratio":
            return self.finished_in_phase >= self.params.finish_ratio * self.entry_count
        if self.returns_in_phase % self.W:
            return False
        plan = self._plan_prefill_times()
        if not plan:
            return False
        live_batches = max(1, sum(1 for s in self.slots if s.members))
        avg_batch = self._active_decode_requests() / live_batches
        spatial = spatial_intensity(avg_batch, self.profile)
        per_batch = sum(s.last_step_s for s in self.slots if s.members)
        temporal = temporal_intensity(plan, slot.last_step_s, per_batch)
        decision = should_switch_to_prefill(spatial, temporal, decode_batches_empty=empty,
                                            prefills_pending=prefills_pending)
        return decision is PhaseDecision.SwitchToPrefill

    def _plan_prefill_times(self) -> list[float]:
        """Stage time of each prefill batch the next prefill phase would launch."""
        free = self.capacity - self.ledger.total - self.ledger.reserved
        budget = self.params.token_budget
        head = []
        cum = 0
        for r in self.pending:
            cum += r.prefill_tokens + 1
            if cum > free or len(head) >= 4096:
                break
            head.append(r)
        if not head:
            return []
        n = len(head)
        if self.params.prefill_switch == "forecast":
            base = self._rebuild_usage()
            if base.max_usage() > self.capacity:
                # The next prefill phase would hand back control after a single batch.
                return []
            pts = np.asarray(self.points, dtype=np.int64)
            inp = np.fromiter((r.prefill_tokens for r in head), np.int64, n)[:, None]
            pred = np.fromiter((r.predicted_remaining for r in head), np.int64, n)[:, None]
            totals = base.usage + np.cumsum((inp + pts) * (pts <= pred), axis=0)
            over = np.nonzero(totals.max(axis=1) > self.capacity)[0]
            if len(over):
                n = int(over[0]) + 1
        else:
            target = self.params.kv_ratio * self.capacity - self.ledger.total - self.ledger.reserved
            cum, k = 0, 0
            for r in head:
                if cum >= target:
                    break
                cum += r.prefill_tokens + 1
                k += 1
            n = max(k, 1)
        times = []
        tokens = 0
        first = True
        slowest = max(self.stages, key=lambda s: s.layer_count)
        for r in head[:n]:
            if not first and tokens + r.prefill_tokens > budget:
                times.append(iteration_time(slowest, prefill_tokens=tokens, cost=self.cost))
                tokens = 0
            tokens += r.prefill_tokens
            first = False
        if tokens:
            times.append(iteration_time(slowest, prefill_tokens=tokens, cost=self.cost))
        return times
