"""Top-level entry: build the stages, controller and pipeline for one policy and simulate."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from ..cost_model import (
    DEFAULT_COST,
    CostParams,
    build_profile_table,
    pipeline_stages,
    tensor_parallel_stage,
    tp_communication_time,
)
from ..errors import ConfigurationError
from ..predictor import LengthBuckets, fit_buckets
from ..specs import ClusterSpec, ModelSpec, pipeline_kv_capacity_tokens, tensor_parallel_kv_capacity_tokens
from ..workload import RequestSet
from .baselines import SlotController
from .common import POLICIES, PolicyParams
from .ledger import Eviction
from .pipeline import Pipeline, TraceEvent
from .tdpipe import TDPipeController


@dataclass
class RunResult:
    policy: str
    num_stages: int
    num_devices: int
    makespan_ns: int
    input_tokens: int
    generated_tokens: int
    expected_output_tokens: int
    busy_ns: list
    kv_capacity_tokens: int
    kv_samples: list  # (time_ns, alive tokens), one per change
    kv_peak: int
    phase_spans: list  # (phase, start_ns, end_ns)
    evictions: list[Eviction]
    events: list[TraceEvent] = field(repr=False)
    executions: int = 0
    transfers: int = 0
    decisions: list = field(default_factory=list, repr=False)
    step_log: Optional[list] = field(default=None, repr=False)

    @property
    def throughput(self) -> float:
        if self.makespan_ns <= 0:
            return 0.0
        return (self.input_tokens + self.generated_tokens) / (self.makespan_ns / 1e9)

    @property
    def idle_ns(self) -> list:
        return [self.makespan_ns - b for b in self.busy_ns]

    @property
    def bubble_ratio(self) -> float:
        if self.makespan_ns <= 0:
            return 0.0
        return sum(self.idle_ns) / (len(self.busy_ns) * self.makespan_ns)

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "num_devices": self.num_devices,
            "num_stages": self.num_stages,
            "makespan_ns": self.makespan_ns,
            "throughput_tokens_per_s": round(self.throughput, 6),
            "bubble_ratio": round(self.bubble_ratio, 9),
            "input_tokens": self.input_tokens,
            "generated_tokens": self.generated_tokens,
            "stage_busy_ns": list(self.busy_ns),
            "stage_idle_ns": self.idle_ns,
            "kv_capacity_tokens": self.kv_capacity_tokens,
            "kv_peak_tokens": self.kv_peak,
            "evictions": len(self.evictions),
            "evicted_tokens": sum(e.tokens for e in self.evictions),
            "phase_count": len(self.phase_spans),
            "executions": self.executions,
            "transfers": self.transfers,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"


def _capacity(policy: str, model: ModelSpec, cluster: ClusterSpec) -> int:
    if policy.startswith("TP"):
        return tensor_parallel_kv_capacity_tokens(model, cluster)
    return pipeline_kv_capacity_tokens(model, cluster)


def training_set_for(workload: RequestSet) -> RequestSet:
    """Requests the bucket predictor is fitted on: the workload's own length histogram."""
    return workload


def run(
    policy: str,
    workload: RequestSet,
    model: ModelSpec,
    cluster: ClusterSpec,
    params: Optional[PolicyParams] = None,
    seed: int = 0,
    cost: CostParams = DEFAULT_COST,
    buckets: Optional[LengthBuckets] = None,
    predictions: Optional[dict] = None,
    record_trace: bool = True,
    record_steps: bool = False,
) -> RunResult:
    if policy not in POLICIES:
        raise ConfigurationError(f"policy must be one of {POLICIES}, got {policy!r}")
    params = params or PolicyParams()
    if len(workload) == 0:
        raise ConfigurationError("workload is empty")
    # Raises before any simulation if the weights leave no KV room.
    capacity = _capacity(policy, model, cluster)

    tp = policy.startswith("TP")
    stages = [tensor_parallel_stage(model, cluster)] if tp else pipeline_stages(model, cluster)
    W = len(stages)
    longest = max(r.input_len + r.true_output_len for r in workload)
    share = capacity if policy == "TDPipe" else capacity // W
    if longest + 1 > share:
        raise ConfigurationError(
            f"a request needing {longest} KV tokens exceeds the {share}-token KV capacity per batch slot"
        )

    if predictions is None:
        pc = params.predictor
        if pc.kind == "bucket" and buckets is None:
            buckets = fit_buckets(training_set_for(workload))
        if pc.seed != seed:
            pc = type(pc)(pc.kind, pc.misclassification_rate, pc.noise_sigma, seed)
        predictions = pc.predict_all(workload, buckets)

    pipeline = Pipeline(W, record_trace=record_trace)
    comm = (lambda n: tp_communication_time(n, model, cluster)) if tp and cluster.num_devices > 1 else None
    common = dict(requests=workload, predictions=predictions, stages=stages, capacity_tokens=capacity,
                  params=params, cost=cost, pipeline=pipeline, comm_time=comm, record_steps=record_steps)
    if policy == "TDPipe":
        kv_len = params.representative_kv_len
        if kv_len is None:
            kv_len = workload.mean_input_len() + workload.mean_output_len() / 2
        profile = build_profile_table(model, cluster, params.profile_grid, kv_len, cost)
        ctl = TDPipeController(profile=profile, **common)
    else:
        ctl = SlotController(hybrid=policy.endswith("HB"), **common)

    end = pipeline.run()
    if ctl.unfinished:
        raise RuntimeError(f"{policy} stalled with {ctl.unfinished} unfinished requests")
    ctl.close_spans(end)
    return RunResult(
        policy=policy,
        num_stages=W,
        num_devices=cluster.num_devices,
        makespan_ns=end,
        input_tokens=workload.total_input_tokens,
        generated_tokens=ctl.generated_total,
        expected_output_tokens=workload.total_output_tokens,
        busy_ns=[s.busy_ns for s in pipeline.stages],
        kv_capacity_tokens=capacity,
        kv_samples=list(ctl.ledger.samples),
        kv_peak=ctl.ledger.peak,
        phase_spans=[tuple(s) for s in ctl.phase_spans],
        evictions=list(ctl.ledger.evictions),
        events=pipeline.events,
        executions=pipeline.executions,
        transfers=pipeline.transfers,
        decisions=getattr(ctl, "decisions", []),
        step_log=ctl.ledger.step_log,
    )
