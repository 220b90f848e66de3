"""Roofline execution-time model for prefill, decode and hybrid iterations.

Every stage-level time is ``max(compute, memory) + launch_overhead`` where

* compute = 2 * stage_params * scheduled_tokens / (flops_per_s * compute_efficiency)
* memory  = (stage_weight_bytes + stage_kv_bytes_read) / mem_bw

Attention FLOPs are left out unless ``CostParams.attention_flops`` is set.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError
from .specs import ClusterSpec, HardwareSpec, ModelSpec, kv_bytes_per_token, partition_model

DEFAULT_PROFILE_GRID = tuple(2**i for i in range(11))  # 1 .. 1024


@dataclass(frozen=True)
class CostParams:
    launch_overhead: float = 50e-6
    # Achieved fraction of peak tensor FLOP/s for dense GEMMs.
    compute_efficiency: float = 0.4
    attention_flops: bool = False

    def __post_init__(self):
        if not 0 < self.compute_efficiency <= 1:
            raise ConfigurationError("compute_efficiency must be in (0, 1]")
        if self.launch_overhead < 0:
            raise ConfigurationError("launch_overhead must be >= 0")


DEFAULT_COST = CostParams()


@dataclass(frozen=True)
class StageSpec:
    layer_count: int
    weight_bytes: float
    device: HardwareSpec
    model: ModelSpec

    @property
    def params(self) -> float:
        return self.weight_bytes / self.model.dtype_bytes

    @property
    def kv_bytes_per_token(self) -> float:
        return kv_bytes_per_token(self.model) * self.layer_count / self.model.num_layers


def make_stage(model: ModelSpec, device: HardwareSpec, layer_count: int) -> StageSpec:
    return StageSpec(layer_count, model.param_bytes * layer_count / model.num_layers, device, model)


def pipeline_stages(model: ModelSpec, cluster: ClusterSpec) -> list[StageSpec]:
    return [make_stage(model, cluster.device, n) for n in partition_model(model, cluster.num_devices)]


def tensor_parallel_stage(model: ModelSpec, cluster: ClusterSpec) -> StageSpec:
    """The whole TP group as one executor with aggregated compute and bandwidth."""
    return make_stage(model, cluster.device.scaled(cluster.num_devices), model.num_layers)


def _compute_time(tokens: float, stage: StageSpec, cost: CostParams) -> float:
    return 2.0 * stage.params * tokens / (stage.device.flops_per_s * cost.compute_efficiency)


def _attention_time(new_tokens: float, context_tokens: float, stage: StageSpec, cost: CostParams) -> float:
    if not cost.attention_flops or new_tokens <= 0:
        return 0.0
    # QK^T and AV: 2 matmuls x 2 FLOPs per MAC over the attended context.
    flops = 4.0 * stage.layer_count * stage.model.hidden_size * new_tokens * context_tokens
    return flops / (stage.device.flops_per_s * cost.compute_efficiency)


def iteration_time(
    stage: StageSpec,
    decode_requests: int = 0,
    decode_kv_tokens: float = 0,
    prefill_tokens: int = 0,
    prefill_context_tokens: float = 0,
    cost: CostParams = DEFAULT_COST,
) -> float:
    """Stage time of one iteration mixing decode requests and prefill tokens.

    ``prefill_context_tokens`` is KV already cached for the prefill work
    (earlier chunks of a chunked prefill); it is re-read from memory.
    """
    tokens = decode_requests + prefill_tokens
    compute = _compute_time(tokens, stage, cost)
    compute += _attention_time(prefill_tokens, prefill_context_tokens + prefill_tokens / 2, stage, cost)
    compute += _attention_time(decode_requests, decode_kv_tokens / max(decode_requests, 1), stage, cost)
    kv_bytes = stage.kv_bytes_per_token * (decode_kv_tokens + prefill_context_tokens)
    memory = (stage.weight_bytes + kv_bytes) / stage.device.mem_bw
    return max(compute, memory) + cost.launch_overhead


def prefill_time(total_tokens: int, stage: StageSpec, cost: CostParams = DEFAULT_COST) -> float:
    if total_tokens < 1:
        raise ConfigurationError("prefill needs at least one token")
    return iteration_time(stage, prefill_tokens=total_tokens, cost=cost)


def decode_step_time(
    batch_size: int, total_kv_tokens: float, stage: StageSpec, cost: CostParams = DEFAULT_COST
) -> float:
    if batch_size < 1:
        raise ConfigurationError("decode batch must hold at least one request")
    return iteration_time(stage, decode_requests=batch_size, decode_kv_tokens=total_kv_tokens, cost=cost)


def activation_bytes(tokens: int, model: ModelSpec) -> int:
    return tokens * model.hidden_size * model.dtype_bytes


def p2p_time(nbytes: float, device: HardwareSpec) -> float:
    return device.p2p_latency + nbytes / device.p2p_bw


def allreduce_time(nbytes: float, num_ranks: int, device: HardwareSpec) -> float:
    """Ring all-reduce: each rank moves 2 (n-1)/n of the buffer."""
    if num_ranks < 2:
        return 0.0
    return 2.0 * nbytes * (num_ranks - 1) / num_ranks / device.allreduce_bw + device.p2p_latency


def tp_communication_time(tokens: int, model: ModelSpec, cluster: ClusterSpec) -> float:
    """Two all-reduces per transformer layer over the activations of ``tokens``."""
    per = allreduce_time(activation_bytes(tokens, model), cluster.num_devices, cluster.device)
    return 2 * model.num_layers * per


def decode_crossover_batch(stage: StageSpec, kv_len_per_request: float = 0.0,
                           cost: CostParams = DEFAULT_COST, limit: int = 1 << 20) -> Optional[int]:
    """Smallest batch size at which the compute term exceeds the memory term."""
    def compute_bound(b):
        comp = _compute_time(b, stage, cost)
        mem = (stage.weight_bytes + stage.kv_bytes_per_token * b * kv_len_per_request) / stage.device.mem_bw
        return comp > mem

    if not compute_bound(limit):
        return None
    lo, hi = 1, limit
    while lo < hi:
        mid = (lo + hi) // 2
        if compute_bound(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass(frozen=True)
class ProfileTable:
    """Achieved decode rate (requests/s through the whole pipeline) per batch size."""

    batch_sizes: tuple[int, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        if not self.batch_sizes:
            raise ConfigurationError("profile table needs at least one entry")
        if len(self.batch_sizes) != len(self.rates):
            raise ConfigurationError("batch_sizes and rates differ in length")
        if any(b <= a for a, b in zip(self.batch_sizes, self.batch_sizes[1:])):
            raise ConfigurationError("profile batch sizes must be strictly ascending")
        if any(r <= 0 for r in self.rates):
            raise ConfigurationError("profile rates must be positive")
        # Non-decreasing by construction: a larger batch can always run the smaller one's work.
        object.__setattr__(self, "rates", tuple(np.maximum.accumulate(np.asarray(self.rates, float)).tolist()))

    @property
    def entries(self) -> dict[int, float]:
        return dict(zip(self.batch_sizes, self.rates))

    @property
    def peak_rate(self) -> float:
        return self.rates[-1]

    def achieved_rate(self, batch_size: float) -> float:
        if batch_size <= 0:
            return 0.0
        return float(np.interp(batch_size, self.batch_sizes, self.rates))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["batch_size", "achieved_rate"])
        for b, r in zip(self.batch_sizes, self.rates):
            w.writerow([b, repr(r)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ProfileTable":
        rows = [row for row in csv.reader(io.StringIO(text)) if row and not row[0].startswith("#")]
        if rows and rows[0][0] == "batch_size":
            rows = rows[1:]
        return cls(tuple(int(r[0]) for r in rows), tuple(float(r[1]) for r in rows))

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ProfileTable":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def pipeline_decode_step_time(batch_size: int, kv_tokens: float, stages: Sequence[StageSpec],
                              cost: CostParams = DEFAULT_COST) -> float:
    """One decode step of one batch through every stage plus the hand-offs between them."""
    total = sum(decode_step_time(batch_size, kv_tokens, s, cost) for s in stages)
    model = stages[0].model
    total += (len(stages) - 1) * p2p_time(activation_bytes(batch_size, model), stages[0].device)
    return total


def build_profile_table(
    model: ModelSpec,
    cluster: ClusterSpec,
    batch_sizes: Sequence[int] = DEFAULT_PROFILE_GRID,
    representative_kv_len: float = 512.0,
    cost: CostParams = DEFAULT_COST,
) -> ProfileTable:
    sizes = tuple(int(b) for b in batch_sizes)
    if not sizes:
        raise ConfigurationError("batch_sizes must be non-empty")
    stages = pipeline_stages(model, cluster)
    rates = tuple(
        b / pipeline_decode_step_time(b, b * representative_kv_len, stages, cost) for b in sizes
    )
    return ProfileTable(sizes, rates)
