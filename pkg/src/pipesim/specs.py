"""Model, device and cluster descriptions plus KV-cache memory arithmetic.

Capacities and bandwidths are decimal units (1 GB = 1e9 bytes). The 30B
sizing example is checked in GiB (2**30), which is how the commonly quoted
"178 GB" figure comes out.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

from .errors import ConfigurationError

GB = 10**9
GiB = 2**30

DEFAULT_ACTIVATION_RESERVE = 0.05
DEFAULT_P2P_LATENCY = 20e-6


@dataclass(frozen=True)
class ModelSpec:
    name: str
    num_layers: int
    num_heads: int
    num_kv_heads: int
    hidden_size: int
    dtype_bytes: int
    param_bytes: float

    def __post_init__(self):
        for f in ("num_layers", "num_heads", "num_kv_heads", "hidden_size", "dtype_bytes"):
            if getattr(self, f) < 1:
                raise ConfigurationError(f"model {self.name}: {f} must be >= 1")
        if self.num_heads % self.num_kv_heads:
            raise ConfigurationError(f"model {self.name}: num_kv_heads must divide num_heads")
        if self.hidden_size % self.num_heads:
            raise ConfigurationError(f"model {self.name}: hidden_size must be divisible by num_heads")
        if self.param_bytes < 0:
            raise ConfigurationError(f"model {self.name}: param_bytes must be >= 0")

    @property
    def num_params(self) -> float:
        return self.param_bytes / self.dtype_bytes


@dataclass(frozen=True)
class HardwareSpec:
    name: str
    flops_per_s: float
    mem_bw: float
    mem_capacity: float
    p2p_bw: float
    p2p_latency: float
    allreduce_bw: float

    def __post_init__(self):
        for f in ("flops_per_s", "mem_bw", "mem_capacity", "p2p_bw", "allreduce_bw"):
            if not getattr(self, f) > 0:
                raise ConfigurationError(f"device {self.name}: {f} must be > 0")
        if self.p2p_latency < 0:
            raise ConfigurationError(f"device {self.name}: p2p_latency must be >= 0")

    def scaled(self, n: int) -> "HardwareSpec":
        """One logical device with ``n`` times the compute, bandwidth and memory."""
        return replace(
            self,
            name=f"{self.name}x{n}",
            flops_per_s=self.flops_per_s * n,
            mem_bw=self.mem_bw * n,
            mem_capacity=self.mem_capacity * n,
        )


@dataclass(frozen=True)
class ClusterSpec:
    device: HardwareSpec
    num_devices: int
    activation_reserve: float = DEFAULT_ACTIVATION_RESERVE

    def __post_init__(self):
        if self.num_devices < 1:
            raise ConfigurationError("num_devices must be >= 1")
        if not 0 <= self.activation_reserve < 1:
            raise ConfigurationError("activation_reserve must be in [0, 1)")

    @property
    def reserve_bytes(self) -> float:
        return self.device.mem_capacity * self.activation_reserve

    def kv_capacity_per_device(self, model: ModelSpec, layer_count: Optional[int] = None) -> float:
        """KV bytes left on one device holding ``layer_count`` layers (default: an even share)."""
        if layer_count is None:
            weights = model.param_bytes / self.num_devices
        else:
            weights = model.param_bytes * layer_count / model.num_layers
        cap = self.device.mem_capacity - weights - self.reserve_bytes
        if cap <= 0:
            raise ConfigurationError(
                f"model {model.name} ({model.param_bytes / GB:.1f} GB) does not fit on "
                f"{self.num_devices} x {self.device.name}: no memory left for KV cache"
            )
        return cap


def kv_bytes_per_token(model: ModelSpec) -> int:
    kv_hidden = model.hidden_size * model.num_kv_heads // model.num_heads
    return 2 * model.num_layers * kv_hidden * model.dtype_bytes


def total_kv_bytes(model: ModelSpec, num_requests: int, avg_len: float) -> float:
    if num_requests < 0 or avg_len < 0:
        raise ConfigurationError("num_requests and avg_len must be >= 0")
    return num_requests * avg_len * kv_bytes_per_token(model)


def partition_model(model: ModelSpec, num_stages: int) -> list[int]:
    if num_stages < 1:
        raise ConfigurationError(f"num_stages must be >= 1, got {num_stages}")
    if num_stages > model.num_layers:
        raise ConfigurationError(
            f"cannot partition {model.num_layers} layers into {num_stages} stages "
            "(partition requires num_stages <= num_layers)"
        )
    base, extra = divmod(model.num_layers, num_stages)
    return [base + 1 if i < extra else base for i in range(num_stages)]


def pipeline_kv_capacity_tokens(model: ModelSpec, cluster: ClusterSpec) -> int:
    """Token capacity of a layer-partitioned pipeline: the tightest stage bounds it."""
    per_token = kv_bytes_per_token(model)
    caps = []
    for layers in partition_model(model, cluster.num_devices):
        stage_bytes_per_token = per_token * layers / model.num_layers
        caps.append(cluster.kv_capacity_per_device(model, layers) / stage_bytes_per_token)
    return int(min(caps))


def tensor_parallel_kv_capacity_tokens(model: ModelSpec, cluster: ClusterSpec) -> int:
    per_device = cluster.kv_capacity_per_device(model)
    return int(per_device * cluster.num_devices // kv_bytes_per_token(model))


MODEL_PRESETS: dict[str, ModelSpec] = {
    "llama2-13b": ModelSpec("llama2-13b", 40, 40, 40, 5120, 2, 26 * GB),
    # 8 KV heads, as in the published model config.
    "qwen2.5-32b": ModelSpec("qwen2.5-32b", 64, 40, 8, 5120, 2, 64 * GB),
    "llama2-70b": ModelSpec("llama2-70b", 80, 64, 8, 8192, 2, 140 * GB),
    "llama-30b": ModelSpec("llama-30b", 60, 52, 52, 6656, 2, 65 * GB),
}
MODEL_ALIASES = {"13b": "llama2-13b", "32b": "qwen2.5-32b", "70b": "llama2-70b", "30b": "llama-30b"}

HARDWARE_PRESETS: dict[str, HardwareSpec] = {
    "l20": HardwareSpec("l20", 119.5e12, 864 * GB, 48 * GB, 14.65 * GB, DEFAULT_P2P_LATENCY, 14.65 * GB),
    "a100": HardwareSpec("a100", 312e12, 1935 * GB, 80 * GB, 14.82 * GB, DEFAULT_P2P_LATENCY, 14.82 * GB),
}


def get_model(name: str) -> ModelSpec:
    key = MODEL_ALIASES.get(name.lower(), name.lower())
    try:
        return MODEL_PRESETS[key]
    except KeyError:
        raise ConfigurationError(
            f"unknown model preset {name!r}; choose from {sorted(MODEL_PRESETS)}"
        ) from None


def get_hardware(name: str) -> HardwareSpec:
    try:
        return HARDWARE_PRESETS[name.lower()]
    except KeyError:
        raise ConfigurationError(
            f"unknown hardware preset {name!r}; choose from {sorted(HARDWARE_PRESETS)}"
        ) from None


def model_from_dict(d: dict) -> ModelSpec:
    """A ``[model]`` table: either ``preset = "..."`` (with optional overrides) or every field."""
    d = dict(d)
    preset = d.pop("preset", None)
    if preset is not None:
        return replace(get_model(preset), **d) if d else get_model(preset)
    if "num_kv_heads" not in d and "num_heads" in d:
        d["num_kv_heads"] = d["num_heads"]
    try:
        return ModelSpec(**d)
    except TypeError as e:
        raise ConfigurationError(f"model: {e}") from None


def hardware_from_dict(d: dict) -> HardwareSpec:
    d = dict(d)
    preset = d.pop("preset", None)
    if preset is not None:
        return replace(get_hardware(preset), **d) if d else get_hardware(preset)
    d.setdefault("p2p_latency", DEFAULT_P2P_LATENCY)
    if "p2p_bw" not in d and "allreduce_bw" in d:
        d["p2p_bw"] = d["allreduce_bw"]
    try:
        return HardwareSpec(**d)
    except TypeError as e:
        raise ConfigurationError(f"hardware: {e}") from None


def spec_to_dict(spec) -> dict:
    return asdict(spec)
