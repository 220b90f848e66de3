from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..cost_model import DEFAULT_PROFILE_GRID
from ..errors import ConfigurationError
from ..predictor import PredictorConfig
from ..scheduler import DEFAULT_HORIZON, DEFAULT_POINT_SPACING, DEFAULT_TOKEN_BUDGET

POLICIES = ("TDPipe", "PP_SB", "PP_HB", "TP_SB", "TP_HB")


@dataclass(frozen=True)
class PolicyParams:
    token_budget: int = DEFAULT_TOKEN_BUDGET
    point_spacing: int = DEFAULT_POINT_SPACING
    horizon: int = DEFAULT_HORIZON
    profile_grid: tuple = DEFAULT_PROFILE_GRID
    representative_kv_len: Optional[float] = None
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    # Phase-switch rules and their manual-threshold alternatives.
    prefill_switch: str = "forecast"  # or "kv_ratio"
    kv_ratio: float = 0.5
    decode_switch: str = "intensity"  # or "finish_ratio"
    finish_ratio: float = 0.5
    stealing: bool = True
    # Baselines.
    chunk_size: int = 512
    max_batch_requests: Optional[int] = 256
    prefill_ratio: int = 1

    def __post_init__(self):
        if isinstance(self.predictor, dict):
            object.__setattr__(self, "predictor", PredictorConfig(**self.predictor))
        object.__setattr__(self, "profile_grid", tuple(int(b) for b in self.profile_grid))
        if self.token_budget < 1:
            raise ConfigurationError("policy.token_budget must be >= 1")
        if self.chunk_size < 1:
            raise ConfigurationError("policy.chunk_size must be >= 1")
        if self.prefill_switch not in ("forecast", "kv_ratio"):
            raise ConfigurationError("policy.prefill_switch must be 'forecast' or 'kv_ratio'")
        if self.decode_switch not in ("intensity", "finish_ratio"):
            raise ConfigurationError("policy.decode_switch must be 'intensity' or 'finish_ratio'")
        if not 0 < self.kv_ratio <= 1:
            raise ConfigurationError("policy.kv_ratio must be in (0, 1]")
        if not 0 < self.finish_ratio <= 1:
            raise ConfigurationError("policy.finish_ratio must be in (0, 1]")
        if self.max_batch_requests is not None and self.max_batch_requests < 1:
            raise ConfigurationError("policy.max_batch_requests must be >= 1")
        if self.prefill_ratio < 1:
            raise ConfigurationError("policy.prefill_ratio must be >= 1")
        if not self.profile_grid:
            raise ConfigurationError("policy.profile_grid must be non-empty")


class ReqState:
    """Mutable per-request progress owned by one engine run."""

    __slots__ = ("id", "input_len", "output_len", "predicted", "generated", "kv",
                 "admit_seq", "finished_at", "evictions", "busy", "prefilled")

    def __init__(self, rid: int, input_len: int, output_len: int, predicted: int):
        self.id = rid
        self.input_len = input_len
        self.output_len = output_len
        self.predicted = predicted
        self.generated = 0
        self.kv = 0
        self.admit_seq = -1
        self.finished_at: Optional[int] = None
        self.evictions = 0
        self.busy = False  # inside a batch that is in flight
        self.prefilled = 0  # prompt tokens processed (chunked prefill)

    @property
    def prefill_tokens(self) -> int:
        """Tokens a (re)prefill must process: the prompt plus output kept across an eviction."""
        return self.input_len + self.generated

    @property
    def predicted_remaining(self) -> int:
        return max(self.predicted - self.generated, 1)

    @property
    def done(self) -> bool:
        return self.finished_at is not None


def split_even(items: Sequence, parts: int) -> list[list]:
    """Split into ``parts`` contiguous chunks; earlier chunks take the remainder."""
    base, extra = divmod(len(items), parts)
    out, pos = [], 0
    for i in range(parts):
        n = base + (1 if i < extra else 0)
        out.append(list(items[pos:pos + n]))
        pos += n
    return out
