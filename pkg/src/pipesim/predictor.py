"""Output-length predictors and the grouped accumulated-error metric.

Three predictors share one entry point, :func:`predict`:

``oracle``
    the true output length.
``bucket``
    the training-set mean of the percentile bucket holding the true length.
    With ``misclassification_rate > 0`` a deterministic per-request draw
    moves that fraction of requests to an adjacent bucket, which is how a
    classifier of limited accuracy behaves.
``noisy``
    ``true_len * exp(sigma * z - sigma**2 / 2)`` with ``z ~ N(0, 1)``, i.e.
    mean-preserving multiplicative noise, rounded and clamped to >= 1.

Percentiles use the nearest-rank definition: the p-th percentile of ``n``
sorted values is element ``ceil(p / 100 * n)`` (1-based), and P0 is the
minimum.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .errors import ConfigurationError
from .rng import SplitMix64, derive_seed
from .workload import Request, RequestSet

DEFAULT_PERCENTILES = (0, 25, 50, 75, 90, 95, 99)
PREDICTOR_KINDS = ("oracle", "bucket", "noisy")


def nearest_rank(sorted_values: Sequence[int], pct: float):
    n = len(sorted_values)
    if n == 0:
        raise ConfigurationError("percentile of an empty sample")
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[min(rank, n) - 1]


@dataclass(frozen=True)
class LengthBuckets:
    boundaries: tuple[int, ...]
    bucket_means: tuple[float, ...]

    def __post_init__(self):
        if not self.boundaries or len(self.boundaries) != len(self.bucket_means):
            raise ConfigurationError("buckets need matching, non-empty boundaries and means")
        if any(b <= a for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise ConfigurationError("bucket boundaries must be strictly ascending")

    def __len__(self) -> int:
        return len(self.boundaries)

    def bucket_of(self, length: int) -> int:
        # Lengths below the first cut fall in bucket 0; the last bucket is open-ended.
        return max(bisect_right(self.boundaries, length) - 1, 0)

    def to_text(self) -> str:
        lines = ["# boundary,mean"]
        lines += [f"{b},{m:.6f}" for b, m in zip(self.boundaries, self.bucket_means)]
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "LengthBuckets":
        rows = [ln.split(",") for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        return cls(tuple(int(r[0]) for r in rows), tuple(float(r[1]) for r in rows))


def fit_buckets(training: RequestSet, percentiles: Sequence[float] = DEFAULT_PERCENTILES) -> LengthBuckets:
    lengths = sorted(r.true_output_len for r in training)
    if not lengths:
        raise ConfigurationError("cannot fit length buckets on an empty training set")
    cuts = sorted({nearest_rank(lengths, p) for p in percentiles})
    sums = [0] * len(cuts)
    counts = [0] * len(cuts)
    tmp = LengthBuckets(tuple(cuts), tuple(float(c) for c in cuts))
    for x in lengths:
        i = tmp.bucket_of(x)
        sums[i] += x
        counts[i] += 1
    # Each cut is itself a training value, so no bucket is empty.
    means = tuple(s / c for s, c in zip(sums, counts))
    return LengthBuckets(tuple(cuts), means)


@dataclass(frozen=True)
class Prediction:
    request_id: int
    predicted_len: int

    def __post_init__(self):
        if self.predicted_len < 1:
            raise ConfigurationError(f"predicted_len must be >= 1, got {self.predicted_len}")


def bucket_index_predicted(request: Request, buckets: LengthBuckets,
                           misclassification_rate: float = 0.0, seed: int = 0) -> int:
    true_idx = buckets.bucket_of(request.true_output_len)
    if misclassification_rate <= 0 or len(buckets) == 1:
        return true_idx
    rng = SplitMix64(derive_seed(seed, request.id))
    if rng.uniform() >= misclassification_rate:
        return true_idx
    if true_idx == 0:
        return 1
    if true_idx == len(buckets) - 1:
        return true_idx - 1
    return true_idx - 1 if rng.uniform() < 0.5 else true_idx + 1


def predict(
    kind: str,
    request: Request,
    buckets: Optional[LengthBuckets] = None,
    noise_seed: Optional[int] = None,
    misclassification_rate: float = 0.0,
    noise_sigma: float = 0.5,
) -> Prediction:
    if kind == "oracle":
        return Prediction(request.id, request.true_output_len)
    if kind == "bucket":
        if buckets is None:
            raise ConfigurationError("bucket predictor requires fitted LengthBuckets")
        if misclassification_rate > 0 and noise_seed is None:
            raise ConfigurationError("bucket predictor with misclassification requires a noise_seed")
        idx = bucket_index_predicted(request, buckets, misclassification_rate, noise_seed or 0)
        return Prediction(request.id, max(1, int(round(buckets.bucket_means[idx]))))
    if kind == "noisy":
        if noise_seed is None:
            raise ConfigurationError("noisy predictor requires a noise_seed")
        z = SplitMix64(derive_seed(noise_seed, request.id)).normal()
        factor = math.exp(noise_sigma * z - noise_sigma * noise_sigma / 2.0)
        return Prediction(request.id, max(1, int(round(request.true_output_len * factor))))
    raise ConfigurationError(f"unknown predictor kind {kind!r}; choose from {PREDICTOR_KINDS}")


@dataclass(frozen=True)
class PredictorConfig:
    kind: str = "bucket"
    misclassification_rate: float = 0.45
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ConfigurationError(f"predictor.kind must be one of {PREDICTOR_KINDS}, got {self.kind!r}")
        if not 0 <= self.misclassification_rate <= 1:
            raise ConfigurationError("predictor.misclassification_rate must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigurationError("predictor.noise_sigma must be >= 0")

    def predict_all(self, requests: RequestSet, buckets: Optional[LengthBuckets]) -> dict[int, int]:
        return {
            r.id: predict(self.kind, r, buckets, self.seed, self.misclassification_rate, self.noise_sigma).predicted_len
            for r in requests
        }


def bucket_accuracy(requests: Iterable[Request], predictions: dict[int, int], buckets: LengthBuckets) -> float:
    """Fraction of requests whose predicted length falls in the true length's bucket."""
    hits = total = 0
    for r in requests:
        total += 1
        hits += buckets.bucket_of(predictions[r.id]) == buckets.bucket_of(r.true_output_len)
    return hits / total if total else 1.0


def accumulated_error(predictions: Sequence[Prediction], actuals: RequestSet, group_size: int) -> float:
    if group_size < 1:
        raise ConfigurationError("group_size must be >= 1")
    by_id = {p.request_id: p.predicted_len for p in predictions}
    missing = [r.id for r in actuals if r.id not in by_id]
    if missing:
        raise ConfigurationError(f"no prediction for request ids {missing[:5]}")
    reqs = list(actuals)
    # A trailing partial group is dropped unless it is the only group.
    stop = len(reqs) - len(reqs) % group_size if len(reqs) >= group_size else len(reqs)
    errors = []
    for start in range(0, stop, group_size):
        group = reqs[start:start + group_size]
        actual = sum(r.true_output_len for r in group)
        predicted = sum(by_id[r.id] for r in group)
        errors.append(abs(predicted - actual) / actual)
    return sum(errors) / len(errors) if errors else 0.0
