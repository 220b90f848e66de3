"""Synthetic and trace-backed request sets.

All requests arrive at t=0 (offline batch inference). Generated lengths are
clamped into ``[1, max_len]`` rather than resampled, so ``count`` is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .errors import ConfigurationError, TraceParseError, ValidationError
from .rng import SplitMix64, derive_seed

DEFAULT_MAX_INPUT_LEN = 1024
DEFAULT_MAX_OUTPUT_LEN = 1024


@dataclass(frozen=True)
class Request:
    id: int
    input_len: int
    true_output_len: int
    arrival: int = 0

    def __post_init__(self):
        if self.input_len < 1:
            raise ValidationError(f"request {self.id}: input_len must be >= 1, got {self.input_len}")
        if self.true_output_len < 1:
            raise ValidationError(
                f"request {self.id}: output_len must be >= 1, got {self.true_output_len}"
            )


@dataclass(frozen=True)
class RequestSet:
    requests: tuple[Request, ...] = ()
    seed: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "requests", tuple(self.requests))
        seen = set()
        for r in self.requests:
            if r.id in seen:
                raise ValidationError(f"duplicate request id {r.id}")
            seen.add(r.id)

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self) -> Iterator[Request]:
        return iter(self.requests)

    def __getitem__(self, i):
        return self.requests[i]

    @property
    def total_input_tokens(self) -> int:
        return sum(r.input_len for r in self.requests)

    @property
    def total_output_tokens(self) -> int:
        return sum(r.true_output_len for r in self.requests)

    def mean_input_len(self) -> float:
        return self.total_input_tokens / len(self.requests) if self.requests else 0.0

    def mean_output_len(self) -> float:
        return self.total_output_tokens / len(self.requests) if self.requests else 0.0


@dataclass(frozen=True)
class LengthDist:
    """A length distribution: ``constant``, ``uniform`` or ``lognormal``.

    ``uniform`` samples integers in ``[lo, hi]``. ``lognormal`` samples
    ``exp(mu + sigma * N(0,1))``, rounded, then clamped to ``[1, max_len]``.
    """

    kind: str
    value: float = 0.0
    lo: int = 1
    hi: int = 1
    mu: float = 0.0
    sigma: float = 1.0
    max_len: int = DEFAULT_MAX_INPUT_LEN

    @classmethod
    def constant(cls, value: int, max_len: int = DEFAULT_MAX_INPUT_LEN) -> "LengthDist":
        return cls("constant", value=value, max_len=max(max_len, int(value))).validated()

    @classmethod
    def uniform(cls, lo: int, hi: int, max_len: int = DEFAULT_MAX_INPUT_LEN) -> "LengthDist":
        return cls("uniform", lo=lo, hi=hi, max_len=max(max_len, hi)).validated()

    @classmethod
    def lognormal(cls, mu: float, sigma: float, max_len: int = DEFAULT_MAX_INPUT_LEN) -> "LengthDist":
        return cls("lognormal", mu=mu, sigma=sigma, max_len=max_len).validated()

    @classmethod
    def from_dict(cls, d: dict, default_max: int = DEFAULT_MAX_INPUT_LEN) -> "LengthDist":
        kind = d.get("kind")
        max_len = int(d.get("max_len", default_max))
        if kind == "constant":
            return cls.constant(int(d["value"]), max_len)
        if kind == "uniform":
            return cls.uniform(int(d["lo"]), int(d["hi"]), max_len)
        if kind == "lognormal":
            return cls.lognormal(float(d["mu"]), float(d["sigma"]), max_len)
        raise ConfigurationError(f"unknown length distribution kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": int(self.value), "max_len": self.max_len}
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.lo, "hi": self.hi, "max_len": self.max_len}
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma, "max_len": self.max_len}

    def validated(self) -> "LengthDist":
        if self.max_len < 1:
            raise ConfigurationError(f"max_len must be >= 1, got {self.max_len}")
        if self.kind == "constant":
            if self.value < 1:
                raise ConfigurationError(f"constant length must be >= 1, got {self.value}")
        elif self.kind == "uniform":
            if self.lo < 1 or self.hi < self.lo:
                raise ConfigurationError(f"uniform bounds must satisfy 1 <= lo <= hi, got ({self.lo}, {self.hi})")
        elif self.kind == "lognormal":
            if not self.sigma > 0 or not math.isfinite(self.mu):
                raise ConfigurationError(f"lognormal needs finite mu and sigma > 0, got ({self.mu}, {self.sigma})")
        else:
            raise ConfigurationError(f"unknown length distribution kind {self.kind!r}")
        return self

    def sample(self, rng: SplitMix64) -> int:
        if self.kind == "constant":
            x = int(self.value)
        elif self.kind == "uniform":
            x = rng.randint(self.lo, self.hi)
        else:
            x = int(round(math.exp(self.mu + self.sigma * rng.normal())))
        return min(max(x, 1), self.max_len)


def generate_workload(
    count: int,
    input_dist: LengthDist,
    output_dist: LengthDist,
    seed: int,
) -> RequestSet:
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    input_dist.validated()
    output_dist.validated()
    # Separate streams so changing one distribution leaves the other's draws intact.
    in_rng = SplitMix64(derive_seed(seed, 1))
    out_rng = SplitMix64(derive_seed(seed, 2))
    reqs = [
        Request(i, input_dist.sample(in_rng), output_dist.sample(out_rng))
        for i in range(count)
    ]
    return RequestSet(tuple(reqs), seed=seed)


def _parse_lines(lines: Iterable[str], path) -> list[Request]:
    out = []
    seen = set()
    for no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise TraceParseError(path, no, f"expected 3 fields id,input_len,output_len, got {len(parts)}")
        try:
            rid, inp, outp = (int(p, 10) for p in parts)
        except ValueError:
            raise TraceParseError(path, no, f"non-integer field in {line!r}") from None
        try:
            req = Request(rid, inp, outp)
        except ValidationError as e:
            raise ValidationError(f"{path}:{no}: {e}") from None
        if rid in seen:
            raise ValidationError(f"{path}:{no}: duplicate request id {rid}")
        seen.add(rid)
        out.append(req)
    return out


def load_trace(path: Union[str, Path]) -> RequestSet:
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        return RequestSet(tuple(_parse_lines(f, path)))


def save_trace(rs: RequestSet, path: Union[str, Path]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write("# id,input_len,output_len\n")
        if rs.seed is not None:
            f.write(f"# seed={rs.seed}\n")
        for r in rs:
            f.write(f"{r.id},{r.input_len},{r.true_output_len}\n")
