"""Run configuration documents (TOML) and the scenario presets shipped with the package.

A document describes one experiment::

    name = "..."
    seed = 1
    policies = ["TDPipe"]        # or policy = "TDPipe"
    devices = [4]                # or a single integer
    output_dir = "runs/example"  # optional

    [workload]                   # generator parameters, or trace = "path.csv"
    count = 4000
    input = { kind = "lognormal", mu = 5.5, sigma = 1.0, max_len = 1024 }
    output = { kind = "lognormal", mu = 5.5, sigma = 1.0, max_len = 1024 }

    [model]                      # preset plus overrides, every field, or file = "model.toml"
    preset = "qwen2.5-32b"

    [hardware]
    preset = "a100"

    [policy_params]              # any PolicyParams field; predictor is a sub-table
    token_budget = 2048

    [cost]                       # any CostParams field
    compute_efficiency = 0.4

    [[sweep]]                    # optional grid cells for the sweep command
    label = "kv 0.5"
    policy_params = { prefill_switch = "kv_ratio", kv_ratio = 0.5 }
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .cost_model import CostParams
from .engine.common import POLICIES, PolicyParams
from .errors import ConfigurationError
from .predictor import PredictorConfig
from .specs import ClusterSpec, HardwareSpec, ModelSpec, hardware_from_dict, model_from_dict
from .workload import LengthDist, RequestSet, generate_workload, load_trace

_TOP_KEYS = {"name", "description", "seed", "policy", "policies", "devices", "output_dir", "workload", "model",
             "hardware", "policy_params", "cost", "activation_reserve", "sweep", "workers"}


@dataclass(frozen=True)
class SweepCell:
    label: str
    policy: str
    params: PolicyParams


@dataclass(frozen=True)
class RunConfig:
    name: str
    seed: int
    policies: tuple
    devices: tuple
    workload: dict
    model: ModelSpec
    hardware: HardwareSpec
    params: PolicyParams
    cost: CostParams
    activation_reserve: float
    output_dir: Optional[str]
    sweep: tuple = ()
    workers: int = 1
    source_text: str = field(default="", compare=False, repr=False)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def cluster(self, devices: int) -> ClusterSpec:
        return ClusterSpec(self.hardware, devices, self.activation_reserve)

    def build_workload(self) -> RequestSet:
        w = self.workload
        if "trace" in w:
            path = Path(w["trace"])
            return load_trace(path if path.is_absolute() else self.base_dir / path)
        return generate_workload(
            w["count"],
            LengthDist.from_dict(w["input"]),
            LengthDist.from_dict(w["output"]),
            self.seed,
        )


def _field(path: str, exc: Exception) -> ConfigurationError:
    return ConfigurationError(f"config field '{path}': {exc}")


def _as_tuple(value, path: str, kind) -> tuple:
    items = value if isinstance(value, list) else [value]
    if not items:
        raise _field(path, "must not be empty")
    for v in items:
        if not isinstance(v, kind) or isinstance(v, bool):
            raise _field(path, f"expected {kind.__name__}, got {v!r}")
    return tuple(items)


def _dataclass_from(cls, d: dict, path: str):
    if not isinstance(d, dict):
        raise _field(path, "expected a table")
    known = {f.name for f in fields(cls)}
    for k in d:
        if k not in known:
            raise _field(f"{path}.{k}", f"unknown key; expected one of {sorted(known)}")
    try:
        return cls(**d)
    except ConfigurationError as e:
        msg = str(e)
        name = msg.split(" ", 1)[0].split(".")[-1]
        where = f"{path}.{name}" if name in known else path
        raise _field(where, msg) from None
    except (TypeError, ValueError) as e:
        raise _field(path, e) from None


def _policy_params(d: dict, path: str) -> PolicyParams:
    d = dict(d)
    pred = d.pop("predictor", None)
    if pred is not None:
        d["predictor"] = _dataclass_from(PredictorConfig, pred, f"{path}.predictor")
    return _dataclass_from(PolicyParams, d, path)


def _load_spec_table(d: dict, path: str, base_dir: Path, builder):
    if not isinstance(d, dict):
        raise _field(path, "expected a table")
    d = dict(d)
    if "file" in d:
        file = Path(d.pop("file"))
        file = file if file.is_absolute() else base_dir / file
        try:
            loaded = tomllib.loads(file.read_text())
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise _field(f"{path}.file", e) from None
        d = {**loaded, **d}
    try:
        return builder(d)
    except ConfigurationError as e:
        raise _field(path, e) from None
    except TypeError as e:
        raise _field(path, e) from None


def _workload(d: dict, base_dir: Path) -> dict:
    if not isinstance(d, dict):
        raise _field("workload", "expected a table")
    if "trace" in d:
        extra = set(d) - {"trace"}
        if extra:
            raise _field(f"workload.{sorted(extra)[0]}", "not allowed together with 'trace'")
        return {"trace": str(d["trace"])}
    for k in d:
        if k not in ("count", "input", "output"):
            raise _field(f"workload.{k}", "unknown key; expected count, input, output or trace")
    count = d.get("count")
    if not isinstance(count, int) or isinstance(count, bool) or count < 1:
        raise _field("workload.count", f"must be an integer >= 1, got {count!r}")
    out = {"count": count}
    for side in ("input", "output"):
        if side not in d:
            raise _field(f"workload.{side}", "missing length distribution")
        try:
            out[side] = LengthDist.from_dict(d[side]).to_dict()
        except (ConfigurationError, KeyError, TypeError, ValueError) as e:
            raise _field(f"workload.{side}", e) from None
    return out


def parse_config(text: str, base_dir: Union[str, Path] = ".", name: Optional[str] = None) -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"config is not valid TOML: {e}") from None
    base_dir = Path(base_dir)
    for k in doc:
        if k not in _TOP_KEYS:
            raise _field(k, f"unknown key; expected one of {sorted(_TOP_KEYS)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise _field("seed", f"must be a non-negative integer, got {seed!r}")
    if "policy" in doc and "policies" in doc:
        raise _field("policy", "give either 'policy' or 'policies'")
    pol_key = "policies" if "policies" in doc else "policy"
    policies = _as_tuple(doc.get(pol_key, "TDPipe"), pol_key, str)
    for p in policies:
        if p not in POLICIES:
            raise _field(pol_key, f"unknown policy {p!r}; expected one of {list(POLICIES)}")
    devices = _as_tuple(doc.get("devices", 4), "devices", int)
    if any(n < 1 for n in devices):
        raise _field("devices", "device counts must be >= 1")
    if "workload" not in doc:
        raise _field("workload", "missing table")
    workload = _workload(doc["workload"], base_dir)
    model = _load_spec_table(doc.get("model", {"preset": "qwen2.5-32b"}), "model", base_dir, model_from_dict)
    hardware = _load_spec_table(doc.get("hardware", {"preset": "a100"}), "hardware", base_dir, hardware_from_dict)
    params = _policy_params(doc.get("policy_params", {}), "policy_params")
    cost = _dataclass_from(CostParams, doc.get("cost", {}), "cost")
    reserve = doc.get("activation_reserve", 0.05)
    if not isinstance(reserve, (int, float)) or not 0 <= reserve < 1:
        raise _field("activation_reserve", f"must be in [0, 1), got {reserve!r}")
    workers = doc.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise _field("workers", f"must be an integer >= 1, got {workers!r}")
    cells = []
    for i, c in enumerate(doc.get("sweep", [])):
        where = f"sweep[{i}]"
        if not isinstance(c, dict) or "label" not in c:
            raise _field(where, "each cell needs a label")
        extra = set(c) - {"label", "policy", "policy_params"}
        if extra:
            raise _field(f"{where}.{sorted(extra)[0]}", "unknown key; expected label, policy, policy_params")
        policy = c.get("policy", policies[0])
        if policy not in POLICIES:
            raise _field(f"{where}.policy", f"unknown policy {policy!r}")
        merged = {**doc.get("policy_params", {}), **c.get("policy_params", {})}
        if "predictor" in c.get("policy_params", {}) and "predictor" in doc.get("policy_params", {}):
            merged["predictor"] = {**doc["policy_params"]["predictor"], **c["policy_params"]["predictor"]}
        cells.append(SweepCell(str(c["label"]), policy, _policy_params(merged, f"{where}.policy_params")))
    out_dir = doc.get("output_dir")
    return RunConfig(
        name=str(doc.get("name", name or "run")),
        seed=seed,
        policies=policies,
        devices=devices,
        workload=workload,
        model=model,
        hardware=hardware,
        params=params,
        cost=cost,
        activation_reserve=float(reserve),
        output_dir=str(out_dir) if out_dir is not None else None,
        sweep=tuple(cells),
        workers=workers,
        source_text=text,
        base_dir=base_dir,
    )


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from None
    return parse_config(text, path.parent, path.stem)


# -- scenario presets ------------------------------------------------------------

def _scenario_dir():
    return resources.files("pipesim") / "scenarios"


def list_scenarios() -> list[tuple[str, str]]:
    """(name, description) for every preset shipped with the package."""
    out = []
    for entry in sorted(_scenario_dir().iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".toml"):
            doc = tomllib.loads(entry.read_text())
            out.append((entry.name[:-5], doc.get("description", "")))
    return out


def scenario_text(name: str) -> str:
    entry = _scenario_dir() / f"{name}.toml"
    if not entry.is_file():
        names = [n for n, _ in list_scenarios()]
        raise ConfigurationError(f"unknown scenario {name!r}; available: {names}")
    return entry.read_text()


def load_scenario(name: str) -> RunConfig:
    return parse_config(scenario_text(name), ".", name)


def resolve(config_or_scenario: str) -> RunConfig:
    """A path to a TOML file, or the name of a shipped scenario."""
    p = Path(config_or_scenario)
    if p.suffix == ".toml" or p.is_file():
        return load_config(p)
    return load_scenario(config_or_scenario)
