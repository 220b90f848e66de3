"""Command-line entry point: ``pipesim {run,compare,sweep,gen-workload,list-presets}``."""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig, list_scenarios, resolve
from .engine import POLICIES, run
from .errors import ConfigurationError, TraceParseError, ValidationError
from .metrics import compare, export_trace, kv_timeline, timeline_csv
from .specs import HARDWARE_PRESETS, MODEL_PRESETS
from .workload import LengthDist, generate_workload, save_trace

OUTPUT_ENV = "PIPESIM_OUTPUT_DIR"


class UsageError(Exception):
    pass


def output_dir(cfg: RunConfig, flag: Optional[str]) -> Path:
    if flag:
        return Path(flag)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env) / cfg.name
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path("runs") / cfg.name


def _write_common(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.source_text)
    meta = {
        "pipesim": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg.seed,
        "name": cfg.name,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _override(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if getattr(args, "policy", None):
        changes["policies"] = (args.policy,)
    if getattr(args, "policies", None):
        changes["policies"] = tuple(args.policies)
    if getattr(args, "devices", None):
        changes["devices"] = tuple(args.devices)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    for p in changes.get("policies", ()):
        if p not in POLICIES:
            raise ConfigurationError(f"config field 'policy': unknown policy {p!r}; expected one of {list(POLICIES)}")
    return replace(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _override(resolve(args.config), args)
    if len(cfg.policies) != 1 or len(cfg.devices) != 1:
        raise UsageError("run needs exactly one policy and one device count; use compare for grids")
    workload = cfg.build_workload()
    result = run(cfg.policies[0], workload, cfg.model, cfg.cluster(cfg.devices[0]), cfg.params, cfg.seed,
                 cfg.cost, record_trace=not args.no_trace)
    out = output_dir(cfg, args.out)
    _write_common(out, cfg)
    (out / "summary.json").write_text(result.summary_json())
    if not args.no_trace:
        export_trace(result.events, out / "trace.json", result.makespan_ns)
    (out / "kv_timeline.csv").write_text(timeline_csv(kv_timeline(result)))
    s = result.summary()
    print(f"{s['policy']} on {s['num_devices']} device(s): {s['throughput_tokens_per_s']:.1f} tokens/s, "
          f"bubble ratio {s['bubble_ratio']:.4f}, makespan {s['makespan_ns'] / 1e9:.3f} s -> {out}")
    return 0


def _cell(job):
    label, policy, devices, cfg, workload, params = job
    try:
        r = run(policy, workload, cfg.model, cfg.cluster(devices), params, cfg.seed, cfg.cost, record_trace=False)
    except ConfigurationError as e:
        return label, policy, devices, None, str(e)
    return label, policy, devices, r, None


def _map(jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_cell, jobs))


def cmd_compare(args) -> int:
    cfg = _override(resolve(args.config), args)
    workload = cfg.build_workload()
    jobs = [(f"{p}@{n}", p, n, cfg, workload, cfg.params) for p in cfg.policies for n in cfg.devices]
    cells = _map(jobs, args.workers or cfg.workers)
    out = output_dir(cfg, args.out)
    _write_common(out, cfg)
    results = []
    skipped = []
    for label, policy, devices, r, err in cells:
        if r is None:
            skipped.append(f"{policy},{devices},{err}")
            print(f"skipped {policy} on {devices} device(s): {err}", file=sys.stderr)
            continue
        results.append(r)
        (out / "summaries").mkdir(exist_ok=True)
        (out / "summaries" / f"{policy}-{devices}.json").write_text(r.summary_json())
    table = compare(results)
    (out / "comparison.csv").write_text(table.to_csv())
    if skipped:
        (out / "skipped.csv").write_text("policy,devices,reason\n" + "\n".join(skipped) + "\n")
    sys.stdout.write(table.to_csv())
    return 0


SWEEP_HEADER = "label,policy,devices,throughput_tokens_per_s,bubble_ratio,makespan_ns,evictions,relative_to_first\n"


def cmd_sweep(args) -> int:
    cfg = _override(resolve(args.config), args)
    if not cfg.sweep:
        raise UsageError(f"config {cfg.name!r} defines no [[sweep]] cells")
    workload = cfg.build_workload()
    devices = cfg.devices[0]
    jobs = [(c.label, c.policy, devices, cfg, workload, c.params) for c in cfg.sweep]
    cells = _map(jobs, args.workers or cfg.workers)
    out = output_dir(cfg, args.out)
    _write_common(out, cfg)
    lines = [SWEEP_HEADER]
    first = None
    for label, policy, n, r, err in cells:
        if r is None:
            raise ConfigurationError(f"sweep cell {label!r}: {err}")
        first = first or r.throughput
        lines.append(f"{label},{policy},{n},{r.throughput:.6f},{r.bubble_ratio:.6f},{r.makespan_ns},"
                     f"{len(r.evictions)},{r.throughput / first:.6f}\n")
    text = "".join(lines)
    (out / "sweep.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def _dist(spec: str, max_len: int) -> LengthDist:
    """``constant:V``, ``uniform:LO,HI`` or ``lognormal:MU,SIGMA``."""
    kind, _, rest = spec.partition(":")
    vals = [v for v in rest.split(",") if v]
    try:
        if kind == "constant" and len(vals) == 1:
            return LengthDist.constant(int(vals[0]), max_len)
        if kind == "uniform" and len(vals) == 2:
            return LengthDist.uniform(int(vals[0]), int(vals[1]), max_len)
        if kind == "lognormal" and len(vals) == 2:
            return LengthDist.lognormal(float(vals[0]), float(vals[1]), max_len)
    except ValueError as e:
        raise ConfigurationError(f"length distribution {spec!r}: {e}") from None
    raise ConfigurationError(
        f"length distribution {spec!r}: expected constant:V, uniform:LO,HI or lognormal:MU,SIGMA"
    )


def cmd_gen_workload(args) -> int:
    if args.config:
        cfg = _override(resolve(args.config), args)
        rs = cfg.build_workload()
    else:
        seed = args.seed if args.seed is not None else 0
        rs = generate_workload(args.count, _dist(args.input, args.max_input), _dist(args.output, args.max_output), seed)
    path = Path(args.path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_trace(rs, path)
    print(f"wrote {len(rs)} requests to {path} (mean input {rs.mean_input_len():.1f}, "
          f"mean output {rs.mean_output_len():.1f})")
    return 0


def cmd_list_presets(args) -> int:
    print("scenarios:")
    for name, desc in list_scenarios():
        print(f"  {name:<26} {desc}")
    print("models:")
    for name, m in MODEL_PRESETS.items():
        print(f"  {name:<26} {m.num_layers} layers, hidden {m.hidden_size}, "
              f"{m.num_kv_heads}/{m.num_heads} KV/query heads, {m.param_bytes / 1e9:.0f} GB weights")
    print("hardware:")
    for name, h in HARDWARE_PRESETS.items():
        print(f"  {name:<26} {h.flops_per_s / 1e12:.1f} TFLOP/s, {h.mem_bw / 1e9:.0f} GB/s, "
              f"{h.mem_capacity / 1e9:.0f} GB")
    print("policies:")
    print("  " + ", ".join(POLICIES))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pipesim", description=__doc__)
    ap.add_argument("--version", action="version", version=f"pipesim {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, grid: bool):
        p.add_argument("config", help="TOML config path or shipped scenario name")
        p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and output_dir)")
        p.add_argument("--seed", type=int)
        if grid:
            p.add_argument("--policies", nargs="+", metavar="POLICY")
            p.add_argument("--devices", nargs="+", type=int)
            p.add_argument("--workers", type=int, help="concurrent cells (default: config 'workers')")

    p = sub.add_parser("run", help="simulate one policy on one cluster")
    common(p, grid=False)
    p.add_argument("--policy")
    p.add_argument("--devices", type=int, nargs=1)
    p.add_argument("--no-trace", action="store_true", help="skip trace.json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="policy x device-count table")
    common(p, grid=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="run the config's [[sweep]] cells")
    common(p, grid=False)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-workload", help="write a synthetic request trace")
    p.add_argument("path", help="trace file to write")
    p.add_argument("--config", help="take the workload section of this config or scenario")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--input", default="lognormal:5.5,1.0")
    p.add_argument("--output", default="lognormal:5.5,1.0")
    p.add_argument("--max-input", type=int, default=1024)
    p.add_argument("--max-output", type=int, default=1024)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("list-presets", help="list shipped scenarios, models and hardware")
    p.set_defaults(func=cmd_list_presets)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except (ConfigurationError, ValidationError, TraceParseError) as e:
        print(f"pipesim: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"pipesim: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
