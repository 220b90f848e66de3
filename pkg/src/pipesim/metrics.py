"""Post-processing of finished runs: trace export, KV timeline, comparison tables.

Trace field mapping (Chrome trace event format, ``"X"`` complete events):

* ``pid``  stage index; a link between stage ``i`` and ``i+1`` is drawn under ``pid = i``
* ``tid``  resource name (``stage{i}`` or ``link{i}``)
* ``ts``, ``dur``  microseconds, printed with three decimals (exact nanoseconds)
* ``name`` ``"{kind}:{batch id}"``; ``cat`` the phase; ``args`` holds the raw nanosecond values
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .engine.pipeline import TraceEvent
from .engine.run import RunResult

PathLike = Union[str, Path]


# -- trace -------------------------------------------------------------------

def _us(ns: int) -> str:
    return f"{ns // 1000}.{ns % 1000:03d}"


def trace_document(events: Sequence[TraceEvent], makespan_ns: Optional[int] = None) -> str:
    lines = []
    for e in sorted(events, key=lambda e: (e.start, e.resource, e.batch_id)):
        pid = int(e.resource[4:] if e.resource.startswith("link") else e.resource[5:])
        lines.append(
            '{"name":"%s:%d","cat":"%s","ph":"X","pid":%d,"tid":"%s","ts":%s,"dur":%s,'
            '"args":{"batch":%d,"start_ns":%d,"dur_ns":%d}}'
            % (e.kind, e.batch_id, e.phase, pid, e.resource, _us(e.start), _us(e.duration),
               e.batch_id, e.start, e.duration)
        )
    meta = "" if makespan_ns is None else ',"otherData":{"makespan_ns":%d}' % makespan_ns
    if not lines:
        return '{"traceEvents":[]%s,"displayTimeUnit":"ns"}\n' % meta
    return '{"traceEvents":[\n' + ",\n".join(lines) + '\n]%s,"displayTimeUnit":"ns"}\n' % meta


def export_trace(events: Sequence[TraceEvent], path: PathLike, makespan_ns: Optional[int] = None) -> Path:
    path = Path(path)
    path.write_text(trace_document(events, makespan_ns))
    return path


def load_trace_events(path: PathLike) -> list[TraceEvent]:
    doc = json.loads(Path(path).read_text())
    out = []
    for ev in doc["traceEvents"]:
        kind, _ = ev["name"].split(":")
        a = ev["args"]
        out.append(TraceEvent(ev["tid"], a["batch"], kind, a["start_ns"], a["dur_ns"], ev["cat"]))
    return out


def bubble_ratio_from_events(events: Iterable[TraceEvent], num_stages: int, makespan_ns: int) -> float:
    busy = sum(e.duration for e in events if e.kind == "compute")
    if makespan_ns <= 0:
        return 0.0
    return (num_stages * makespan_ns - busy) / (num_stages * makespan_ns)


# -- KV timeline ---------------------------------------------------------------

def phase_at(spans: Sequence[tuple], t: int) -> str:
    for phase, start, end in spans:
        if start <= t < end:
            return phase
    return spans[-1][0] if spans else ""


def kv_timeline(run: RunResult, sample_interval: Optional[int] = None) -> list[tuple[int, float, str]]:
    """Usage ratio sampled every ``sample_interval`` ns (default: makespan / 1000)."""
    if run.makespan_ns <= 0:
        return [(0, 0.0, phase_at(run.phase_spans, 0))]
    step = sample_interval or max(run.makespan_ns // 1000, 1)
    samples = run.kv_samples
    rows = []
    i = 0
    t = 0
    while t <= run.makespan_ns:
        while i + 1 < len(samples) and samples[i + 1][0] <= t:
            i += 1
        rows.append((t, samples[i][1] / run.kv_capacity_tokens, phase_at(run.phase_spans, t)))
        t += step
    return rows


def timeline_csv(rows: Sequence[tuple[int, float, str]]) -> str:
    buf = io.StringIO()
    buf.write("time_ns,ratio,phase\n")
    for t, ratio, phase in rows:
        buf.write(f"{t},{ratio:.6f},{phase}\n")
    return buf.getvalue()


# -- comparison table ------------------------------------------------------------

TABLE_HEADER = ("policy", "devices", "throughput_tokens_per_s", "bubble_ratio", "makespan_ns", "speedup_vs_1")


@dataclass(frozen=True)
class ComparisonRow:
    policy: str
    devices: int
    throughput: float
    bubble_ratio: float
    makespan_ns: int
    speedup: Optional[float]  # None when the 1-device cell is missing


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple

    def cell(self, policy: str, devices: int) -> ComparisonRow:
        for r in self.rows:
            if r.policy == policy and r.devices == devices:
                return r
        raise KeyError((policy, devices))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(TABLE_HEADER) + "\n")
        for r in self.rows:
            speedup = "" if r.speedup is None else f"{r.speedup:.6f}"
            buf.write(f"{r.policy},{r.devices},{r.throughput:.6f},{r.bubble_ratio:.6f},{r.makespan_ns},{speedup}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonTable":
        reader = csv.reader(io.StringIO(text))
        header = tuple(next(reader))
        if header != TABLE_HEADER:
            raise ValueError(f"unexpected table header {header}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            rows.append(ComparisonRow(rec[0], int(rec[1]), float(rec[2]), float(rec[3]), int(rec[4]),
                                      float(rec[5]) if rec[5] else None))
        return cls(tuple(rows))

    def rounded(self) -> "ComparisonTable":
        """The table as its CSV form stores it."""
        return ComparisonTable.from_csv(self.to_csv())


def compare(results: Iterable[RunResult]) -> ComparisonTable:
    """Tabulate runs sorted by policy then device count; failed cells are simply absent."""
    results = sorted(results, key=lambda r: (r.policy, r.num_devices))
    single = {r.policy: r.throughput for r in results if r.num_devices == 1}
    rows = []
    for r in results:
        base = single.get(r.policy)
        rows.append(ComparisonRow(r.policy, r.num_devices, r.throughput, r.bubble_ratio, r.makespan_ns,
                                  r.throughput / base if base else None))
    return ComparisonTable(tuple(rows))
