"""Centralised vs decentralised experiments over generated pattern workloads."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import os
import random
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .costmodel import DEFAULT_ENVELOPE_BYTES, CostModel
from .dsl import compile_source
from .graph import build_graph
from .partition import Mode, estimate_cost, partition
from .runtime import centralised_execute, deploy, orchestrate
from .transport import SimTransport, SocketTransport, Topology
from .workloads import PATTERNS, generate, min_n, pattern_topology

log = logging.getLogger(__name__)

CSV_COLUMNS = ["pattern", "n", "payload_bytes", "mode", "total_bytes", "makespan_s", "speedup", "data_reduction"]
DEFAULT_DELAY = 0.5

PLOT_SCRIPT = """\
# gnuplot recipe: gnuplot plot.gp  (writes one PNG per pattern and metric)
set terminal pngcairo size 800,500
set key left top
set xlabel "payload (bytes)"
do for [p in "{patterns}"] {{
    set output p."_bytes.png"
    set ylabel "total bytes communicated"
    plot p."_bytes.dat" using 1:3 with linespoints title "centralised", \\
         p."_bytes.dat" using 1:4 with linespoints title "decentralised"
    set output p."_makespan.png"
    set ylabel "makespan (s)"
    plot p."_makespan.dat" using 1:3 with linespoints title "centralised", \\
         p."_makespan.dat" using 1:4 with linespoints title "decentralised"
}}
"""


class BenchFailure(Exception):
    pass


@dataclass
class ExperimentConfig:
    patterns: list[str]
    ns: list[int]
    payloads: list[int]
    topology: str | None = None
    seed: int = 0
    mode: str = "both"  # centralised | decentralised | both
    repetitions: int = 1
    overhead: int = DEFAULT_ENVELOPE_BYTES
    delay: float = DEFAULT_DELAY
    transport: str = "sim"  # sim | socket

    def __post_init__(self):
        for p in self.patterns:
            if p not in PATTERNS and not p.startswith("file:"):
                raise ValueError(f"unknown pattern {p!r}")
        if not self.ns or any(n < 1 for n in self.ns):
            raise ValueError("n must be >= 1")
        if not self.payloads or any(p <= 0 for p in self.payloads):
            raise ValueError("payloads must be > 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.mode not in ("centralised", "decentralised", "both"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.transport not in ("sim", "socket"):
            raise ValueError(f"unknown transport {self.transport!r}")

    @property
    def modes(self) -> list[Mode]:
        if self.mode == "both":
            return [Mode.CENTRALISED, Mode.DECENTRALISED]
        return [Mode(self.mode)]


@dataclass
class Row:
    pattern: str
    n: int
    payload_bytes: int
    mode: str
    total_bytes: int
    makespan_s: float
    speedup: float | None = None
    data_reduction: float | None = None
    # reconciliation data, not written to CSV
    trace_payload_bytes: int = 0
    estimated_payload_bytes: int = 0
    estimated_total_bytes: int = 0
    estimated_makespan_s: float = 0.0
    outputs_digest: str = ""

    def csv_fields(self) -> list:
        fmt = lambda v: "" if v is None else repr(v)
        return [self.pattern, self.n, self.payload_bytes, self.mode, self.total_bytes,
                repr(self.makespan_s), fmt(self.speedup), fmt(self.data_reduction)]


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list[Row] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def cells(self) -> dict[tuple[str, int, int, int], dict[str, Row]]:
        """Rows grouped by (pattern, n, payload, repetition) then keyed by mode."""
        out: dict = {}
        counters: dict = {}
        for r in self.rows:
            key = (r.pattern, r.n, r.payload_bytes, r.mode)
            rep = counters.get(key, 0)
            counters[key] = rep + 1
            out.setdefault((r.pattern, r.n, r.payload_bytes, rep), {})[r.mode] = r
        return out


def _workload(pattern: str, n: int, topology: Topology | None) -> tuple[str, Topology]:
    if pattern.startswith("file:"):
        source = Path(pattern[5:]).read_text()
        if topology is None:
            raise ValueError("file workloads need a topology")
        return source, topology
    return generate(pattern, n), topology or pattern_topology(pattern, n)


def _digest(outputs: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    for k in sorted(outputs):
        h.update(k.encode() + b"\0" + hashlib.sha256(outputs[k]).digest())
    return h.hexdigest()


def run_cell(pattern: str, n: int, payload: int, config: ExperimentConfig,
             topology: Topology | None = None) -> list[Row]:
    source, topo = _workload(pattern, n, topology)
    checked = compile_source(source)
    cost = CostModel.uniform(payload, overhead=config.overhead, delay=config.delay)
    g = build_graph(checked, cost)
    plan = partition(g, topo)
    data = random.Random(config.seed).randbytes(cost.input_bytes)
    rows = []
    for mode in config.modes:
        net = SimTransport(topo, cost.control_overhead_bytes) if config.transport == "sim" \
            else SocketTransport(topo, cost.control_overhead_bytes)
        try:
            deployment = deploy(checked, net, cost)
            if mode is Mode.DECENTRALISED:
                outputs, trace = orchestrate(plan, data, net)
            else:
                outputs, trace = centralised_execute(g, data, net)
            deployment.shutdown()
        finally:
            net.close()
        est = estimate_cost(plan, cost, mode)
        label = mode.value if config.transport == "sim" else f"socket-{mode.value}"
        rows.append(Row(
            pattern=pattern if not pattern.startswith("file:") else Path(pattern[5:]).stem,
            n=n, payload_bytes=payload, mode=label,
            total_bytes=trace.total_bytes, makespan_s=trace.makespan,
            trace_payload_bytes=trace.payload_bytes,
            estimated_payload_bytes=est.payload_bytes,
            estimated_total_bytes=est.total_bytes,
            estimated_makespan_s=est.makespan,
            outputs_digest=_digest(outputs),
        ))
    if len(rows) == 2:
        cen, dec = rows
        if cen.outputs_digest != dec.outputs_digest:
            raise BenchFailure(f"{pattern} n={n} payload={payload}: outputs differ between modes")
        speedup = cen.makespan_s / dec.makespan_s if dec.makespan_s > 0 else None
        reduction = 1 - dec.total_bytes / cen.total_bytes if cen.total_bytes else None
        for r in rows:
            r.speedup, r.data_reduction = speedup, reduction
    return rows


def run_bench(config: ExperimentConfig) -> ExperimentReport:
    topology = Topology.load(config.topology) if config.topology else None
    report = ExperimentReport(config)
    for pattern in config.patterns:
        is_file = pattern.startswith("file:")
        for n in config.ns[:1] if is_file else config.ns:
            if not is_file and n < min_n(pattern):
                raise ValueError(f"{pattern} needs n >= {min_n(pattern)}")
            for payload in config.payloads:
                for _ in range(config.repetitions):
                    log.info("running %s n=%d payload=%d", pattern, n, payload)
                    report.rows.extend(run_cell(pattern, n, payload, config, topology))
    return report


def plot_data(report: ExperimentReport) -> dict[str, str]:
    """gnuplot data files: ``<pattern>_bytes.dat`` and ``<pattern>_makespan.dat``.

    Columns are ``payload n centralised decentralised``; first repetition only.
    """
    files: dict[str, str] = {}
    by_pattern: dict[str, list] = {}
    for (pattern, n, payload, rep), modes in sorted(report.cells().items()):
        if rep == 0:
            by_pattern.setdefault(pattern, []).append((payload, n, modes))
    for pattern, entries in by_pattern.items():
        for metric, attr in (("bytes", "total_bytes"), ("makespan", "makespan_s")):
            lines = ["# payload_bytes n centralised decentralised"]
            for payload, n, modes in sorted(entries, key=lambda e: (e[1], e[0])):
                vals = [getattr(modes[m], attr) if m in modes else "NaN"
                        for m in _mode_labels(report.config)]
                lines.append(" ".join(str(v) for v in (payload, n, *vals)))
            files[f"{pattern}_{metric}.dat"] = "\n".join(lines) + "\n"
    files["plot.gp"] = PLOT_SCRIPT.format(patterns=" ".join(sorted(by_pattern)))
    return files


def _mode_labels(config: ExperimentConfig) -> list[str]:
    prefix = "" if config.transport == "sim" else "socket-"
    return [prefix + Mode.CENTRALISED.value, prefix + Mode.DECENTRALISED.value]


def write_report(report: ExperimentReport, out_dir: str | os.PathLike) -> Path:
    """Write ``results.csv`` and the plot data into ``out_dir`` atomically."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".bench-", dir=out.parent))
    try:
        (staging / "results.csv").write_text(report.to_csv())
        for name, text in plot_data(report).items():
            (staging / name).write_text(text)
        if out.exists():
            for item in staging.iterdir():
                os.replace(item, out / item.name)
            staging.rmdir()
        else:
            os.replace(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    return out / "results.csv"
