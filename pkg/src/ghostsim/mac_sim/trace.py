"""Trace records, the per-run log and throughput extraction."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

TRACE_COLUMNS = ("time_s", "node", "event", "counterpart", "nbytes", "tx_id", "detail")
ENERGY_COLUMNS = ("time_s", "node_id", "state", "current_mA", "delta_J", "remaining_Ah", "duration_s")
SUMMARY_COLUMNS = ("node", "lifetime_s", "drained_Ah", "energy_J", "mean_current_mA", "generated", "delivered",
                   "throughput_pps", "lost", "in_flight", "decrypts", "integrity_fail", "replay_reject", "unauth_accept",
                   "blacklisted_drops", "rx_ok")


class TraceRecord(NamedTuple):
    time_s: float
    node: int
    event: str
    counterpart: int | None = None
    nbytes: int = 0
    tx_id: int | None = None
    detail: str = ""


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class TraceLog:
    records: list[TraceRecord] = field(default_factory=list)
    energy: list[tuple] = field(default_factory=list)
    summary: dict[int, dict] = field(default_factory=dict)
    counts: Counter = field(default_factory=Counter)  # (node, event) -> occurrences, fast-forward included
    end_time: float = 0.0
    seed: int = 0
    scenario: str = ""
    gateway: int = 0
    paths: list[list[int]] = field(default_factory=list)
    positions: dict[int, tuple[float, float]] = field(default_factory=dict)

    def select(self, event: str | None = None, node: int | None = None) -> list[TraceRecord]:
        return [r for r in self.records if (event is None or r.event == event) and (node is None or r.node == node)]

    def count(self, node: int, event: str) -> int:
        return self.counts.get((node, event), 0)

    # -- serialization -----------------------------------------------------
    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def energy_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ENERGY_COLUMNS)
        for row in self.energy:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for node in sorted(self.summary):
            s = self.summary[node]
            w.writerow([_fmt(node)] + [_fmt(s.get(c)) for c in SUMMARY_COLUMNS[1:]])
        return buf.getvalue()

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.trace_csv().encode())
        h.update(self.energy_csv().encode())
        return h.hexdigest()

    def write(self, out_dir, prefix: str = "") -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for name, text in (("trace", self.trace_csv()), ("energy", self.energy_csv()),
                           ("summary", self.summary_csv())):
            p = out / f"{prefix}{name}.csv"
            p.write_text(text, encoding="utf-8")
            files.append(p)
        return files


def load_summary_csv(path) -> dict[int, dict]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[int(row["node"])] = {k: (float(v) if v not in ("", None) else None) for k, v in row.items()
                                     if k != "node"}
    return out


def load_trace_csv(path) -> list[TraceRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(TraceRecord(
                float(row["time_s"]), int(row["node"]), row["event"],
                int(row["counterpart"]) if row["counterpart"] else None,
                int(row["nbytes"] or 0),
                int(row["tx_id"]) if row["tx_id"] else None,
                row["detail"],
            ))
    return out


def throughput_series(trace, window: float, *, start: float = 0.0, end: float | None = None,
                      nodes: Iterable[int] | None = None) -> dict[int, np.ndarray]:
    """Per-source end-to-end delivery rate (packets/s) in consecutive windows."""
    if window <= 0:
        raise ValueError("window must be positive")
    records = trace.records if isinstance(trace, TraceLog) else list(trace)
    if end is None:
        end = trace.end_time if isinstance(trace, TraceLog) else max((r.time_s for r in records), default=start)
    nwin = max(int(math.floor((end - start) / window + 1e-9)), 0)
    if nodes is None:
        nodes = sorted({r.counterpart for r in records if r.event in ("delivered", "generated") and r.counterpart is not None}
                       | {r.node for r in records if r.event == "generated"})
    series = {n: np.zeros(nwin) for n in nodes}
    for r in records:
        if r.event != "delivered" or r.counterpart not in series:
            continue
        k = int((r.time_s - start) // window)
        if 0 <= k < nwin:
            series[r.counterpart][k] += 1
    return {n: s / window for n, s in series.items()}


def mean_throughput(trace, start: float, end: float, nodes=None) -> dict[int, float]:
    """Delivered packets/s per source over ``[start, end)``."""
    series = throughput_series(trace, end - start, start=start, end=end, nodes=nodes)
    return {n: float(s[0]) if s.size else 0.0 for n, s in series.items()}
