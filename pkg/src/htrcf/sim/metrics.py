"""Trace metrics, run reports and scheme comparison."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Optional

from ..model import ENERGY_KINDS, EventKind, TraceEvent

SENDING_KINDS = (EventKind.SEND, EventKind.BEACON)


def total_power(trace: Iterable[TraceEvent]) -> float:
    """Sum of transmit and receive energy. Beacons count as transmissions."""
    return math.fsum(ev.energy for ev in trace if ev.kind in ENERGY_KINDS)


def message_latency(nbytes: int, link_rate: float, hop_latency: float) -> float:
    return nbytes / link_rate + hop_latency


def total_time(trace: Iterable[TraceEvent], link_rate: float = 250.0, hop_latency: float = 1.0) -> float:
    """Sum of per-message send and receive latencies, in ms."""
    return math.fsum(
        message_latency(ev.bytes, link_rate, hop_latency) for ev in trace if ev.kind in ENERGY_KINDS
    )


@dataclass
class MetricsReport:
    scheme: str
    seed: int
    config_fingerprint: str
    t_pow: float = 0.0
    t_time: float = 0.0
    rekey_count: int = 0
    rekey_messages: int = 0
    rekey_bytes: int = 0
    messages_sent: int = 0
    bytes_sent: int = 0
    beacon_count: int = 0
    blacklist_count: int = 0
    join_count: int = 0
    leave_count: int = 0
    groups_initial: int = 0
    groups_final: int = 0
    rounds_used: int = 0
    memory_peak_bytes: int = 0
    t_pow_per_group: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def csv_row(self) -> dict[str, object]:
        row = asdict(self)
        row.pop("t_pow_per_group")
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.csv_row()
        writer = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        writer.writeheader()
        writer.writerow(row)
        return buf.getvalue()


def count_kind(trace: Iterable[TraceEvent], kind: EventKind) -> int:
    return sum(1 for ev in trace if ev.kind is kind)


COMPARED_METRICS = (
    ("Power", "t_pow", "J"),
    ("Time", "t_time", "ms"),
    ("Rekeys", "rekey_count", ""),
    ("Rekey messages", "rekey_messages", ""),
    ("Rekey bytes", "rekey_bytes", "B"),
    ("Messages", "messages_sent", ""),
    ("Bytes", "bytes_sent", "B"),
    ("Memory peak", "memory_peak_bytes", "B"),
)


@dataclass
class ComparisonRow:
    metric: str
    unit: str
    ht_rcf: float
    baseline: float
    delta_pct: Optional[float]


@dataclass
class Comparison:
    seed: int
    rows: list[ComparisonRow]
    reference: list[dict[str, str]]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rows": [asdict(r) for r in self.rows],
            "reference": self.reference,
        }

    def render(self) -> str:
        lines = [f"{'metric':<16}{'HT-RCF':>14}{'baseline':>14}{'delta %':>10}"]
        for r in self.rows:
            delta = "n/a" if r.delta_pct is None else f"{r.delta_pct:+.1f}"
            label = f"{r.metric} ({r.unit})" if r.unit else r.metric
            lines.append(f"{label:<16}{r.ht_rcf:>14.4f}{r.baseline:>14.4f}{delta:>10}")
        if self.reference:
            lines.append("")
            lines.append("paper-reported reference values (proposed vs existing scheme):")
            for ref in self.reference:
                lines.append(
                    f"  {ref['table']:<8}{ref['quantity']:<22}{ref['row']:<9}"
                    f"{ref['proposed']:>6} vs {ref['existing']:>4} {ref['unit']}  [paper-reported]"
                )
        return "\n".join(lines)


def _delta(a: float, b: float) -> Optional[float]:
    if a == b:
        return 0.0
    if b == 0:
        return None
    return (a - b) / b * 100.0


def load_reference_tables() -> list[dict[str, str]]:
    text = resources.files("htrcf.data").joinpath("tables2-6.csv").read_text()
    return list(csv.DictReader(io.StringIO(text)))


def compare(
    ht_rcf: MetricsReport, baseline: MetricsReport, with_reference: bool = True
) -> Comparison:
    """Per-metric values and the HT-RCF delta relative to the baseline."""
    if ht_rcf.config_fingerprint != baseline.config_fingerprint or ht_rcf.seed != baseline.seed:
        raise ValueError("reports come from different scenario configs")
    rows = []
    for name, attr, unit in COMPARED_METRICS:
        a, b = getattr(ht_rcf, attr), getattr(baseline, attr)
        rows.append(ComparisonRow(name, unit, a, b, _delta(a, b)))
    reference = load_reference_tables() if with_reference else []
    return Comparison(ht_rcf.seed, rows, reference)
