"""Scenario configuration: JSON loading and validation."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from ..crypto import DH_PARAMS

CHURN_EVENTS = ("Leave", "Silence", "Join")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ChurnEvent:
    time: int
    event: str
    node: int


@dataclass
class ScenarioConfig:
    seed: int = 1
    node_count: int = 100
    join_pool: int = 0
    area: float = 100.0
    radio_range: Optional[float] = None
    p_ext: dict[str, Any] = field(default_factory=lambda: {"kind": "fixed", "value": 100.0})
    initial_charge: tuple[float, float] = (0.5, 1.0)
    target_groups: Optional[int] = 5
    initial_prob: float = 0.05
    p_min: float = 0.001
    max_rounds: Optional[int] = None
    rsa_bits: int = 512
    dh_params: str = "default"
    beacon_interval_ms: int = 5_000
    k_missed: int = 3
    beacon_bytes: int = 32
    c_send: float = 0.002
    c_recv: float = 0.001
    link_rate: float = 250.0
    hop_latency_ms: float = 1.0
    rekey_interval_ms: int = 0
    malicious: list[int] = field(default_factory=list)
    churn: list[ChurnEvent] = field(default_factory=list)
    duration_ms: int = 60_000
    baseline: bool = False

    @property
    def group_prob(self) -> float:
        if self.target_groups:
            return min(1.0, self.target_groups / self.node_count)
        return self.initial_prob

    @property
    def all_nodes(self) -> range:
        return range(1, self.node_count + self.join_pool + 1)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["initial_charge"] = list(self.initial_charge)
        return d

    def fingerprint(self) -> str:
        """Hash of everything except the scheme flag."""
        d = self.to_dict()
        d.pop("baseline")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def validate(self, churn_lines: Optional[list[int]] = None) -> None:
        def line(i: int) -> Optional[int]:
            return churn_lines[i] if churn_lines and i < len(churn_lines) else None

        if self.node_count < 1:
            raise ConfigError("node_count must be at least 1")
        if self.join_pool < 0:
            raise ConfigError("join_pool must be non-negative")
        if self.duration_ms < 0:
            raise ConfigError("duration_ms must be non-negative")
        if not 0 < self.p_min <= 1:
            raise ConfigError("p_min must be in (0, 1]")
        if not 0 < self.group_prob <= 1:
            raise ConfigError("initial group probability must be in (0, 1]")
        lo, hi = self.initial_charge
        if not 0 < lo <= hi <= 1:
            raise ConfigError("initial_charge must satisfy 0 < low <= high <= 1")
        kind = self.p_ext.get("kind")
        if kind == "fixed":
            if not self.p_ext.get("value", 0) > 0:
                raise ConfigError("p_ext value must be positive")
        elif kind == "uniform":
            if not 0 < self.p_ext.get("low", 0) <= self.p_ext.get("high", 0):
                raise ConfigError("p_ext uniform bounds must satisfy 0 < low <= high")
        else:
            raise ConfigError(f"unknown p_ext kind {kind!r}")
        if self.rsa_bits < 16:
            raise ConfigError("rsa_bits must be at least 16")
        if self.dh_params not in DH_PARAMS:
            raise ConfigError(f"unknown dh_params {self.dh_params!r}")
        if self.beacon_interval_ms <= 0 or self.k_missed < 1:
            raise ConfigError("beacon_interval_ms must be positive and k_missed >= 1")
        if self.beacon_bytes < 0 or self.link_rate <= 0 or self.hop_latency_ms < 0:
            raise ConfigError("invalid link or beacon parameters")
        if self.c_send < 0 or self.c_recv < 0:
            raise ConfigError("power costs must be non-negative")
        if self.rekey_interval_ms < 0:
            raise ConfigError("rekey_interval_ms must be non-negative")
        known = set(self.all_nodes)
        for m in self.malicious:
            if m not in known:
                raise ConfigError(f"malicious node {m} is not part of the scenario")

        present = set(range(1, self.node_count + 1))
        order = sorted(range(len(self.churn)), key=lambda i: _churn_key(self.churn[i]))
        for i in order:
            ev = self.churn[i]
            if ev.event not in CHURN_EVENTS:
                raise ConfigError(f"unknown churn event {ev.event!r}", line(i))
            if not 0 <= ev.time <= self.duration_ms:
                raise ConfigError(f"churn time {ev.time} outside [0, {self.duration_ms}]", line(i))
            if ev.node not in known:
                raise ConfigError(f"churn references unknown node {ev.node}", line(i))
            if ev.event == "Join":
                if ev.node in present:
                    raise ConfigError(f"node {ev.node} joins while already present", line(i))
                present.add(ev.node)
            else:
                if ev.node not in present:
                    raise ConfigError(f"{ev.event} of node {ev.node} which is not present", line(i))
                if ev.event == "Leave":
                    present.discard(ev.node)


_CHURN_PRIORITY = {"Leave": 0, "Silence": 1, "Join": 2}


def _churn_key(ev: ChurnEvent) -> tuple[int, int, int]:
    return (ev.time, _CHURN_PRIORITY.get(ev.event, 9), ev.node)


def _churn_line_numbers(text: str) -> list[int]:
    """1-based source line of each element of the top-level ``churn`` array."""
    m = re.search(r'"churn"\s*:\s*\[', text)
    if not m:
        return []
    decoder = json.JSONDecoder()
    pos = m.end()
    lines = []
    while True:
        while pos < len(text) and text[pos] in " \t\r\n,":
            pos += 1
        if pos >= len(text) or text[pos] == "]":
            return lines
        lines.append(text.count("\n", 0, pos) + 1)
        try:
            _, pos = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            return lines


def config_from_dict(data: dict[str, Any], churn_lines: Optional[list[int]] = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    fields = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    churn = []
    for i, raw in enumerate(kwargs.pop("churn", [])):
        ln = churn_lines[i] if churn_lines and i < len(churn_lines) else None
        try:
            churn.append(ChurnEvent(int(raw["time"]), str(raw["event"]), int(raw["node"])))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"malformed churn entry {raw!r}", ln) from None
    if "initial_charge" in kwargs:
        kwargs["initial_charge"] = tuple(kwargs["initial_charge"])
    try:
        cfg = ScenarioConfig(churn=churn, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate(churn_lines)
    return cfg


def load_config(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    return config_from_dict(data, _churn_line_numbers(text))
