"""Node, group, power and trace types shared by every other module."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional

NodeId = int
GroupId = int

# Reserved id for the key distribution center in traces. Mobile nodes start at 1.
KDC_ID: NodeId = 0


class Status(str, Enum):
    UNCLUSTERED = "Unclustered"
    TENTATIVE = "Tentative"
    FINAL = "Final"
    GROUP_MANAGER = "GroupManager"
    BLACKLISTED = "Blacklisted"


class EventKind(str, Enum):
    SEND = "Send"
    RECEIVE = "Receive"
    BEACON = "Beacon"
    REKEY = "Rekey"
    JOIN = "Join"
    LEAVE = "Leave"
    BLACKLIST = "Blacklist"
    ELECT = "Elect"


# Event kinds that carry radio energy; the rest are zero-energy markers.
ENERGY_KINDS = frozenset({EventKind.SEND, EventKind.RECEIVE, EventKind.BEACON})


@dataclass(frozen=True)
class PowerState:
    p_res: float
    p_ext: float

    def __post_init__(self) -> None:
        if not self.p_ext > 0:
            raise ValueError(f"p_ext must be positive, got {self.p_ext}")
        if not 0 <= self.p_res <= self.p_ext:
            raise ValueError(f"p_res must lie in [0, {self.p_ext}], got {self.p_res}")


@dataclass
class KeyRing:
    """Key material a node holds. Nothing is ever removed, so the ring doubles
    as a record of every key the node has seen."""

    secret: Optional[bytes] = None
    group_keys: dict[tuple[GroupId, int], bytes] = field(default_factory=dict)
    session_keys: list[bytes] = field(default_factory=list)

    def all_keys(self) -> list[bytes]:
        keys = list(self.group_keys.values()) + list(self.session_keys)
        if self.secret is not None:
            keys.append(self.secret)
        return keys

    def key_bytes(self) -> int:
        return sum(len(k) for k in self.all_keys())


@dataclass
class NodeRecord:
    id: NodeId
    power: PowerState
    group_prob: float
    status: Status = Status.UNCLUSTERED
    keys: KeyRing = field(default_factory=KeyRing)
    status_log: list[Status] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.status_log:
            self.status_log.append(self.status)

    @property
    def alive(self) -> bool:
        return self.power.p_res > 0

    def set_status(self, status: Status) -> None:
        if self.status is Status.BLACKLISTED:
            raise ValueError(f"node {self.id} is blacklisted")
        self.status = status
        self.status_log.append(status)


@dataclass
class Group:
    id: GroupId
    manager: NodeId
    members: set[NodeId] = field(default_factory=set)
    key_epoch: int = 0
    group_key: Optional[bytes] = None

    def __post_init__(self) -> None:
        self.members.discard(self.manager)

    @property
    def nodes(self) -> set[NodeId]:
        return self.members | {self.manager}


@dataclass(frozen=True)
class TraceEvent:
    time: int
    kind: EventKind
    node: NodeId
    bytes: int = 0
    energy: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "time": self.time,
                "kind": self.kind.value,
                "node": self.node,
                "bytes": self.bytes,
                "energy": self.energy,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> TraceEvent:
        d = json.loads(line)
        return cls(d["time"], EventKind(d["kind"]), d["node"], d["bytes"], d["energy"])


@dataclass(frozen=True)
class PowerModel:
    """Linear per-byte radio cost, in joules."""

    c_send: float = 0.002
    c_recv: float = 0.001

    def cost(self, kind: EventKind, nbytes: int) -> float:
        if kind is EventKind.RECEIVE:
            return self.c_recv * nbytes
        return self.c_send * nbytes


def create_node(
    id: NodeId, p_ext: float, initial_prob: float, p_res: Optional[float] = None
) -> NodeRecord:
    """Build a fresh, unclustered node.

    ``p_res`` defaults to a full battery. Passing it models a node that enters
    the scenario partially drained.
    """
    if not p_ext > 0:
        raise ValueError(f"p_ext must be positive, got {p_ext}")
    if not 0 < initial_prob <= 1:
        raise ValueError(f"initial_prob must be in (0, 1], got {initial_prob}")
    power = PowerState(p_ext if p_res is None else p_res, p_ext)
    return NodeRecord(id=id, power=power, group_prob=initial_prob)


def consume_power(
    node: NodeRecord, amount: float, kind: EventKind, time: int = 0, nbytes: int = 0
) -> TraceEvent:
    """Drain ``amount`` joules from ``node`` and return the matching trace event.

    Saturates at zero. The event records the energy actually drawn so that per
    node the trace energies always sum to the battery drop.
    """
    if amount < 0:
        raise ValueError(f"amount must be non-negative, got {amount}")
    if kind not in ENERGY_KINDS:
        raise ValueError(f"{kind.value} events carry no energy")
    before = node.power.p_res
    drawn = before - max(0.0, before - amount)
    # Re-derive the residual from the drawn energy: both subtractions are then
    # exact, so fsum of a node's event energies equals its battery drop.
    after = before - drawn
    node.power = PowerState(after, node.power.p_ext)
    return TraceEvent(time, kind, node.id, nbytes, drawn)


def write_trace(events: Iterable[TraceEvent], fh) -> None:
    for ev in events:
        fh.write(ev.to_json())
        fh.write("\n")


def read_trace(lines: Iterable[str]) -> Iterator[TraceEvent]:
    for line in lines:
        line = line.strip()
        if line:
            yield TraceEvent.from_json(line)
