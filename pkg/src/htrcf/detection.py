"""Beacon liveness monitoring and the blacklist."""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import NodeId

DEFAULT_BEACON_INTERVAL_MS = 5_000
DEFAULT_K_MISSED = 3


@dataclass
class BeaconMonitor:
    beacon_interval: int = DEFAULT_BEACON_INTERVAL_MS
    k_missed: int = DEFAULT_K_MISSED
    last_seen: dict[NodeId, int] = field(default_factory=dict)
    blacklist: set[NodeId] = field(default_factory=set)
    clock: int = 0

    def __post_init__(self) -> None:
        if self.beacon_interval <= 0:
            raise ValueError("beacon_interval must be positive")
        if self.k_missed < 1:
            raise ValueError("k_missed must be at least 1")

    @property
    def timeout(self) -> int:
        return self.k_missed * self.beacon_interval

    def _advance(self, now: int) -> None:
        if now < self.clock:
            raise ValueError(f"time went backwards: {now} < {self.clock}")
        self.clock = now

    def track(self, node: NodeId, now: int, last_seen: int | None = None) -> None:
        """Start watching ``node``.

        ``last_seen`` carries a beacon time observed elsewhere (e.g. by a
        previous manager) so that handing a node over never resets its clock.
        """
        self._advance(now)
        if node not in self.blacklist:
            self.last_seen[node] = now if last_seen is None else min(last_seen, now)

    def untrack(self, node: NodeId) -> None:
        self.last_seen.pop(node, None)

    def record_beacon(self, node: NodeId, now: int) -> None:
        self._advance(now)
        if node in self.blacklist:
            return
        self.last_seen[node] = now

    def sweep(self, now: int) -> set[NodeId]:
        """Blacklist every tracked node silent for longer than the timeout."""
        self._advance(now)
        newly = {n for n, t in self.last_seen.items() if now - t > self.timeout}
        for n in newly:
            del self.last_seen[n]
        self.blacklist |= newly
        return newly

    def report_dangerous(self, node: NodeId) -> bool:
        """Blacklist immediately. Returns False if it already was."""
        if node in self.blacklist:
            return False
        self.last_seen.pop(node, None)
        self.blacklist.add(node)
        return True


def record_beacon(mon: BeaconMonitor, node: NodeId, now: int) -> BeaconMonitor:
    mon.record_beacon(node, now)
    return mon


def sweep(mon: BeaconMonitor, now: int) -> set[NodeId]:
    return mon.sweep(now)


def report_dangerous(mon: BeaconMonitor, node: NodeId) -> BeaconMonitor:
    mon.report_dangerous(node)
    return mon
