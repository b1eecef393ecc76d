"""Deterministic discrete-event runner for HT-RCF and the flat baseline.

All randomness comes from named streams derived from the config seed, so a
config fully determines the trace. The world stream (positions, batteries,
node secrets) is shared by both schemes, which therefore see the same nodes.
"""

from __future__ import annotations

import heapq
import io
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .. import keymgmt
from ..crypto import DH_PARAMS, KEY_BYTES, Behaviour, Party, verify_handshake
from ..detection import BeaconMonitor
from ..election import ElectionParams, euclidean_costs, run_election
from ..keymgmt import Kdc, RekeyTranscript, Trigger, TriggerKind
from ..model import (
    KDC_ID,
    EventKind,
    Group,
    GroupId,
    NodeId,
    NodeRecord,
    PowerModel,
    Status,
    TraceEvent,
    consume_power,
    create_node,
    write_trace,
)
from .config import ScenarioConfig
from .metrics import MetricsReport, count_kind, total_power, total_time

log = logging.getLogger(__name__)

HEADER_BYTES = 16

# Same-time ordering; Leave before Join is required for replayable churn.
_PRIORITY = {"Leave": 0, "Silence": 1, "Join": 2, "Beacon": 3, "Sweep": 4, "Periodic": 5}


@dataclass
class RunResult:
    config: ScenarioConfig
    trace: list[TraceEvent]
    report: MetricsReport
    transcripts: list[RekeyTranscript]
    nodes: dict[NodeId, NodeRecord]
    groups: dict[GroupId, Group]
    kdc: Kdc
    blacklisted_at: dict[NodeId, int]
    silenced_at: dict[NodeId, int]
    # node -> {(group, epoch)} it was entitled to hold
    entitled: dict[NodeId, set[tuple[GroupId, int]]] = field(default_factory=dict)

    def __iter__(self) -> Iterator:
        yield self.trace
        yield self.report

    def trace_jsonl(self) -> str:
        buf = io.StringIO()
        write_trace(self.trace, buf)
        return buf.getvalue()

    def transcripts_jsonl(self, full: bool = False) -> str:
        return "".join(t.to_json(full) + "\n" for t in self.transcripts)


class Simulator:
    def __init__(self, config: ScenarioConfig, baseline: Optional[bool] = None):
        config.validate()
        self.cfg = config
        self.baseline = config.baseline if baseline is None else baseline
        seed = config.seed
        self.world = random.Random(f"{seed}:world")
        self.keys = random.Random(f"{seed}:keys")
        self.elect_rng = random.Random(f"{seed}:election")
        self.proto = random.Random(f"{seed}:protocol")
        self.power = PowerModel(config.c_send, config.c_recv)
        self.dh = DH_PARAMS[config.dh_params]

        self.trace: list[TraceEvent] = []
        self.transcripts: list[RekeyTranscript] = []
        self.nodes: dict[NodeId, NodeRecord] = {}
        self.positions: dict[NodeId, tuple[float, float]] = {}
        self.groups: dict[GroupId, Group] = {}
        self.group_of: dict[NodeId, GroupId] = {}
        self.monitors: dict[GroupId, BeaconMonitor] = {}
        self.present: set[NodeId] = set()
        self.silenced: dict[NodeId, int] = {}
        self.blacklisted_at: dict[NodeId, int] = {}
        self.last_beacon: dict[NodeId, int] = {}
        self.entitled: dict[NodeId, set[tuple[GroupId, int]]] = {}
        self.kdc = Kdc(bit_length=config.rsa_bits)
        self.next_gid = 1
        self.rekey_messages = 0
        self.rekey_bytes = 0
        self.memory_peak = 0
        self.rounds_used = 0
        self.groups_initial = 0
        self._energy_by_group: dict[str, list[float]] = {}
        self._queue: list[tuple] = []
        self._seq = 0

    # -- bookkeeping ---------------------------------------------------------

    def _emit(self, ev: TraceEvent) -> None:
        self.trace.append(ev)
        if ev.energy:
            gid = self.group_of.get(ev.node)
            key = "kdc" if ev.node == KDC_ID else ("none" if gid is None else str(gid))
            self._energy_by_group.setdefault(key, []).append(ev.energy)

    def _marker(self, t: int, kind: EventKind, node: NodeId) -> None:
        self._emit(TraceEvent(t, kind, node))

    def _radio(self, t: int, node: NodeId, kind: EventKind, nbytes: int) -> None:
        cost = self.power.cost(kind, nbytes)
        if node == KDC_ID:
            self._emit(TraceEvent(t, kind, node, nbytes, cost))
        else:
            self._emit(consume_power(self.nodes[node], cost, kind, t, nbytes))

    def _message(self, t: int, sender: NodeId, nbytes: int, receivers) -> None:
        self._radio(t, sender, EventKind.SEND, nbytes)
        for r in sorted(receivers):
            self._radio(t, r, EventKind.RECEIVE, nbytes)

    def _ring(self, node: NodeId):
        return self.nodes[node].keys

    def _apply_transcript(self, t: int, group: Group, tr: RekeyTranscript) -> None:
        self._marker(t, EventKind.REKEY, group.manager)
        for msg in tr.messages:
            nbytes = HEADER_BYTES + msg.size
            self._message(t, msg.sender, nbytes, msg.audience)
            self.rekey_messages += 1
            self.rekey_bytes += nbytes
        keymgmt.deliver(tr, {n: self._ring(n) for n in group.nodes if n in self.nodes})
        if group.group_key is not None:
            if group.manager in self.nodes:
                self._ring(group.manager).group_keys[(group.id, group.key_epoch)] = group.group_key
            for n in group.nodes:
                if n in self.nodes:
                    self.entitled.setdefault(n, set()).add((group.id, group.key_epoch))
        self.transcripts.append(tr)

    def _held_bytes(self, node: NodeId) -> int:
        ring = self._ring(node)
        held = KEY_BYTES if ring.secret is not None else 0
        gid = self.group_of.get(node)
        if gid is not None and self.groups[gid].group_key is not None:
            held += KEY_BYTES
            g = self.groups[gid]
            if g.manager == node:
                rsa = self.kdc.rsa.get(node)
                if rsa is not None:
                    width = (rsa.n.bit_length() + 7) // 8
                    held += 2 * width
                held += KEY_BYTES * len(g.members)
        if ring.session_keys:
            held += KEY_BYTES
        return held

    def _sample_memory(self) -> None:
        for n in self.present:
            self.memory_peak = max(self.memory_peak, self._held_bytes(n))

    def _schedule(self, t: int, kind: str, node: NodeId = 0) -> None:
        heapq.heappush(self._queue, (t, _PRIORITY[kind], node, self._seq, kind))
        self._seq += 1

    # -- setup ---------------------------------------------------------------

    def _build_world(self) -> None:
        cfg = self.cfg
        lo, hi = cfg.initial_charge
        for nid in cfg.all_nodes:
            self.positions[nid] = (self.world.uniform(0, cfg.area), self.world.uniform(0, cfg.area))
            if cfg.p_ext["kind"] == "fixed":
                p_ext = float(cfg.p_ext["value"])
            else:
                p_ext = self.world.uniform(cfg.p_ext["low"], cfg.p_ext["high"])
            frac = self.world.uniform(lo, hi)
            node = create_node(nid, p_ext, cfg.group_prob, p_res=p_ext * frac)
            secret = self.keys.randbytes(KEY_BYTES)
            self.kdc.register(nid, secret)
            node.keys.secret = secret
            self.nodes[nid] = node
        radio = math.inf if cfg.radio_range is None else cfg.radio_range
        self.params = ElectionParams(
            p_min=cfg.p_min,
            max_rounds=cfg.max_rounds,
            link_costs=euclidean_costs(self.positions, radio),
        )
        self.present = set(range(1, cfg.node_count + 1))

    def _new_monitor(self, group: Group, t: int) -> None:
        mon = BeaconMonitor(self.cfg.beacon_interval_ms, self.cfg.k_missed)
        mon.blacklist |= set(self.blacklisted_at)
        for n in sorted(group.nodes):
            if n != KDC_ID:
                mon.track(n, t, self.last_beacon.get(n))
        self.monitors[group.id] = mon

    def _adopt_group(self, group: Group, t: int) -> None:
        self.groups[group.id] = group
        self.next_gid = max(self.next_gid, group.id + 1)
        if group.manager != KDC_ID:
            self.nodes[group.manager].set_status(Status.GROUP_MANAGER)
            self._marker(t, EventKind.ELECT, group.manager)
            self.group_of[group.manager] = group.id
        for m in group.members:
            self.nodes[m].set_status(Status.FINAL)
            self.group_of[m] = group.id
        self._new_monitor(group, t)

    def _issue(self, group: Group, t: int) -> None:
        """KDC seals a key to the manager, which hands it to its members."""
        env = keymgmt.kdc_issue_group_key(self.kdc, group.id, group.manager, self.proto)
        nbytes = HEADER_BYTES + len(env.key_for_gm)
        self._message(t, KDC_ID, nbytes, [group.manager])
        self.rekey_messages += 1
        self.rekey_bytes += nbytes
        issued = keymgmt.open_envelope(env, self.kdc.rsa_for(group.manager))
        tr = keymgmt.distribute_issued(group, self.kdc, issued, self.proto)
        self._apply_transcript(t, group, tr)

    def _setup(self) -> None:
        self._build_world()
        initial = [self.nodes[n] for n in sorted(self.present)]
        if self.baseline:
            group = Group(self.next_gid, KDC_ID, set(self.present))
            self._adopt_group(group, 0)
            issued = keymgmt.kdc_mint_group_key(self.kdc, group.id, self.proto)
            self._apply_transcript(0, group, keymgmt.distribute_issued(group, self.kdc, issued, self.proto))
        else:
            assignment = run_election(initial, self.params, self.elect_rng, self.next_gid)
            self.rounds_used = assignment.rounds_used
            for g in assignment.groups:
                self._adopt_group(g, 0)
            for g in assignment.groups:
                self._issue(g, 0)
        self.groups_initial = len(self.groups)
        for n in self.present:
            self.last_beacon[n] = 0
        self._sample_memory()

        cfg = self.cfg
        for ev in cfg.churn:
            self._schedule(ev.time, ev.event, ev.node)
        interval = cfg.beacon_interval_ms
        for t in range(interval, cfg.duration_ms + 1, interval):
            self._schedule(t, "Beacon")
            self._schedule(t, "Sweep")
        if cfg.rekey_interval_ms > 0:
            for t in range(cfg.rekey_interval_ms, cfg.duration_ms + 1, cfg.rekey_interval_ms):
                self._schedule(t, "Periodic")

    # -- membership ----------------------------------------------------------

    def _reelect(self, group: Group, departing: NodeId, t: int) -> None:
        self.groups.pop(group.id)
        self.monitors.pop(group.id, None)
        for n in group.nodes:
            self.group_of.pop(n, None)
        result = keymgmt.dissolve_and_reelect(
            group, departing, self.kdc, self.nodes, self.params, self.elect_rng, self.next_gid
        )
        for g, env, tr in zip(result.groups, result.envelopes, result.transcripts):
            self._adopt_group(g, t)
            nbytes = HEADER_BYTES + len(env.key_for_gm)
            self._message(t, KDC_ID, nbytes, [g.manager])
            self.rekey_messages += 1
            self.rekey_bytes += nbytes
            self._apply_transcript(t, g, tr)

    def _remove_from_group(self, node: NodeId, t: int, trigger: TriggerKind) -> None:
        gid = self.group_of.get(node)
        if gid is None:
            return
        group = self.groups[gid]
        mon = self.monitors.get(gid)
        if mon is not None:
            mon.untrack(node)
        if node == group.manager:
            self._reelect(group, node, t)
            return
        self.group_of.pop(node)
        if self.baseline:
            group.members.discard(node)
            tr = keymgmt.unicast_rekey(group, Trigger(trigger, node), self.kdc, self.proto)
        else:
            tr = keymgmt.handle_leave(group, node, self.kdc, self.proto, trigger)
        self._apply_transcript(t, group, tr)

    def _blacklist(self, node: NodeId, t: int) -> None:
        if node in self.blacklisted_at:
            return
        self.blacklisted_at[node] = t
        self._marker(t, EventKind.BLACKLIST, node)
        for mon in self.monitors.values():
            mon.report_dangerous(node)
        self._remove_from_group(node, t, TriggerKind.BLACKLIST)
        self.nodes[node].set_status(Status.BLACKLISTED)
        self.present.discard(node)

    def _leave(self, node: NodeId, t: int) -> None:
        if node in self.blacklisted_at or node not in self.present:
            log.debug("t=%d: leave of %d skipped", t, node)
            return
        self._marker(t, EventKind.LEAVE, node)
        self._remove_from_group(node, t, TriggerKind.LEAVE)
        self.present.discard(node)
        self.silenced.pop(node, None)
        self.nodes[node].set_status(Status.UNCLUSTERED)

    def _silence(self, node: NodeId, t: int) -> None:
        if node in self.present and node not in self.blacklisted_at:
            self.silenced.setdefault(node, t)

    def _cheapest_manager(self, node: NodeId) -> Optional[Group]:
        best, best_cost = None, math.inf
        for gid in sorted(self.groups):
            g = self.groups[gid]
            c = self.params.link_costs.get((min(node, g.manager), max(node, g.manager)), math.inf)
            if c < best_cost or (c == best_cost and best is not None and g.manager < best.manager):
                best, best_cost = g, c
        return best

    def _join(self, node: NodeId, t: int) -> None:
        rec = self.nodes[node]
        if node in self.blacklisted_at or not rec.alive:
            log.debug("t=%d: join of %d skipped", t, node)
            return
        self._marker(t, EventKind.JOIN, node)
        self.present.add(node)
        self.last_beacon[node] = t
        if self.baseline:
            group = self.groups[min(self.groups)]
        else:
            group = self._cheapest_manager(node)
            if group is None:
                g = Group(self.next_gid, node)
                self._adopt_group(g, t)
                self._issue(g, t)
                return
        behaviour = Behaviour.RANDOM_KEY if node in self.cfg.malicious else Behaviour.HONEST
        hs = verify_handshake(Party(group.manager), Party(node, behaviour), self.dh, self.proto)
        for sender, size in hs.messages:
            receiver = node if sender == group.manager else group.manager
            self._message(t, sender, HEADER_BYTES + size, [receiver])
        if not hs.verified:
            log.info("t=%d: node %d failed verification (%s)", t, node, hs.reason)
            self.monitors[group.id].report_dangerous(node)
            self._blacklist(node, t)
            return
        rec.keys.session_keys.append(hs.session_key)
        if group.manager != KDC_ID:
            self._ring(group.manager).session_keys.append(hs.session_key)
        if self.baseline:
            group.members.add(node)
            tr = keymgmt.unicast_rekey(group, Trigger(TriggerKind.JOIN, node), self.kdc, self.proto, hs.session_key)
        else:
            tr = keymgmt.handle_join(group, node, hs.session_key, self.kdc, self.proto, self.blacklisted_at)
        self.group_of[node] = group.id
        rec.set_status(Status.FINAL)
        self.monitors[group.id].track(node, t)
        self._apply_transcript(t, group, tr)

    # -- periodic activity ---------------------------------------------------

    def _beacons(self, t: int) -> None:
        for n in sorted(self.present):
            gid = self.group_of.get(n)
            if gid is None or n in self.silenced or n in self.blacklisted_at:
                continue
            if not self.nodes[n].alive:
                continue
            self._radio(t, n, EventKind.BEACON, self.cfg.beacon_bytes)
            manager = self.groups[gid].manager
            if manager != n:
                self._radio(t, manager, EventKind.RECEIVE, self.cfg.beacon_bytes)
            self.monitors[gid].record_beacon(n, t)
            self.last_beacon[n] = t

    def _sweep(self, t: int) -> None:
        for gid in sorted(self.monitors):
            mon = self.monitors.get(gid)
            if mon is None:
                continue
            for n in sorted(mon.sweep(t)):
                self._blacklist(n, t)

    def _periodic(self, t: int) -> None:
        for gid in sorted(self.groups):
            g = self.groups.get(gid)
            if g is None or g.group_key is None:
                continue
            self._apply_transcript(t, g, keymgmt.periodic_rekey(g, self.kdc, self.proto))

    # -- driver --------------------------------------------------------------

    def run(self) -> RunResult:
        self._setup()
        handlers = {
            "Leave": self._leave,
            "Silence": self._silence,
            "Join": self._join,
        }
        while self._queue:
            t, _, node, _, kind = heapq.heappop(self._queue)
            if kind in handlers:
                handlers[kind](node, t)
            elif kind == "Beacon":
                self._beacons(t)
            elif kind == "Sweep":
                self._sweep(t)
            else:
                self._periodic(t)
            self._sample_memory()
        return RunResult(
            config=self.cfg,
            trace=self.trace,
            report=self._report(),
            transcripts=self.transcripts,
            nodes=self.nodes,
            groups=self.groups,
            kdc=self.kdc,
            blacklisted_at=self.blacklisted_at,
            silenced_at=self.silenced,
            entitled=self.entitled,
        )

    def _report(self) -> MetricsReport:
        cfg, trace = self.cfg, self.trace
        sends = [ev for ev in trace if ev.kind in (EventKind.SEND, EventKind.BEACON)]
        return MetricsReport(
            scheme="baseline" if self.baseline else "ht-rcf",
            seed=cfg.seed,
            config_fingerprint=cfg.fingerprint(),
            t_pow=total_power(trace),
            t_time=total_time(trace, cfg.link_rate, cfg.hop_latency_ms),
            rekey_count=count_kind(trace, EventKind.REKEY),
            rekey_messages=self.rekey_messages,
            rekey_bytes=self.rekey_bytes,
            messages_sent=len(sends),
            bytes_sent=sum(ev.bytes for ev in sends),
            beacon_count=count_kind(trace, EventKind.BEACON),
            blacklist_count=count_kind(trace, EventKind.BLACKLIST),
            join_count=count_kind(trace, EventKind.JOIN),
            leave_count=count_kind(trace, EventKind.LEAVE),
            groups_initial=self.groups_initial,
            groups_final=len(self.groups),
            rounds_used=self.rounds_used,
            memory_peak_bytes=self.memory_peak,
            t_pow_per_group={
                k: math.fsum(v) for k, v in sorted(self._energy_by_group.items())
            },
        )


def run_scenario(config: ScenarioConfig) -> RunResult:
    return Simulator(config).run()


def run_baseline(config: ScenarioConfig) -> RunResult:
    return Simulator(config, baseline=True).run()
