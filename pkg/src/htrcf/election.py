"""Iterative power-aware group-manager election.

Each node starts from a self-election probability weighted by its residual
battery, doubles it every round, and either announces itself as a manager
(tentatively, then finally once the probability reaches 1) or joins the
cheapest final manager it can hear.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .model import Group, GroupId, NodeId, NodeRecord, PowerState, Status


@dataclass
class ElectionParams:
    p_min: float = 0.001
    max_rounds: Optional[int] = None
    link_costs: dict[tuple[NodeId, NodeId], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0 < self.p_min <= 1:
            raise ValueError(f"p_min must be in (0, 1], got {self.p_min}")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        for (a, b), c in self.link_costs.items():
            if c < 0:
                raise ValueError(f"negative link cost for ({a}, {b})")
            if a == b and c != 0:
                raise ValueError(f"diagonal cost for {a} must be zero")
            back = self.link_costs.get((b, a))
            if back is not None and back != c:
                raise ValueError(f"asymmetric link cost for ({a}, {b})")

    @property
    def round_limit(self) -> int:
        bound = round_bound(self.p_min)
        return bound if self.max_rounds is None else min(bound, self.max_rounds)


@dataclass
class ClusterAssignment:
    groups: list[Group]
    unassigned: set[NodeId]
    rounds_used: int
    status_log: dict[NodeId, list[Status]]

    def group_of(self, node: NodeId) -> Optional[Group]:
        for g in self.groups:
            if node in g.nodes:
                return g
        return None

    def to_json(self) -> str:
        return json.dumps(
            {
                "groups": [
                    {"id": g.id, "manager": g.manager, "members": sorted(g.members)}
                    for g in self.groups
                ],
                "rounds_used": self.rounds_used,
            }
        )


def round_bound(p_min: float) -> int:
    """Rounds needed for a probability starting at ``p_min`` to double up to 1,
    plus the round that acts on it."""
    doublings = 0
    p = p_min
    while p < 1:
        p *= 2
        doublings += 1
    return doublings + 1


def gm_probability(g_p: float, power: PowerState, p_min: float) -> float:
    return min(1.0, max(p_min, g_p * power.p_res / power.p_ext))


def node_status(g_p: float) -> Status:
    return Status.FINAL if g_p >= 1 else Status.TENTATIVE


def intra_cost(a: NodeId, b: NodeId, params: ElectionParams) -> float:
    """Symmetric lookup in the link-cost table. Missing pairs raise ``KeyError``."""
    if a == b:
        return 0.0
    if (a, b) in params.link_costs:
        return params.link_costs[(a, b)]
    if (b, a) in params.link_costs:
        return params.link_costs[(b, a)]
    raise KeyError(f"no link cost for ({a}, {b})")


def _cost(a: NodeId, b: NodeId, params: ElectionParams) -> float:
    """Like ``intra_cost`` but treats a missing pair as out of range."""
    try:
        return intra_cost(a, b, params)
    except KeyError:
        return math.inf


def _cheapest(node: NodeId, heads: Iterable[NodeId], params: ElectionParams) -> Optional[NodeId]:
    best = None
    best_cost = math.inf
    for h in sorted(heads):
        c = _cost(node, h, params)
        if c < best_cost:
            best, best_cost = h, c
    return best


def run_election(
    nodes: list[NodeRecord],
    params: ElectionParams,
    rng: random.Random,
    first_group_id: GroupId = 1,
) -> ClusterAssignment:
    """Cluster the alive, non-blacklisted ``nodes``.

    Node records are not modified; the resulting status sequence per node is
    returned in ``status_log``.
    """
    if not nodes:
        raise ValueError("election needs at least one node")
    eligible = sorted(
        (n for n in nodes if n.alive and n.status is not Status.BLACKLISTED), key=lambda n: n.id
    )
    if not eligible:
        raise ValueError("election needs at least one alive node")

    prob = {n.id: gm_probability(n.group_prob, n.power, params.p_min) for n in eligible}
    log: dict[NodeId, list[Status]] = {n.id: [Status.UNCLUSTERED] for n in eligible}
    tentative: set[NodeId] = set()
    final: set[NodeId] = set()
    joined: set[NodeId] = set()
    limit = params.round_limit
    rounds = 0

    for r in range(1, limit + 1):
        undecided = [n.id for n in eligible if n.id not in final and n.id not in joined]
        if not undecided:
            break
        rounds = r
        forced = r == limit

        # Candidates whose probability reached 1 go final first, so that
        # their provisional joiners can settle in the same round.
        for nid in undecided:
            if nid in tentative and (prob[nid] >= 1 or forced):
                tentative.discard(nid)
                final.add(nid)

        # Announcements made below are heard from the next round on.
        new_final: set[NodeId] = set()
        new_tentative: set[NodeId] = set()
        for nid in undecided:
            if nid in final or nid in tentative:
                continue
            finals = [h for h in final if _cost(nid, h, params) < math.inf]
            if finals:
                joined.add(nid)
                log[nid].append(Status.FINAL)
                continue
            heard = [h for h in tentative if _cost(nid, h, params) < math.inf]
            if heard and not forced:
                continue  # provisional joiner, waits for its manager to go final
            if prob[nid] >= 1 or forced:
                new_final.add(nid)
            elif rng.random() < prob[nid]:
                new_tentative.add(nid)
                log[nid].append(node_status(prob[nid]))
        final |= new_final
        tentative |= new_tentative

        for nid in undecided:
            if nid not in final and nid not in joined:
                prob[nid] = min(1.0, prob[nid] * 2)

    for nid in final:
        log[nid].append(Status.GROUP_MANAGER)

    members: dict[NodeId, set[NodeId]] = {h: set() for h in final}
    unassigned: set[NodeId] = set()
    for nid in sorted(joined):
        head = _cheapest(nid, final, params)
        if head is None:
            unassigned.add(nid)
        else:
            members[head].add(nid)

    groups = [
        Group(id=first_group_id + i, manager=h, members=members[h])
        for i, h in enumerate(sorted(final))
    ]
    return ClusterAssignment(groups=groups, unassigned=unassigned, rounds_used=rounds, status_log=log)


def euclidean_costs(
    positions: Mapping[NodeId, tuple[float, float]], radio_range: float = math.inf
) -> dict[tuple[NodeId, NodeId], float]:
    """Link-cost table from coordinates; pairs beyond ``radio_range`` are left out."""
    ids = sorted(positions)
    costs: dict[tuple[NodeId, NodeId], float] = {}
    for i, a in enumerate(ids):
        costs[(a, a)] = 0.0
        ax, ay = positions[a]
        for b in ids[i + 1 :]:
            bx, by = positions[b]
            d = math.hypot(ax - bx, ay - by)
            if d <= radio_range:
                costs[(a, b)] = d
    return costs
