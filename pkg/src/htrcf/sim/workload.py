"""Seeded churn-script generation."""

from __future__ import annotations

import random
from typing import Optional

from .config import ChurnEvent, ScenarioConfig


def alternating_churn(
    seed: int,
    node_count: int,
    join_pool: int,
    changes: int,
    start_ms: int,
    spacing_ms: int,
) -> list[ChurnEvent]:
    """Alternate Leave and Join, one change every ``spacing_ms``.

    Leaves pick a random present node; joins pick a random absent one (pool
    nodes or earlier leavers).
    """
    rng = random.Random(f"{seed}:churn")
    present = set(range(1, node_count + 1))
    absent = set(range(node_count + 1, node_count + join_pool + 1))
    events = []
    for i in range(changes):
        t = start_ms + i * spacing_ms
        leave = (i % 2 == 0 and len(present) > 1) or not absent
        if leave:
            node = rng.choice(sorted(present))
            present.discard(node)
            absent.add(node)
            events.append(ChurnEvent(t, "Leave", node))
        else:
            node = rng.choice(sorted(absent))
            absent.discard(node)
            present.add(node)
            events.append(ChurnEvent(t, "Join", node))
    return events


def steady_churn_config(
    seed: int,
    node_count: int = 100,
    target_groups: int = 5,
    changes: int = 20,
    join_pool: Optional[int] = None,
    **overrides,
) -> ScenarioConfig:
    """Scenario with one membership change per beacon interval, placed midway
    between beacons, running long enough for detection to settle afterwards."""
    cfg = ScenarioConfig(seed=seed, node_count=node_count, target_groups=target_groups, **overrides)
    interval = cfg.beacon_interval_ms
    cfg.join_pool = changes if join_pool is None else join_pool
    cfg.churn = alternating_churn(seed, node_count, cfg.join_pool, changes, interval // 2, interval)
    last = cfg.churn[-1].time if cfg.churn else 0
    cfg.duration_ms = max(cfg.duration_ms, last + (cfg.k_missed + 1) * interval)
    cfg.validate()
    return cfg
