import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from htrcf.election import node_status
from htrcf.model import (
    EventKind,
    Group,
    PowerState,
    Status,
    TraceEvent,
    consume_power,
    create_node,
    read_trace,
    write_trace,
)


def test_create_node_full_battery():
    n = create_node(1, 100, 0.05)
    assert n.power == PowerState(100, 100)
    assert n.status is Status.UNCLUSTERED
    assert n.alive


@pytest.mark.parametrize("p_ext,prob", [(0, 0.05), (-1, 0.05), (10, 0), (10, 1.5)])
def test_create_node_rejects(p_ext, prob):
    with pytest.raises(ValueError):
        create_node(2, p_ext, prob)


def test_prob_one_node_is_final_from_the_start():
    n = create_node(3, 50, 1.0)
    assert node_status(n.group_prob * n.power.p_res / n.power.p_ext) is Status.FINAL


def test_power_state_invariants():
    with pytest.raises(ValueError):
        PowerState(11, 10)
    with pytest.raises(ValueError):
        PowerState(-1, 10)
    with pytest.raises(ValueError):
        PowerState(0, 0)


def test_consume_power_subtracts():
    n = create_node(1, 10, 0.1)
    ev = consume_power(n, 3, EventKind.SEND)
    assert n.power.p_res == 7
    assert ev.energy == 3 and ev.kind is EventKind.SEND


def test_consume_power_saturates_and_kills():
    n = create_node(1, 10, 0.1, p_res=2)
    ev = consume_power(n, 5, EventKind.RECEIVE)
    assert n.power.p_res == 0
    assert ev.energy == 2
    assert not n.alive


def test_consume_zero_is_identity():
    n = create_node(1, 10, 0.1)
    ev = consume_power(n, 0, EventKind.SEND)
    assert n.power.p_res == 10 and ev.energy == 0


def test_consume_rejects_negative_and_marker_kinds():
    n = create_node(1, 10, 0.1)
    with pytest.raises(ValueError):
        consume_power(n, -1, EventKind.SEND)
    with pytest.raises(ValueError):
        consume_power(n, 1, EventKind.REKEY)


@given(
    p_ext=st.floats(0.1, 1e4),
    frac=st.floats(0, 1),
    draws=st.lists(st.floats(0, 50), max_size=60),
)
def test_energy_conservation_is_exact(p_ext, frac, draws):
    n = create_node(1, p_ext, 0.5, p_res=p_ext * frac)
    start = n.power.p_res
    energies = []
    for i, d in enumerate(draws):
        ev = consume_power(n, d, EventKind.SEND if i % 2 else EventKind.RECEIVE)
        energies.append(ev.energy)
        assert 0 <= n.power.p_res <= n.power.p_ext
        assert ev.energy >= 0
    assert math.fsum(energies) == start - n.power.p_res


def test_group_lists_manager_once():
    g = Group(1, manager=5, members={5, 6, 7})
    assert g.members == {6, 7}
    assert g.nodes == {5, 6, 7}


def test_blacklisted_status_is_terminal():
    n = create_node(1, 10, 0.1)
    n.set_status(Status.BLACKLISTED)
    with pytest.raises(ValueError):
        n.set_status(Status.FINAL)


def test_trace_jsonl_round_trip():
    events = [
        TraceEvent(0, EventKind.SEND, 0, 80, 0.16),
        TraceEvent(5, EventKind.RECEIVE, 3, 80, 0.08),
        TraceEvent(5, EventKind.BLACKLIST, 3),
    ]
    buf = io.StringIO()
    write_trace(events, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 3
    assert lines[0] == '{"time":0,"kind":"Send","node":0,"bytes":80,"energy":0.16}'
    assert list(read_trace(io.StringIO(buf.getvalue()))) == events
