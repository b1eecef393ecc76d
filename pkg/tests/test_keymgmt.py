import hashlib
import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from htrcf import crypto
from htrcf.keymgmt import (
    Kdc,
    ManagerDeparture,
    Trigger,
    TriggerKind,
    WrapKind,
    deliver,
    derive_rekey,
    distribute_issued,
    handle_join,
    handle_leave,
    kdc_issue_group_key,
    open_envelope,
    periodic_rekey,
    readable_with,
    unicast_rekey,
)
from htrcf.model import Group, KeyRing


def _issued_group(kdc, rings, manager, members, rng, gid=1):
    g = Group(gid, manager=manager, members=set(members))
    env = kdc_issue_group_key(kdc, gid, manager, rng)
    gk = open_envelope(env, kdc.rsa_for(manager))
    rings[manager].group_keys[(gid, gk.epoch)] = gk.key
    deliver(distribute_issued(g, kdc, gk, rng), rings)
    return g


def _reference_rekey(epoch, nonce, members):
    h = hashlib.sha256(b"HT-RCF-rekey" + nonce + epoch.to_bytes(8, "big"))
    for _, s in sorted(members):
        h.update(hashlib.sha256(s).digest())
    return h.digest()


class TestIssuance:
    def test_epochs_start_at_one_and_advance(self, small_kdc):
        kdc, _ = small_kdc
        rng = random.Random(0)
        a = kdc_issue_group_key(kdc, 1, 1, rng)
        b = kdc_issue_group_key(kdc, 1, 1, rng)
        assert (a.epoch, b.epoch) == (1, 2)
        ka, kb = open_envelope(a, kdc.rsa_for(1)), open_envelope(b, kdc.rsa_for(1))
        assert ka.key != kb.key

    def test_envelope_round_trip_exact(self, small_kdc):
        kdc, _ = small_kdc
        env = kdc_issue_group_key(kdc, 4, 2, random.Random(1))
        assert open_envelope(env, kdc.rsa_for(2)).key == kdc.group_keys[4].key

    def test_unregistered_manager(self, small_kdc):
        kdc, _ = small_kdc
        with pytest.raises(KeyError):
            kdc_issue_group_key(kdc, 1, 99, random.Random(0))

    def test_epoch_cannot_go_back(self, small_kdc):
        kdc, _ = small_kdc
        kdc_issue_group_key(kdc, 1, 1, random.Random(0))
        with pytest.raises(ValueError):
            kdc.record(1, kdc.group_keys[1])

    def test_register_twice_rejected(self):
        kdc = Kdc(bit_length=32)
        kdc.register(1, bytes(32))
        with pytest.raises(ValueError):
            kdc.register(1, bytes(32))
        with pytest.raises(ValueError):
            kdc.register(2, bytes(5))

    def test_distribute_reaches_every_member(self, small_kdc):
        kdc, rings = small_kdc
        g = _issued_group(kdc, rings, 1, {2, 3, 4}, random.Random(2))
        for n in (1, 2, 3, 4):
            assert rings[n].group_keys[(1, 1)] == g.group_key


class TestDeriveRekey:
    members = [(1, b"a" * 32), (2, b"b" * 32), (3, b"c" * 32)]

    def test_deterministic(self):
        assert derive_rekey(3, b"n" * 16, self.members) == derive_rekey(3, b"n" * 16, self.members)

    def test_matches_reference_digest(self):
        assert derive_rekey(3, b"n" * 16, self.members) == _reference_rekey(3, b"n" * 16, self.members)

    def test_member_change_changes_key(self):
        assert derive_rekey(3, b"n" * 16, self.members) != derive_rekey(3, b"n" * 16, self.members[:2])

    def test_order_independent(self):
        assert derive_rekey(3, b"n" * 16, self.members) == derive_rekey(3, b"n" * 16, self.members[::-1])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            derive_rekey(1, b"n" * 16, [])

    @given(
        st.dictionaries(st.integers(1, 50), st.binary(min_size=32, max_size=32), min_size=1, max_size=8),
        st.binary(min_size=16, max_size=16),
        st.integers(1, 1000),
        st.randoms(use_true_random=False),
    )
    def test_reference_equivalence(self, secrets, nonce, epoch, rnd):
        items = list(secrets.items())
        rnd.shuffle(items)
        assert derive_rekey(epoch, nonce, items) == _reference_rekey(epoch, nonce, items)


class TestJoin:
    def test_two_messages_and_epoch_bump(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(3)
        g = _issued_group(kdc, rings, 1, {2}, rng)  # {A, B}
        session = rng.randbytes(32)
        rings[3].session_keys.append(session)
        t = handle_join(g, 3, session, kdc, rng)
        assert [m.wrap for m in t.messages] == [WrapKind.DH_CHANNEL, WrapKind.OLD_GROUP_KEY]
        assert t.messages[0].to == 3 and t.messages[1].to is None
        assert t.new_epoch == 2 and g.key_epoch == 2
        assert deliver(t, rings) == {2, 3}  # the manager derived the key itself

    def test_backward_secrecy(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(4)
        g = _issued_group(kdc, rings, 1, {2}, rng)
        nonce = rng.randbytes(16)
        captured = crypto.sym_encrypt(g.group_key, nonce, b"pre-join traffic")
        session = rng.randbytes(32)
        rings[3].session_keys.append(session)
        deliver(handle_join(g, 3, session, kdc, rng), rings)
        for k in rings[3].all_keys():
            with pytest.raises(crypto.AuthenticationError):
                crypto.sym_decrypt(k, nonce, captured)

    def test_rejections(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(5)
        g = _issued_group(kdc, rings, 1, {2}, rng)
        epoch = g.key_epoch
        with pytest.raises(PermissionError):
            handle_join(g, 3, bytes(32), kdc, rng, blacklist={3})
        with pytest.raises(PermissionError):
            handle_join(g, 3, None, kdc, rng)
        with pytest.raises(ValueError):
            handle_join(g, 2, bytes(32), kdc, rng)
        assert g.key_epoch == epoch and 3 not in g.nodes

    def test_join_into_singleton(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(6)
        g = _issued_group(kdc, rings, 1, set(), rng)
        rings[2].session_keys.append(b"s" * 32)
        t = handle_join(g, 2, b"s" * 32, kdc, rng)
        assert [m.wrap for m in t.messages] == [WrapKind.DH_CHANNEL]
        assert deliver(t, rings) == {2}


class TestLeave:
    def test_survivor_unicasts(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(7)
        g = _issued_group(kdc, rings, 1, {2, 3}, rng)  # A manages, B and C
        # two survivors besides the departing node: add D so A,B,D remain
        rings[4].session_keys.append(b"d" * 32)
        deliver(handle_join(g, 4, b"d" * 32, kdc, rng), rings)
        t = handle_leave(g, 3, kdc, rng)
        assert len(t.messages) == 2
        assert [(m.to, m.wrap) for m in t.messages] == [
            (2, WrapKind.MEMBER_SECRET_KEY),
            (4, WrapKind.MEMBER_SECRET_KEY),
        ]
        assert readable_with(t.messages[0], [kdc.secret(2)])
        assert readable_with(t.messages[1], [kdc.secret(4)])
        assert deliver(t, rings) == {2, 4}

    def test_forward_secrecy(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(8)
        g = _issued_group(kdc, rings, 1, {2, 3}, rng)
        t = handle_leave(g, 3, kdc, rng)
        deliver(t, rings)
        nonce = rng.randbytes(16)
        after = crypto.sym_encrypt(g.group_key, nonce, b"post-leave traffic")
        for k in rings[3].all_keys():
            assert crypto.try_decrypt(k, nonce, after) is None
        assert not any(readable_with(m, rings[3].all_keys()) for m in t.messages)

    def test_last_member_leaves(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(9)
        g = _issued_group(kdc, rings, 1, {2}, rng)
        old = g.group_key
        t = handle_leave(g, 2, kdc, rng)
        assert t.messages == []
        assert g.members == set() and g.group_key not in (None, old)

    def test_errors(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(10)
        g = _issued_group(kdc, rings, 1, {2}, rng)
        with pytest.raises(ValueError):
            handle_leave(g, 5, kdc, rng)
        with pytest.raises(ManagerDeparture):
            handle_leave(g, 1, kdc, rng)


class TestPeriodic:
    def test_single_broadcast_and_monotone(self, small_kdc):
        kdc, rings = small_kdc
        rng = random.Random(11)
        g = _issued_group(kdc, rings, 1, {2, 3}, rng)
        t1 = periodic_rekey(g, kdc, rng)
        deliver(t1, rings)
        t2 = periodic_rekey(g, kdc, rng)
        assert len(t1.messages) == 1 and t1.messages[0].to is None
        assert t1.new_epoch < t2.new_epoch
        assert deliver(t2, rings) == {2, 3}


class TestUnicast:
    def test_flat_leave_one_message_per_survivor(self):
        kdc = Kdc(bit_length=32)
        rings = {}
        for n in range(1, 12):
            kdc.register(n, bytes([n]) * 32)
            rings[n] = KeyRing(secret=bytes([n]) * 32)
        rng = random.Random(12)
        g = _issued_group(kdc, rings, 1, set(range(2, 12)), rng)  # 10 members + server-side manager
        g.members.discard(5)
        t = unicast_rekey(g, Trigger(TriggerKind.LEAVE, 5), kdc, rng)
        assert len(t.messages) == 9
        assert deliver(t, rings) == set(range(2, 12)) - {5}


def test_transcript_json(small_kdc):
    kdc, rings = small_kdc
    rng = random.Random(13)
    g = _issued_group(kdc, rings, 1, {2, 3}, rng)
    t = handle_leave(g, 2, kdc, rng)
    short = json.loads(t.to_json())
    full = json.loads(t.to_json(full=True))
    assert short["trigger"] == "Leave(2)" and short["epoch"] == 2
    assert short["messages"] == [{"to": 3, "wrap": "MemberSecretKey", "bytes_len": 16 + 48 + 16}]
    assert set(full["messages"][0]) == {"to", "wrap", "bytes_len", "nonce", "ciphertext"}


@pytest.mark.parametrize("seed", range(25))
def test_key_holding_invariant_under_churn(seed):
    """After every rekey, exactly the current group holds the current key."""
    rng = random.Random(seed)
    kdc = Kdc(bit_length=32)
    rings = {}
    for n in range(1, 11):
        s = rng.randbytes(32)
        kdc.register(n, s)
        rings[n] = KeyRing(secret=s)
    g = _issued_group(kdc, rings, 1, {2, 3, 4}, rng)
    outside = set(range(5, 11))
    for _ in range(12):
        if outside and (rng.random() < 0.5 or not g.members):
            n = rng.choice(sorted(outside))
            sess = rng.randbytes(32)
            rings[n].session_keys.append(sess)
            t = handle_join(g, n, sess, kdc, rng)
            outside.discard(n)
        else:
            n = rng.choice(sorted(g.members))
            t = handle_leave(g, n, kdc, rng)
            outside.add(n)
        rings[1].group_keys[(1, g.key_epoch)] = g.group_key
        deliver(t, rings)
        holders = {i for i, r in rings.items() if r.group_keys.get((1, g.key_epoch)) == g.group_key}
        assert holders == g.nodes
