"""Key distribution center, group-key issuance and membership rekeying.

Every rekey produces a :class:`RekeyTranscript` whose messages are real
ciphertexts, so secrecy properties can be checked by attempting decryption
rather than by inspecting bookkeeping.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional

from . import crypto
from .crypto import KEY_BYTES, NONCE_BYTES, RsaKeyPair
from .election import ElectionParams, run_election
from .model import Group, GroupId, KeyRing, NodeId, NodeRecord, Status

REKEY_LABEL = b"HT-RCF-rekey"


class WrapKind(str, Enum):
    OLD_GROUP_KEY = "OldGroupKey"
    MEMBER_SECRET_KEY = "MemberSecretKey"
    DH_CHANNEL = "DhChannel"


class TriggerKind(str, Enum):
    ISSUE = "Issue"
    JOIN = "Join"
    LEAVE = "Leave"
    BLACKLIST = "Blacklist"
    PERIODIC = "Periodic"


@dataclass(frozen=True)
class Trigger:
    kind: TriggerKind
    node: Optional[NodeId] = None

    def label(self) -> str:
        return self.kind.value if self.node is None else f"{self.kind.value}({self.node})"


class ManagerDeparture(Exception):
    """The departing node manages the group; the group must be re-elected."""


@dataclass(frozen=True)
class GroupKey:
    key: bytes
    epoch: int


@dataclass(frozen=True)
class GroupKeyEnvelope:
    group: GroupId
    epoch: int
    key_for_gm: bytes


@dataclass(frozen=True)
class RekeyMessage:
    sender: NodeId
    to: Optional[NodeId]  # None for a group broadcast
    wrap: WrapKind
    nonce: bytes
    ciphertext: bytes
    audience: frozenset[NodeId]

    @property
    def size(self) -> int:
        return NONCE_BYTES + len(self.ciphertext)


@dataclass
class RekeyTranscript:
    group: GroupId
    trigger: Trigger
    new_epoch: int
    messages: list[RekeyMessage] = field(default_factory=list)

    def to_dict(self, full: bool = False) -> dict:
        msgs = []
        for m in self.messages:
            d = {
                "to": "broadcast" if m.to is None else m.to,
                "wrap": m.wrap.value,
                "bytes_len": m.size,
            }
            if full:
                d["nonce"] = m.nonce.hex()
                d["ciphertext"] = m.ciphertext.hex()
            msgs.append(d)
        return {
            "group": self.group,
            "trigger": self.trigger.label(),
            "epoch": self.new_epoch,
            "messages": msgs,
        }

    def to_json(self, full: bool = False) -> str:
        return json.dumps(self.to_dict(full), separators=(",", ":"))


@dataclass
class Kdc:
    registry: dict[NodeId, bytes] = field(default_factory=dict)
    rsa: dict[NodeId, RsaKeyPair] = field(default_factory=dict)
    group_keys: dict[GroupId, GroupKey] = field(default_factory=dict)
    bit_length: int = 512

    def register(self, node: NodeId, secret: bytes) -> None:
        if node in self.registry:
            raise ValueError(f"node {node} already registered")
        if len(secret) != KEY_BYTES:
            raise ValueError("secret key must be 32 bytes")
        self.registry[node] = secret

    def secret(self, node: NodeId) -> bytes:
        try:
            return self.registry[node]
        except KeyError:
            raise KeyError(f"node {node} is not registered with the KDC") from None

    def rsa_for(self, node: NodeId) -> RsaKeyPair:
        if node not in self.rsa:
            self.rsa[node] = crypto.drsa_keygen(node, self.bit_length)
        return self.rsa[node]

    def epoch(self, group: GroupId) -> int:
        gk = self.group_keys.get(group)
        return 0 if gk is None else gk.epoch

    def record(self, group: GroupId, key: GroupKey) -> None:
        if key.epoch <= self.epoch(group):
            raise ValueError(f"epoch {key.epoch} does not advance group {group}")
        self.group_keys[group] = key


def _payload(key: bytes, group: GroupId, epoch: int) -> bytes:
    return key + group.to_bytes(8, "big") + epoch.to_bytes(8, "big")


def _parse_payload(data: bytes) -> tuple[bytes, GroupId, int]:
    if len(data) != KEY_BYTES + 16:
        raise ValueError("malformed key payload")
    return (
        data[:KEY_BYTES],
        int.from_bytes(data[KEY_BYTES : KEY_BYTES + 8], "big"),
        int.from_bytes(data[KEY_BYTES + 8 :], "big"),
    )


def kdc_mint_group_key(kdc: Kdc, group: GroupId, rng: random.Random) -> GroupKey:
    """Fresh key for the next epoch of ``group``, recorded by the KDC."""
    gk = GroupKey(rng.randbytes(KEY_BYTES), kdc.epoch(group) + 1)
    kdc.record(group, gk)
    return gk


def kdc_issue_group_key(
    kdc: Kdc, group: GroupId, gm: NodeId, rng: random.Random
) -> GroupKeyEnvelope:
    """Mint the next group key and seal it to the manager's RSA public key."""
    if gm not in kdc.registry:
        raise KeyError(f"group manager {gm} is not registered with the KDC")
    gk = kdc_mint_group_key(kdc, group, rng)
    sealed = crypto.rsa_wrap(_payload(gk.key, group, gk.epoch), kdc.rsa_for(gm).public)
    return GroupKeyEnvelope(group, gk.epoch, sealed)


def open_envelope(env: GroupKeyEnvelope, keypair: RsaKeyPair) -> GroupKey:
    key, group, epoch = _parse_payload(crypto.rsa_unwrap(env.key_for_gm, keypair.private))
    if group != env.group or epoch != env.epoch:
        raise ValueError("envelope header does not match sealed payload")
    return GroupKey(key, epoch)


def derive_rekey(
    epoch: int, beacon_nonce: bytes, members: Iterable[tuple[NodeId, bytes]]
) -> bytes:
    """Group key from the manager's beacon nonce and the members' secret keys.

    Members are canonicalised by id and each secret is hashed on its own, so
    the result does not depend on input order or secret lengths.
    """
    ordered = sorted(members, key=lambda m: m[0])
    if not ordered:
        raise ValueError("cannot derive a group key for an empty member set")
    h = hashlib.sha256()
    h.update(REKEY_LABEL)
    h.update(beacon_nonce)
    h.update(epoch.to_bytes(8, "big"))
    for _, secret in ordered:
        h.update(hashlib.sha256(secret).digest())
    return h.digest()


def _seal(
    sender: NodeId,
    to: Optional[NodeId],
    wrap: WrapKind,
    wrapping_key: bytes,
    payload: bytes,
    audience: Iterable[NodeId],
    rng: random.Random,
) -> RekeyMessage:
    nonce = rng.randbytes(NONCE_BYTES)
    return RekeyMessage(
        sender, to, wrap, nonce, crypto.sym_encrypt(wrapping_key, nonce, payload), frozenset(audience)
    )


def _install(group: Group, kdc: Kdc, key: bytes, epoch: int) -> None:
    group.group_key = key
    group.key_epoch = epoch
    if epoch > kdc.epoch(group.id):
        kdc.group_keys[group.id] = GroupKey(key, epoch)


def _rekey_inputs(group: Group, kdc: Kdc, nodes: Iterable[NodeId]) -> list[tuple[NodeId, bytes]]:
    return [(n, kdc.registry[n]) for n in nodes if n in kdc.registry]


def _next_key(group: Group, kdc: Kdc, epoch: int, rng: random.Random) -> Optional[bytes]:
    """Derive the key for ``epoch``; a group with no registered node left is
    dissolved instead (key cleared, returns None)."""
    inputs = _rekey_inputs(group, kdc, group.nodes)
    if not inputs:
        group.key_epoch = epoch
        group.group_key = None
        return None
    return derive_rekey(epoch, rng.randbytes(NONCE_BYTES), inputs)


def distribute_issued(
    group: Group, kdc: Kdc, issued: GroupKey, rng: random.Random, trigger: Optional[Trigger] = None
) -> RekeyTranscript:
    """Manager hands a KDC-issued key to each member under that member's secret."""
    _install(group, kdc, issued.key, issued.epoch)
    payload = _payload(issued.key, group.id, issued.epoch)
    t = RekeyTranscript(group.id, trigger or Trigger(TriggerKind.ISSUE), issued.epoch)
    for m in sorted(group.members):
        t.messages.append(
            _seal(group.manager, m, WrapKind.MEMBER_SECRET_KEY, kdc.secret(m), payload, [m], rng)
        )
    return t


def handle_join(
    group: Group,
    joiner: NodeId,
    session_key: Optional[bytes],
    kdc: Kdc,
    rng: random.Random,
    blacklist: Iterable[NodeId] = (),
) -> RekeyTranscript:
    """Admit a verified joiner and roll the group key forward.

    The joiner receives the new key over its DH channel; existing members get
    it under the key they already share, so the joiner never sees an old key.
    """
    if joiner in set(blacklist):
        raise PermissionError(f"node {joiner} is blacklisted")
    if session_key is None:
        raise PermissionError(f"node {joiner} has no verified channel to the manager")
    if joiner in group.nodes:
        raise ValueError(f"node {joiner} is already in group {group.id}")
    if group.group_key is None:
        raise ValueError(f"group {group.id} has no key yet")
    old_key, old_members = group.group_key, set(group.members)
    epoch = group.key_epoch + 1
    group.members.add(joiner)
    key = derive_rekey(epoch, rng.randbytes(NONCE_BYTES), _rekey_inputs(group, kdc, group.nodes))
    payload = _payload(key, group.id, epoch)
    t = RekeyTranscript(group.id, Trigger(TriggerKind.JOIN, joiner), epoch)
    t.messages.append(
        _seal(group.manager, joiner, WrapKind.DH_CHANNEL, session_key, payload, [joiner], rng)
    )
    if old_members:
        t.messages.append(
            _seal(group.manager, None, WrapKind.OLD_GROUP_KEY, old_key, payload, old_members, rng)
        )
    _install(group, kdc, key, epoch)
    return t


def handle_leave(
    group: Group,
    departing: NodeId,
    kdc: Kdc,
    rng: random.Random,
    trigger: TriggerKind = TriggerKind.LEAVE,
) -> RekeyTranscript:
    """Drop a member and send the new key to each survivor under its own secret.

    With no members left the manager keeps a fresh key to itself and nothing
    is sent.
    """
    if departing == group.manager:
        raise ManagerDeparture(f"node {departing} manages group {group.id}")
    if departing not in group.members:
        raise ValueError(f"node {departing} is not in group {group.id}")
    group.members.discard(departing)
    epoch = group.key_epoch + 1
    t = RekeyTranscript(group.id, Trigger(trigger, departing), epoch)
    key = _next_key(group, kdc, epoch, rng)
    if key is None:
        return t
    payload = _payload(key, group.id, epoch)
    for m in sorted(group.members):
        t.messages.append(
            _seal(group.manager, m, WrapKind.MEMBER_SECRET_KEY, kdc.secret(m), payload, [m], rng)
        )
    _install(group, kdc, key, epoch)
    return t


def periodic_rekey(group: Group, kdc: Kdc, rng: random.Random) -> RekeyTranscript:
    if group.group_key is None:
        raise ValueError(f"group {group.id} has no key yet")
    old_key = group.group_key
    epoch = group.key_epoch + 1
    key = derive_rekey(epoch, rng.randbytes(NONCE_BYTES), _rekey_inputs(group, kdc, group.nodes))
    payload = _payload(key, group.id, epoch)
    t = RekeyTranscript(group.id, Trigger(TriggerKind.PERIODIC), epoch)
    if group.members:
        t.messages.append(
            _seal(group.manager, None, WrapKind.OLD_GROUP_KEY, old_key, payload, group.members, rng)
        )
    _install(group, kdc, key, epoch)
    return t


def unicast_rekey(
    group: Group,
    trigger: Trigger,
    kdc: Kdc,
    rng: random.Random,
    joiner_session: Optional[bytes] = None,
) -> RekeyTranscript:
    """Flat rekey used by the baseline: every member gets its own unicast.

    Membership must already reflect the change. A joiner, if any, is reached
    over its DH channel instead of its secret.
    """
    epoch = group.key_epoch + 1
    t = RekeyTranscript(group.id, trigger, epoch)
    key = _next_key(group, kdc, epoch, rng)
    if key is None:
        return t
    payload = _payload(key, group.id, epoch)
    for m in sorted(group.members):
        if trigger.kind is TriggerKind.JOIN and m == trigger.node:
            if joiner_session is None:
                raise PermissionError(f"node {m} has no verified channel")
            t.messages.append(
                _seal(group.manager, m, WrapKind.DH_CHANNEL, joiner_session, payload, [m], rng)
            )
        else:
            t.messages.append(
                _seal(group.manager, m, WrapKind.MEMBER_SECRET_KEY, kdc.secret(m), payload, [m], rng)
            )
    _install(group, kdc, key, epoch)
    return t


def deliver(transcript: RekeyTranscript, rings: Mapping[NodeId, KeyRing]) -> set[NodeId]:
    """Let each addressed node try to open its message; return who got the key.

    A node uses the key the wrap kind calls for: its current group key, its
    own secret, or its newest DH session key.
    """
    installed: set[NodeId] = set()
    gid, epoch = transcript.group, transcript.new_epoch
    for msg in transcript.messages:
        for node in sorted(msg.audience):
            ring = rings.get(node)
            if ring is None:
                continue
            if msg.wrap is WrapKind.OLD_GROUP_KEY:
                key = ring.group_keys.get((gid, epoch - 1))
            elif msg.wrap is WrapKind.MEMBER_SECRET_KEY:
                key = ring.secret
            else:
                key = ring.session_keys[-1] if ring.session_keys else None
            if key is None:
                continue
            data = crypto.try_decrypt(key, msg.nonce, msg.ciphertext)
            if data is None:
                continue
            new_key, g, e = _parse_payload(data)
            if (g, e) == (gid, epoch):
                ring.group_keys[(gid, epoch)] = new_key
                installed.add(node)
    return installed


def readable_with(msg: RekeyMessage, keys: Iterable[bytes]) -> bool:
    """True if any of ``keys`` authenticates ``msg``."""
    return any(crypto.try_decrypt(k, msg.nonce, msg.ciphertext) is not None for k in keys)


@dataclass
class Reelection:
    groups: list[Group]
    transcripts: list[RekeyTranscript]
    envelopes: list[GroupKeyEnvelope]


def dissolve_and_reelect(
    group: Group,
    departing: NodeId,
    kdc: Kdc,
    nodes: Mapping[NodeId, NodeRecord],
    params: ElectionParams,
    rng: random.Random,
    first_group_id: GroupId,
) -> Reelection:
    """Replace a departed manager: elect afresh among the survivors, then have
    the KDC issue each resulting group a new key."""
    survivors = [nodes[n] for n in sorted(group.nodes - {departing}) if nodes[n].alive]
    survivors = [n for n in survivors if n.status is not Status.BLACKLISTED]
    group.members = set()
    group.group_key = None
    if not survivors:
        return Reelection([], [], [])
    assignment = run_election(survivors, params, rng, first_group_id)
    transcripts, envelopes = [], []
    for g in assignment.groups:
        env = kdc_issue_group_key(kdc, g.id, g.manager, rng)
        issued = open_envelope(env, kdc.rsa_for(g.manager))
        envelopes.append(env)
        transcripts.append(distribute_issued(g, kdc, issued, rng))
    return Reelection(assignment.groups, transcripts, envelopes)
