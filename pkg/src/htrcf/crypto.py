"""Number theory, device-bound RSA, Diffie-Hellman and a hash-based AEAD.

Textbook constructions without padding or constant-time guarantees. These
model the protocol for simulation; they are not production cryptography.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass
from enum import Enum
from typing import Optional

KEY_BYTES = 32
NONCE_BYTES = 16
TAG_BYTES = 16
MR_ROUNDS = 40

_SMALL_PRIMES = [p for p in range(2, 1000) if all(p % d for d in range(2, int(p**0.5) + 1))]


class AuthenticationError(Exception):
    """Ciphertext failed tag verification (wrong key or corruption)."""


# -- modular arithmetic -----------------------------------------------------


def mod_pow(base: int, exp: int, mod: int) -> int:
    """Left-to-right square-and-multiply."""
    if mod <= 0:
        raise ValueError("modulus must be positive")
    if exp < 0:
        raise ValueError("negative exponent")
    if mod == 1:
        return 0
    base %= mod
    result = 1
    for bit in bin(exp)[2:]:
        result = result * result % mod
        if bit == "1":
            result = result * base % mod
    return result


def egcd(a: int, b: int) -> tuple[int, int, int]:
    """Iterative extended Euclid: returns (g, x, y) with a*x + b*y = g."""
    x0, x1, y0, y1 = 1, 0, 0, 1
    while b:
        q, a, b = a // b, b, a % b
        x0, x1 = x1, x0 - q * x1
        y0, y1 = y1, y0 - q * y1
    return a, x0, y0


def mod_inverse(a: int, m: int) -> int:
    g, x, _ = egcd(a % m, m)
    if g != 1:
        raise ValueError(f"{a} has no inverse mod {m}")
    return x % m


def gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return abs(a)


def is_probable_prime(n: int, rounds: int = MR_ROUNDS) -> bool:
    """Trial division, then Miller-Rabin with witnesses seeded from ``n``.

    Seeding from the candidate keeps the answer a pure function of ``n``.
    """
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    if n < _SMALL_PRIMES[-1] ** 2:
        return True
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    witnesses = random.Random(n)
    for _ in range(rounds):
        a = witnesses.randrange(2, n - 1)
        x = mod_pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int) -> int:
    """Smallest prime >= n."""
    if n <= 2:
        return 2
    c = n | 1
    while not is_probable_prime(c):
        c += 2
    return c


# -- RSA --------------------------------------------------------------------


@dataclass(frozen=True)
class RsaKeyPair:
    u: int
    v: int
    n: int
    k: int
    l: int

    @property
    def phi(self) -> int:
        return (self.u - 1) * (self.v - 1)

    @property
    def public(self) -> tuple[int, int]:
        return (self.k, self.n)

    @property
    def private(self) -> tuple[int, int]:
        return (self.l, self.n)

    def public_json(self) -> dict[str, str]:
        return {"n": format(self.n, "x"), "k": format(self.k, "x")}


def rsa_from_primes(u: int, v: int, k: Optional[int] = None) -> RsaKeyPair:
    """Assemble a key pair from two distinct primes.

    Without an explicit ``k`` the smallest integer >= 3 coprime to phi(n) is used.
    """
    if u == v:
        raise ValueError("primes must be distinct")
    if not (is_probable_prime(u) and is_probable_prime(v)):
        raise ValueError("u and v must be prime")
    n = u * v
    phi = (u - 1) * (v - 1)
    if k is None:
        k = 3
        while gcd(k, phi) != 1:
            k += 1
    if not 1 < k < phi:
        raise ValueError(f"no public exponent available for phi={phi}")
    if gcd(k, phi) != 1:
        raise ValueError(f"k={k} is not coprime to phi={phi}")
    return RsaKeyPair(u=u, v=v, n=n, k=k, l=mod_inverse(k, phi))


def _device_prime(device_id: int, index: int, half_bits: int) -> int:
    digest = hashlib.sha256(device_id.to_bytes(8, "big") + index.to_bytes(4, "big")).digest()
    # Top bit pinned so both primes, and hence n, have full width.
    x = int.from_bytes(digest, "big") % (1 << half_bits) | (1 << (half_bits - 1))
    return next_prime(x)


def drsa_keygen(device_id: int, bit_length: int = 512) -> RsaKeyPair:
    """Derive an RSA key pair deterministically from a device id."""
    if bit_length < 16:
        raise ValueError(f"bit_length must be at least 16, got {bit_length}")
    half = bit_length // 2
    u = _device_prime(device_id, 0, half)
    index = 1
    v = _device_prime(device_id, index, half)
    while v == u:
        index += 1
        v = _device_prime(device_id, index, half)
    return rsa_from_primes(u, v)


def rsa_encrypt(m: int, pub: tuple[int, int]) -> int:
    k, n = pub
    if not 0 <= m < n:
        raise ValueError(f"message {m} outside [0, {n})")
    return mod_pow(m, k, n)


def rsa_decrypt(c: int, priv: tuple[int, int]) -> int:
    l, n = priv
    if not 0 <= c < n:
        raise ValueError(f"ciphertext {c} outside [0, {n})")
    return mod_pow(c, l, n)


def chunk_size(n: int) -> int:
    """Bytes per plaintext chunk such that every chunk integer is < n."""
    return (n.bit_length() - 1) // 8


def rsa_wrap(data: bytes, pub: tuple[int, int]) -> bytes:
    """Encrypt arbitrary bytes as a sequence of fixed-width RSA blocks.

    The plaintext gets a 4-byte length prefix and is zero-padded to whole
    chunks, so every block decodes to exactly ``chunk_size(n)`` bytes.
    """
    _, n = pub
    size = chunk_size(n)
    if size < 1:
        raise ValueError(f"modulus {n} too small to carry data")
    width = (n.bit_length() + 7) // 8
    framed = len(data).to_bytes(4, "big") + data
    framed += bytes(-len(framed) % size)
    out = bytearray()
    for i in range(0, len(framed), size):
        m = int.from_bytes(framed[i : i + size], "big")
        out += rsa_encrypt(m, pub).to_bytes(width, "big")
    return bytes(out)


def rsa_unwrap(blob: bytes, priv: tuple[int, int]) -> bytes:
    _, n = priv
    size = chunk_size(n)
    width = (n.bit_length() + 7) // 8
    if not blob or len(blob) % width:
        raise ValueError("ciphertext is not a whole number of blocks")
    framed = bytearray()
    for i in range(0, len(blob), width):
        m = rsa_decrypt(int.from_bytes(blob[i : i + width], "big"), priv)
        if m >= 1 << (8 * size):
            raise ValueError("block does not decode to a chunk")
        framed += m.to_bytes(size, "big")
    length = int.from_bytes(framed[:4], "big")
    if length > len(framed) - 4:
        raise ValueError("corrupt RSA frame")
    return bytes(framed[4 : 4 + length])


# -- Diffie-Hellman ---------------------------------------------------------


@dataclass(frozen=True)
class DhParams:
    x: int
    g: int

    def __post_init__(self) -> None:
        if not is_probable_prime(self.x):
            raise ValueError("DH modulus must be prime")
        if not 1 < self.g < self.x:
            raise ValueError("generator out of range")

    @property
    def width(self) -> int:
        return (self.x.bit_length() + 7) // 8


# 256-bit safe prime, x = 2q + 1 with x = 3 (mod 8), so 2 generates Z_x^*.
DEFAULT_DH = DhParams(
    x=0x96A95E7C87AF178A2415316E5B279DEA4D1EF43AFBF4A1953C1322FE5A08F1DB,
    g=2,
)
TEST_DH = DhParams(x=23, g=5)
DH_PARAMS = {"default": DEFAULT_DH, "test": TEST_DH}


@dataclass(frozen=True)
class DhKeyPair:
    secret: int
    public: int


def dh_from_secret(secret: int, params: DhParams) -> DhKeyPair:
    if not 1 <= secret <= params.x - 1:
        raise ValueError("secret outside {1..x-1}")
    return DhKeyPair(secret, mod_pow(params.g, secret, params.x))


def dh_keypair(params: DhParams, rng: random.Random) -> DhKeyPair:
    return dh_from_secret(rng.randint(1, params.x - 1), params)


def dh_shared(own: DhKeyPair, other_public: int, params: DhParams) -> int:
    if not 0 < other_public < params.x:
        raise ValueError(f"peer public value {other_public} out of range")
    return mod_pow(other_public, own.secret, params.x)


def session_key(shared: int, params: DhParams) -> bytes:
    return hashlib.sha256(b"dh-session" + shared.to_bytes(params.width, "big")).digest()


# -- symmetric wrap ---------------------------------------------------------


def _keystream(key: bytes, nonce: bytes, length: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(key + nonce + counter.to_bytes(8, "big")).digest()
        counter += 1
    return bytes(out[:length])


def _tag(key: bytes, nonce: bytes, body: bytes) -> bytes:
    return hashlib.sha256(key + nonce + b"mac" + body).digest()[:TAG_BYTES]


def sym_encrypt(key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    if len(key) != KEY_BYTES:
        raise ValueError(f"key must be {KEY_BYTES} bytes")
    if len(nonce) != NONCE_BYTES:
        raise ValueError(f"nonce must be {NONCE_BYTES} bytes")
    ks = _keystream(key, nonce, len(plaintext))
    body = bytes(a ^ b for a, b in zip(plaintext, ks))
    return body + _tag(key, nonce, body)


def sym_decrypt(key: bytes, nonce: bytes, ciphertext: bytes) -> bytes:
    if len(key) != KEY_BYTES or len(nonce) != NONCE_BYTES or len(ciphertext) < TAG_BYTES:
        raise AuthenticationError("malformed input")
    body, tag = ciphertext[:-TAG_BYTES], ciphertext[-TAG_BYTES:]
    if not hmac.compare_digest(tag, _tag(key, nonce, body)):
        raise AuthenticationError("tag mismatch")
    ks = _keystream(key, nonce, len(body))
    return bytes(a ^ b for a, b in zip(body, ks))


def try_decrypt(key: bytes, nonce: bytes, ciphertext: bytes) -> Optional[bytes]:
    try:
        return sym_decrypt(key, nonce, ciphertext)
    except AuthenticationError:
        return None


# -- handshake --------------------------------------------------------------


class Behaviour(str, Enum):
    HONEST = "honest"
    RANDOM_KEY = "random_key"  # substitutes an unrelated session key
    UNIT_PUBLIC = "unit_public"  # advertises public value 1


@dataclass(frozen=True)
class Party:
    node: int
    behaviour: Behaviour = Behaviour.HONEST


class HandshakeStatus(str, Enum):
    VERIFIED = "Verified"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class Handshake:
    status: HandshakeStatus
    session_key: Optional[bytes]
    # (sender, payload bytes) for each message on the air
    messages: tuple[tuple[int, int], ...]
    reason: str = ""

    @property
    def verified(self) -> bool:
        return self.status is HandshakeStatus.VERIFIED


CHALLENGE_BYTES = 16


def verify_handshake(
    initiator: Party, responder: Party, params: DhParams, rng: random.Random
) -> Handshake:
    """Ephemeral DH followed by a two-way encrypted challenge.

    Message 1 and 2 carry the public values, 3 the initiator's challenge, 4 the
    responder's echo of it under a fresh nonce.
    """
    mine = dh_keypair(params, rng)
    theirs = dh_keypair(params, rng)
    their_public = 1 if responder.behaviour is Behaviour.UNIT_PUBLIC else theirs.public
    w = params.width
    messages = [(initiator.node, w), (responder.node, w)]

    shared_i = dh_shared(mine, their_public, params)
    shared_r = dh_shared(theirs, mine.public, params)
    if shared_i in (0, 1):
        return Handshake(HandshakeStatus.REJECTED, None, tuple(messages), "degenerate shared secret")

    key_i = session_key(shared_i, params)
    key_r = session_key(shared_r, params)
    if responder.behaviour is Behaviour.RANDOM_KEY:
        key_r = rng.randbytes(KEY_BYTES)

    challenge = rng.randbytes(CHALLENGE_BYTES)
    n1, n2 = rng.randbytes(NONCE_BYTES), rng.randbytes(NONCE_BYTES)
    c1 = sym_encrypt(key_i, n1, challenge)
    messages.append((initiator.node, NONCE_BYTES + len(c1)))
    got = try_decrypt(key_r, n1, c1)
    if got is None:
        return Handshake(HandshakeStatus.REJECTED, None, tuple(messages), "responder failed challenge")
    c2 = sym_encrypt(key_r, n2, got)
    messages.append((responder.node, NONCE_BYTES + len(c2)))
    echoed = try_decrypt(key_i, n2, c2)
    if echoed != challenge:
        return Handshake(HandshakeStatus.REJECTED, None, tuple(messages), "echo mismatch")
    return Handshake(HandshakeStatus.VERIFIED, key_i, tuple(messages))
