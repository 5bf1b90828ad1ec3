"""Digest, signature and envelope-encryption primitives.

SHA-256 digests, Ed25519 signatures and AES-256-GCM are used throughout.
Each node owns a single 32-octet Ed25519 public key; key wrapping converts
that key to its X25519 (Montgomery) form so the same identity can receive
wrapped session keys.
"""
from __future__ import annotations

import hashlib
import os
import random
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .codec import enc, lp, split_lp, u64
from .errors import CryptoError, DecryptionError

DIGEST_SIZE = 32
KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
SIGNATURE_SIZE = 64
ZERO_DIGEST = bytes(DIGEST_SIZE)

_WRAP_INFO = b"medchain/session-key-wrap/v1"
_P = 2**255 - 19

EntropySource = Callable[[int], bytes]


def system_entropy(n: int) -> bytes:
    return os.urandom(n)


def seeded_entropy(seed: int) -> EntropySource:
    """Reproducible entropy for simulations and tests. Not for production keys."""
    rng = random.Random(seed)
    return rng.randbytes


def hash_bytes(data: bytes) -> bytes:
    """SHA-256 of ``data`` (always 32 octets)."""
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)


@dataclass(frozen=True)
class Signature:
    bytes: bytes
    signer: bytes


class Scheme(str, Enum):
    SYMMETRIC = "symmetric"
    ASYMMETRIC_WRAP = "asymmetric-wrap"


@dataclass(frozen=True)
class Ciphertext:
    scheme_tag: Scheme
    nonce: bytes
    body: bytes
    auth_tag: bytes

    def to_bytes(self) -> bytes:
        return lp(enc(self.scheme_tag.value), self.nonce, self.body, self.auth_tag)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        try:
            tag, nonce, body, auth_tag = split_lp(data)
            return cls(Scheme(tag.decode()), nonce, body, auth_tag)
        except ValueError as exc:
            raise CryptoError(f"malformed ciphertext: {exc}") from exc


@dataclass(frozen=True)
class SessionKey:
    key_id: str
    key_bytes: bytes = field(repr=False)
    epoch: int

    def to_bytes(self) -> bytes:
        return lp(enc(self.key_id), u64(self.epoch), self.key_bytes)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SessionKey":
        key_id, epoch, key_bytes = split_lp(data)
        (n,) = struct.unpack(">Q", epoch)
        return cls(key_id.decode(), key_bytes, n)


def generate_keypair(seed: Optional[bytes] = None,
                     rng: EntropySource = system_entropy) -> KeyPair:
    """Derive an Ed25519 key pair; a fixed seed always yields the same pair."""
    if seed is None:
        seed = rng(KEY_SIZE)
    if len(seed) < KEY_SIZE:
        raise CryptoError(f"seed needs at least {KEY_SIZE} octets, got {len(seed)}")
    if len(seed) != KEY_SIZE:
        seed = hash_bytes(seed)
    sk = Ed25519PrivateKey.from_private_bytes(seed)
    pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public_key=pk, private_key=seed)


def public_key_of(private_key: bytes) -> bytes:
    return generate_keypair(private_key).public_key


def _load_private(private_key: bytes) -> Ed25519PrivateKey:
    if not isinstance(private_key, (bytes, bytearray)) or len(private_key) != KEY_SIZE:
        raise CryptoError("malformed private key")
    return Ed25519PrivateKey.from_private_bytes(bytes(private_key))


def sign(private_key: bytes, message: bytes) -> Signature:
    sk = _load_private(private_key)
    pk = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return Signature(sk.sign(message), pk)


def verify(public_key: bytes, message: bytes, signature) -> bool:
    """True iff ``signature`` is a valid Ed25519 signature over exactly ``message``.

    Accepts a :class:`Signature` or raw signature octets. Malformed input of
    any kind yields False rather than an exception.
    """
    if signature is None:
        return False
    sig = signature.bytes if isinstance(signature, Signature) else signature
    try:
        if len(sig) != SIGNATURE_SIZE:
            return False
        Ed25519PublicKey.from_public_bytes(bytes(public_key)).verify(bytes(sig), bytes(message))
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


# ---------------------------------------------------------------- session keys

class KeyEpochRegistry:
    """Per-owner session-key epoch counters. Single writer."""

    def __init__(self, rng: EntropySource = system_entropy):
        self._rng = rng
        self._epochs: Dict[str, int] = {}

    def register(self, owner_id: str) -> None:
        self._epochs.setdefault(owner_id, 0)

    def __contains__(self, owner_id: str) -> bool:
        return owner_id in self._epochs

    def current_epoch(self, owner_id: str) -> int:
        if owner_id not in self._epochs:
            raise CryptoError(f"unknown key owner {owner_id!r}")
        return self._epochs[owner_id]

    def generate_session_key(self, owner_id: str) -> SessionKey:
        if owner_id not in self._epochs:
            raise CryptoError(f"unknown key owner {owner_id!r}")
        epoch = self._epochs[owner_id] + 1
        self._epochs[owner_id] = epoch
        return SessionKey(f"{owner_id}#{epoch}", self._rng(KEY_SIZE), epoch)


def _key_bytes(key) -> bytes:
    kb = key.key_bytes if isinstance(key, SessionKey) else key
    if len(kb) != KEY_SIZE:
        raise CryptoError("symmetric key must be 32 octets")
    return kb


def encrypt_sym(key, plaintext: bytes, rng: EntropySource = system_entropy) -> Ciphertext:
    nonce = rng(NONCE_SIZE)
    out = AESGCM(_key_bytes(key)).encrypt(nonce, plaintext, None)
    return Ciphertext(Scheme.SYMMETRIC, nonce, out[:-TAG_SIZE], out[-TAG_SIZE:])


def decrypt_sym(key, ct: Ciphertext) -> bytes:
    if ct.scheme_tag is not Scheme.SYMMETRIC:
        raise DecryptionError("not a symmetric ciphertext")
    try:
        return AESGCM(_key_bytes(key)).decrypt(ct.nonce, ct.body + ct.auth_tag, None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionError("authenticated decryption failed") from exc


# ---------------------------------------------------------------- key wrapping

def ed25519_pk_to_x25519(public_key: bytes) -> bytes:
    """Birational map from an Edwards point to its Montgomery u-coordinate."""
    if len(public_key) != KEY_SIZE:
        raise CryptoError("malformed public key")
    y = int.from_bytes(public_key, "little") & ((1 << 255) - 1)
    if y >= _P or (1 - y) % _P == 0:
        raise CryptoError("public key has no Montgomery form")
    u = (1 + y) * pow(1 - y, _P - 2, _P) % _P
    return u.to_bytes(KEY_SIZE, "little")


def ed25519_sk_to_x25519(private_key: bytes) -> X25519PrivateKey:
    # X25519 clamps the scalar itself, so the raw SHA-512 half is enough.
    return X25519PrivateKey.from_private_bytes(hashlib.sha512(private_key).digest()[:KEY_SIZE])


def _kek(shared: bytes, eph_pub: bytes, recipient_x: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE,
                salt=eph_pub + recipient_x, info=_WRAP_INFO).derive(shared)


def wrap_key(public_key: bytes, session_key: SessionKey,
             rng: EntropySource = system_entropy) -> Ciphertext:
    """Encrypt a session key so only the holder of ``public_key``'s private half can read it.

    Ephemeral X25519 agreement, HKDF-SHA256, then AES-256-GCM. The nonce field
    carries the ephemeral public key followed by the GCM nonce.
    """
    recipient_x = ed25519_pk_to_x25519(public_key)
    eph = X25519PrivateKey.from_private_bytes(rng(KEY_SIZE))
    eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    try:
        shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient_x))
    except ValueError as exc:
        raise CryptoError("degenerate recipient key") from exc
    gcm_nonce = rng(NONCE_SIZE)
    out = AESGCM(_kek(shared, eph_pub, recipient_x)).encrypt(
        gcm_nonce, session_key.to_bytes(), _WRAP_INFO)
    return Ciphertext(Scheme.ASYMMETRIC_WRAP, eph_pub + gcm_nonce,
                      out[:-TAG_SIZE], out[-TAG_SIZE:])


def unwrap_key(private_key: bytes, ct: Ciphertext) -> SessionKey:
    if ct.scheme_tag is not Scheme.ASYMMETRIC_WRAP or len(ct.nonce) != KEY_SIZE + NONCE_SIZE:
        raise DecryptionError("not a wrapped key")
    _load_private(private_key)
    xsk = ed25519_sk_to_x25519(private_key)
    recipient_x = xsk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    eph_pub, gcm_nonce = ct.nonce[:KEY_SIZE], ct.nonce[KEY_SIZE:]
    try:
        shared = xsk.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        plain = AESGCM(_kek(shared, eph_pub, recipient_x)).decrypt(
            gcm_nonce, ct.body + ct.auth_tag, _WRAP_INFO)
        return SessionKey.from_bytes(plain)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionError("key unwrap failed") from exc
