"""Signatures, recipient sealing and hashing.

Ed25519 for signatures; sealing is X25519 ECDH + HKDF-SHA256 + ChaCha20-Poly1305
with a fresh ephemeral key per box, so opening fails loudly on any tamper.
Keys come from 32-byte seeds so a whole scenario can be rebuilt from one
master seed.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from enum import Enum

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

SEED_LEN = 32
DIGEST_LEN = 32
SIGNATURE_LEN = 64
_EPH_LEN = 32
_NONCE = b"\x00" * 12  # ephemeral key is single-use, so a fixed nonce is safe
_RAW = serialization.Encoding.Raw, serialization.PublicFormat.Raw


class CryptoError(Exception):
    pass


class InvalidSeed(CryptoError):
    pass


class InvalidKey(CryptoError):
    pass


class OpenFailure(CryptoError):
    pass


class KeyKind(str, Enum):
    SIGNING = "Signing"
    SEALING = "Sealing"


@dataclass(frozen=True)
class KeyPair:
    public_part: bytes
    secret_part: bytes
    kind: KeyKind

    def __repr__(self):
        return f"KeyPair({self.kind.value}, public={self.public_part.hex()[:16]}...)"


@dataclass(frozen=True)
class Signature:
    bytes: bytes
    signer_id: str = ""

    def hex(self) -> str:
        return self.bytes.hex()


@dataclass(frozen=True)
class SealedBox:
    ciphertext: bytes

    def hex(self) -> str:
        return self.ciphertext.hex()


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


ZERO_DIGEST = b"\x00" * DIGEST_LEN


def derive_seed(*parts: bytes | str | int) -> bytes:
    """Deterministic 32-byte seed from labelled parts."""
    h = hashlib.sha256(b"uavtrust-seed")
    for p in parts:
        if isinstance(p, int):
            p = p.to_bytes(16, "big", signed=True)
        elif isinstance(p, str):
            p = p.encode()
        h.update(len(p).to_bytes(4, "big"))
        h.update(p)
    return h.digest()


def keygen(seed: bytes, kind: KeyKind) -> KeyPair:
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_LEN:
        raise InvalidSeed(f"seed must be exactly {SEED_LEN} bytes")
    seed = bytes(seed)
    if kind is KeyKind.SIGNING:
        pub = Ed25519PrivateKey.from_private_bytes(seed).public_key().public_bytes(*_RAW)
    elif kind is KeyKind.SEALING:
        pub = X25519PrivateKey.from_private_bytes(seed).public_key().public_bytes(*_RAW)
    else:
        raise ValueError(f"unknown key kind {kind!r}")
    return KeyPair(public_part=pub, secret_part=seed, kind=kind)


def public_from_secret(secret: bytes, kind: KeyKind) -> bytes:
    return keygen(secret, kind).public_part


# Parsed key objects are cached; scenarios reuse a small set of keys heavily.
_sign_keys: dict[bytes, Ed25519PrivateKey] = {}
_verify_keys: dict[bytes, Ed25519PublicKey] = {}
_open_keys: dict[bytes, X25519PrivateKey] = {}
_seal_keys: dict[bytes, X25519PublicKey] = {}


def _load(cache, raw, loader):
    key = cache.get(raw)
    if key is None:
        if not isinstance(raw, (bytes, bytearray)) or len(raw) != 32:
            raise InvalidKey("key material must be 32 bytes")
        try:
            key = loader(bytes(raw))
        except ValueError as exc:
            raise InvalidKey(str(exc)) from None
        cache[bytes(raw)] = key
    return key


def _secret_of(key: KeyPair | bytes, want: KeyKind) -> bytes:
    if isinstance(key, KeyPair):
        if key.kind is not want:
            raise InvalidKey(f"expected a {want.value} key, got {key.kind.value}")
        return key.secret_part
    return key


def _public_of(key: KeyPair | bytes, want: KeyKind) -> bytes:
    if isinstance(key, KeyPair):
        if key.kind is not want:
            raise InvalidKey(f"expected a {want.value} key, got {key.kind.value}")
        return key.public_part
    return key


def sign(secret: KeyPair | bytes, message: bytes, signer_id: str = "") -> Signature:
    sk = _load(_sign_keys, _secret_of(secret, KeyKind.SIGNING), Ed25519PrivateKey.from_private_bytes)
    return Signature(sk.sign(message), signer_id)


def verify(public: KeyPair | bytes, message: bytes, sig: Signature | bytes) -> bool:
    pk = _load(_verify_keys, _public_of(public, KeyKind.SIGNING), Ed25519PublicKey.from_public_bytes)
    raw = sig.bytes if isinstance(sig, Signature) else sig
    if len(raw) != SIGNATURE_LEN:
        return False
    try:
        pk.verify(raw, message)
    except InvalidSignature:
        return False
    return True


def _box_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(), length=32, salt=None,
        info=b"uavtrust-seal" + eph_pub + recipient_pub,
    ).derive(shared)


def seal(public: KeyPair | bytes, plaintext: bytes, ephemeral_seed: bytes | None = None) -> SealedBox:
    """Encrypt ``plaintext`` so only the holder of the matching secret can open it.

    ``ephemeral_seed`` makes the box reproducible (simulation use); omit it
    for a random ephemeral key.
    """
    recipient_raw = _public_of(public, KeyKind.SEALING)
    recipient = _load(_seal_keys, recipient_raw, X25519PublicKey.from_public_bytes)
    eph_secret = ephemeral_seed if ephemeral_seed is not None else os.urandom(_EPH_LEN)
    if len(eph_secret) != _EPH_LEN:
        raise InvalidSeed("ephemeral seed must be 32 bytes")
    eph = X25519PrivateKey.from_private_bytes(eph_secret)
    eph_pub = eph.public_key().public_bytes(*_RAW)
    key = _box_key(eph.exchange(recipient), eph_pub, bytes(recipient_raw))
    body = ChaCha20Poly1305(key).encrypt(_NONCE, plaintext, eph_pub + bytes(recipient_raw))
    return SealedBox(eph_pub + body)


def open_box(secret: KeyPair | bytes, box: SealedBox | bytes) -> bytes:
    raw = box.ciphertext if isinstance(box, SealedBox) else box
    if len(raw) < _EPH_LEN + 16:
        raise OpenFailure("sealed box too short")
    sk = _load(_open_keys, _secret_of(secret, KeyKind.SEALING), X25519PrivateKey.from_private_bytes)
    my_pub = sk.public_key().public_bytes(*_RAW)
    eph_pub, body = raw[:_EPH_LEN], raw[_EPH_LEN:]
    try:
        shared = sk.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _box_key(shared, eph_pub, my_pub)
        return ChaCha20Poly1305(key).decrypt(_NONCE, body, eph_pub + my_pub)
    except (InvalidTag, ValueError):
        raise OpenFailure("sealed box rejected") from None


# ``open`` is the contract name; ``open_box`` avoids shadowing the builtin at call sites.
open = open_box  # noqa: A001
