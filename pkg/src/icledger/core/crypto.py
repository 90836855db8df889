"""Digests and Ed25519 signatures over canonical encodings."""

from __future__ import annotations

import hashlib
from functools import lru_cache
from typing import Dict, Iterable, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .types import Digest, NodeId


def digest(data: bytes) -> Digest:
    """SHA-256 of ``data``."""
    return hashlib.sha256(data).digest()


def derive_seed(*parts: object) -> bytes:
    """Deterministic 32-byte seed from printable parts."""
    return digest("\x1f".join(str(p) for p in parts).encode("utf-8"))


def sign(key: Ed25519PrivateKey, data: bytes) -> bytes:
    return key.sign(data)


@lru_cache(maxsize=1 << 17)
def _verify_raw(public_key: bytes, data: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True


def verify_signature(public_key: bytes, data: bytes, signature: bytes) -> bool:
    # Results are cached: verification is a pure function of its inputs.
    if len(signature) != 64:
        return False
    return _verify_raw(bytes(public_key), bytes(data), bytes(signature))


class KeyRing:
    """Per-node keypairs for a permissioned network.

    Private keys are derived from ``(seed, node)`` so that a scenario's
    signatures are reproducible.  ``public_keys`` is the globally known PKI.
    """

    def __init__(self, nodes: Iterable[NodeId], seed: int | str = 0):
        self._private: Dict[NodeId, Ed25519PrivateKey] = {}
        self.public_keys: Dict[NodeId, bytes] = {}
        for node in nodes:
            key = Ed25519PrivateKey.from_private_bytes(derive_seed("node-key", seed, node))
            self._private[node] = key
            self.public_keys[node] = key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def __contains__(self, node: NodeId) -> bool:
        return node in self.public_keys

    @property
    def nodes(self):
        return sorted(self.public_keys)

    def private_key(self, node: NodeId) -> Ed25519PrivateKey:
        return self._private[node]

    def sign(self, node: NodeId, data: bytes) -> bytes:
        return sign(self._private[node], data)

    def verify(self, node: NodeId, data: bytes, signature: bytes) -> bool:
        pk = self.public_keys.get(node)
        if pk is None:
            return False
        return verify_signature(pk, data, signature)

    def public_view(self) -> "PublicKeyRing":
        return PublicKeyRing(self.public_keys)


class PublicKeyRing:
    """Verification-only view of a key ring."""

    def __init__(self, public_keys: Mapping[NodeId, bytes]):
        self.public_keys = dict(public_keys)

    def __contains__(self, node: NodeId) -> bool:
        return node in self.public_keys

    @property
    def nodes(self):
        return sorted(self.public_keys)

    def verify(self, node: NodeId, data: bytes, signature: bytes) -> bool:
        pk = self.public_keys.get(node)
        if pk is None:
            return False
        return verify_signature(pk, data, signature)
