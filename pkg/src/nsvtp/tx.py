"""Trusted eXchange: escrow for the first blueprint on a new pathway.

The southern component seals its blueprint capsule C_s under key k, then
seals (C_s, k) once more under a relay key k'. k' travels north through the
ordinary relay path while (C'_s, target layer) is deposited here. The
northern component claims with (k', its layer, k''); the exchange checks
the layer against ground truth before releasing (C_s, k), and hands k'' to
the depositor. After that the two ends talk directly.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from typing import Callable

from . import capsule as cap
from .errors import (
    AlreadyClaimed,
    CorruptPayload,
    DuplicateRelayKey,
    Expired,
    LayerMismatch,
    UnknownRelayKey,
)

DEFAULT_TTL = 60.0


def seal_blueprint(blueprint: bytes, key: bytes) -> bytes:
    """C_s: a northwise capsule holding ``blueprint``, keyed under ``key``."""
    return cap.encode_capsule(cap.northwise(blueprint), cap.EMPTY_CONTEXT, cap.CodecConfig(key=key))


def unseal_blueprint(sealed: bytes, key: bytes) -> bytes:
    capsule = cap.decode_capsule(sealed, cap.EMPTY_CONTEXT, key)
    if capsule.blueprint is None:
        raise CorruptPayload("sealed capsule carries no blueprint")
    return capsule.blueprint


def seal_bundle(capsule_bytes: bytes, key: bytes, relay_key: bytes) -> bytes:
    """C'_s: (C_s, k) packed as len(k) || k || C_s and keyed under k'."""
    packed = struct.pack(">H", len(key)) + key + capsule_bytes
    return cap.apply_transforms(packed, [cap.keyed(relay_key)])


def unseal_bundle(sealed: bytes, relay_key: bytes) -> tuple[bytes, bytes]:
    packed = cap.invert_transforms(sealed, [cap.keyed(relay_key)])
    if len(packed) < 2:
        raise CorruptPayload("bundle too short")
    (n,) = struct.unpack_from(">H", packed)
    if len(packed) < 2 + n:
        raise CorruptPayload("bundle key truncated")
    return packed[2 + n:], packed[2:2 + n]


@dataclass(frozen=True)
class Deposit:
    relay_key: bytes
    sealed: bytes
    target_layer: int
    depositor: str


@dataclass(frozen=True)
class DepositReceipt:
    relay_key_digest: str
    expires_at: float


@dataclass(frozen=True)
class ClaimRequest:
    relay_key: bytes
    claimed_layer: int
    south_key: bytes
    requester: str

    def __post_init__(self):
        if not self.relay_key or not self.south_key:
            raise ValueError("claims carry both the relay key and a southwise key")


@dataclass(frozen=True)
class ClaimResult:
    capsule: bytes
    north_key: bytes
    depositor: str


@dataclass(frozen=True)
class SouthNotice:
    """k'' forwarded to the depositor after a successful claim."""

    depositor: str
    claimant: str
    south_key: bytes


@dataclass
class _Entry:
    deposit: Deposit
    expires_at: float
    claimed: bool = False


def _digest(key: bytes) -> str:
    return hashlib.sha256(key).hexdigest()


LayerOracle = Callable[[str], int]


class TrustedExchange:
    """Single-use, TTL-bounded deposit registry.

    All registry operations hold one lock, so concurrent claims on the same
    deposit see exactly one winner.
    """

    def __init__(self, ttl: float = DEFAULT_TTL):
        self.ttl = ttl
        self._entries: dict[str, _Entry] = {}
        self._lock = threading.Lock()
        self.outbox: list[SouthNotice] = []

    def __len__(self):
        with self._lock:
            return sum(1 for e in self._entries.values() if not e.claimed)

    def deposit(self, d: Deposit, now: float = 0.0, ttl: float | None = None) -> DepositReceipt:
        digest = _digest(d.relay_key)
        ttl = self.ttl if ttl is None else ttl
        with self._lock:
            if digest in self._entries:
                raise DuplicateRelayKey("relay key already has a deposit")
            self._entries[digest] = _Entry(d, now + ttl)
        return DepositReceipt(digest, now + ttl)

    def claim(self, r: ClaimRequest, layer_oracle: LayerOracle, now: float = 0.0) -> ClaimResult:
        digest = _digest(r.relay_key)
        with self._lock:
            entry = self._entries.get(digest)
            if entry is None:
                raise UnknownRelayKey("no deposit for this relay key")
            if entry.claimed:
                raise AlreadyClaimed("deposit was already released")
            if now >= entry.expires_at:
                raise Expired(f"deposit expired at t={entry.expires_at:g}")
            actual = layer_oracle(r.requester)
            target = entry.deposit.target_layer
            if not r.claimed_layer == target == actual:
                raise LayerMismatch(
                    f"{r.requester} claims layer {r.claimed_layer}, sits at {actual}, "
                    f"deposit targets {target}"
                )
            capsule_bytes, north_key = unseal_bundle(entry.deposit.sealed, r.relay_key)
            entry.claimed = True
            self.outbox.append(SouthNotice(entry.deposit.depositor, r.requester, r.south_key))
        return ClaimResult(capsule_bytes, north_key, entry.deposit.depositor)

    def drain_notices(self) -> list[SouthNotice]:
        with self._lock:
            out, self.outbox = self.outbox, []
        return out
