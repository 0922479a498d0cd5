"""Extended resource IDs and the capsules they carry.

Wire form::

    <resource-id> [ '#' base64url( header || TLV* ) ]

header is three bytes: direction (0x01 north, 0x02 south), version (1) and a
flag byte. Each TLV is one type byte, a big-endian u16 length and the value.
A zero-length blueprint or status TLV means "unchanged since the previous
capsule on this pathway" and is re-hydrated from an :class:`ElisionContext`.

With the joint-encoding flag the TLV stream is compressed (and optionally
keyed) as a whole and follows the header directly; otherwise each segment
value is transformed on its own.
"""

from __future__ import annotations

import base64
import binascii
import enum
import hashlib
import hmac
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

from .errors import (
    CorruptPayload,
    ElisionWithoutContext,
    IdContainsDelimiter,
    LengthOverflow,
    MalformedAppendix,
    SegmentTooLarge,
    TransformMismatch,
    TruncatedStream,
    UnknownTlvType,
    UnknownVersion,
)
from .scheme import Tweak

DELIMITER = "#"
VERSION = 1
MAX_TLV_LENGTH = 0xFFFF
ZLIB_LEVEL = 9
TAG_SIZE = 16


class Direction(enum.IntEnum):
    NORTHWISE = 0x01
    SOUTHWISE = 0x02


class Flag(enum.IntFlag):
    NONE = 0
    BLUEPRINT_COMPRESSED = 0x01
    STATUS_COMPRESSED = 0x02
    ENCRYPTED = 0x04
    JOINT_ENCODING = 0x08


class TlvType(enum.IntEnum):
    BLUEPRINT = 0x10
    STATUS = 0x11
    TWEAK = 0x20


# -- TLV ---------------------------------------------------------------------


class Tlv(NamedTuple):
    type: TlvType
    value: bytes

    @property
    def elided(self) -> bool:
        return len(self.value) == 0


def envelope_tlv(typ, value: bytes) -> bytes:
    """``typ`` (1 byte) || len(value) (u16 BE) || value."""
    try:
        typ = TlvType(typ)
    except ValueError:
        raise UnknownTlvType(f"unknown TLV type 0x{int(typ):02x}") from None
    if len(value) > MAX_TLV_LENGTH:
        raise LengthOverflow(f"TLV value of {len(value)} bytes exceeds {MAX_TLV_LENGTH}")
    return struct.pack(">BH", typ, len(value)) + bytes(value)


def parse_tlv_stream(data: bytes) -> list[Tlv]:
    """Split ``data`` into TLVs; the whole stream must be consumed."""
    out = []
    pos, end = 0, len(data)
    while pos < end:
        if end - pos < 3:
            raise TruncatedStream(f"{end - pos} stray byte(s) at offset {pos}")
        typ, length = struct.unpack_from(">BH", data, pos)
        try:
            typ = TlvType(typ)
        except ValueError:
            raise UnknownTlvType(f"unknown TLV type 0x{typ:02x} at offset {pos}") from None
        pos += 3
        if end - pos < length:
            raise TruncatedStream(
                f"TLV at offset {pos - 3} declares {length} bytes, {end - pos} remain"
            )
        out.append(Tlv(typ, bytes(data[pos:pos + length])))
        pos += length
    return out


# -- payload transforms ------------------------------------------------------


class TransformKind(enum.Enum):
    IDENTITY = "identity"
    COMPRESS = "compress"
    KEYED = "keyed"


@dataclass(frozen=True)
class PayloadTransform:
    kind: TransformKind
    key: bytes = b""

    def __post_init__(self):
        if self.kind is TransformKind.KEYED and not self.key:
            raise ValueError("keyed transform needs a non-empty key")

    def apply(self, data: bytes) -> bytes:
        if self.kind is TransformKind.COMPRESS:
            return zlib.compress(data, ZLIB_LEVEL)
        if self.kind is TransformKind.KEYED:
            return _keyed_seal(self.key, data)
        return bytes(data)

    def invert(self, data: bytes) -> bytes:
        if self.kind is TransformKind.COMPRESS:
            try:
                d = zlib.decompressobj()
                out = d.decompress(data) + d.flush()
            except zlib.error as exc:
                raise CorruptPayload(f"inflate failed: {exc}") from None
            if not d.eof or d.unused_data:
                raise CorruptPayload("compressed payload is truncated or has trailing bytes")
            return out
        if self.kind is TransformKind.KEYED:
            return _keyed_open(self.key, data)
        return bytes(data)


IDENTITY = PayloadTransform(TransformKind.IDENTITY)
COMPRESS = PayloadTransform(TransformKind.COMPRESS)


def keyed(key: bytes) -> PayloadTransform:
    return PayloadTransform(TransformKind.KEYED, bytes(key))


def _keystream(key: bytes, n: int) -> bytes:
    blocks = []
    for counter in range((n + 31) // 32):
        blocks.append(hashlib.sha256(key + counter.to_bytes(8, "big")).digest())
    return b"".join(blocks)[:n]


# Not real cryptography: an XOR keystream plus a truncated HMAC tag, enough
# that a wrong key is always detected instead of yielding garbage.
def _keyed_seal(key: bytes, data: bytes) -> bytes:
    body = bytes(a ^ b for a, b in zip(data, _keystream(key, len(data))))
    tag = hmac.new(key, body, hashlib.sha256).digest()[:TAG_SIZE]
    return tag + body


def _keyed_open(key: bytes, data: bytes) -> bytes:
    if len(data) < TAG_SIZE:
        raise CorruptPayload("keyed payload shorter than its tag")
    tag, body = data[:TAG_SIZE], data[TAG_SIZE:]
    expected = hmac.new(key, body, hashlib.sha256).digest()[:TAG_SIZE]
    if not hmac.compare_digest(tag, expected):
        raise CorruptPayload("keyed payload failed authentication (wrong key?)")
    return bytes(a ^ b for a, b in zip(body, _keystream(key, len(body))))


def apply_transforms(payload: bytes, chain: Sequence[PayloadTransform]) -> bytes:
    for t in chain:
        payload = t.apply(payload)
    return payload


def invert_transforms(payload: bytes, chain: Sequence[PayloadTransform]) -> bytes:
    for t in reversed(chain):
        payload = t.invert(payload)
    return payload


@dataclass(frozen=True)
class CodecConfig:
    """Which transforms the encoder applies.

    Joint encoding always compresses the concatenated stream; the per-segment
    compression switches are ignored in that mode.
    """

    compress_blueprint: bool = True
    compress_status: bool = True
    key: bytes | None = None
    joint: bool = False

    def __post_init__(self):
        if self.key is not None and not self.key:
            raise ValueError("key must be non-empty or None")

    def flags(self) -> Flag:
        f = Flag.NONE
        if self.key is not None:
            f |= Flag.ENCRYPTED
        if self.joint:
            return f | Flag.JOINT_ENCODING
        if self.compress_blueprint:
            f |= Flag.BLUEPRINT_COMPRESSED
        if self.compress_status:
            f |= Flag.STATUS_COMPRESSED
        return f


PLAIN = CodecConfig(compress_blueprint=False, compress_status=False)


def _chain(compressed: bool, flags: Flag, key: bytes | None) -> list[PayloadTransform]:
    chain = [COMPRESS] if compressed else []
    if flags & Flag.ENCRYPTED:
        if key is None:
            raise TransformMismatch("capsule is flagged encrypted but no key was supplied")
        chain.append(keyed(key))
    return chain or [IDENTITY]


# -- capsule model -----------------------------------------------------------


@dataclass(frozen=True)
class StatusRecord:
    """Parameter name -> scalar value, serialized as key-sorted JSON."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.entries.items():
            if not isinstance(k, str):
                raise TypeError("status keys must be strings")
            if not isinstance(v, (str, int, float, bool)) and v is not None:
                raise TypeError(f"status value for {k!r} is not a scalar")
            if isinstance(v, float) and not math.isfinite(v):
                raise TypeError(f"status value for {k!r} is not finite")
        object.__setattr__(self, "entries", dict(sorted(self.entries.items())))

    def __hash__(self):
        return hash(tuple(self.entries.items()))

    def to_bytes(self) -> bytes:
        return json.dumps(
            self.entries, sort_keys=True, separators=(",", ":"), allow_nan=False
        ).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "StatusRecord":
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedAppendix(f"status segment is not JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise MalformedAppendix("status segment must be a JSON object")
        try:
            return cls(doc)
        except TypeError as exc:
            raise MalformedAppendix(str(exc)) from None


@dataclass(frozen=True)
class Capsule:
    direction: Direction
    blueprint: bytes | None = None
    status: StatusRecord | None = None
    tweaks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "tweaks", tuple(self.tweaks))
        if self.blueprint is not None:
            object.__setattr__(self, "blueprint", bytes(self.blueprint))
            if not self.blueprint:
                raise ValueError("a present blueprint segment must be non-empty")
        if self.direction is Direction.NORTHWISE and self.tweaks:
            raise ValueError("northwise capsules carry no tweaks")
        if self.direction is Direction.SOUTHWISE and self.blueprint is not None:
            raise ValueError("southwise capsules carry no blueprint segment")
        if not all(isinstance(t, Tweak) for t in self.tweaks):
            raise TypeError("tweaks must be Tweak instances")

    @property
    def empty(self) -> bool:
        return self.blueprint is None and self.status is None and not self.tweaks


def northwise(blueprint: bytes | str | None = None, status=None) -> Capsule:
    if isinstance(blueprint, str):
        blueprint = blueprint.encode("utf-8")
    if isinstance(status, dict):
        status = StatusRecord(status)
    return Capsule(Direction.NORTHWISE, blueprint=blueprint, status=status)


def southwise(tweaks=(), status=None) -> Capsule:
    if isinstance(status, dict):
        status = StatusRecord(status)
    return Capsule(Direction.SOUTHWISE, status=status, tweaks=tuple(tweaks))


def check_resource_id(text: str) -> str:
    if not isinstance(text, str) or not text:
        raise ValueError("resource IDs are non-empty strings")
    if DELIMITER in text:
        raise IdContainsDelimiter(f"resource ID {text!r} contains {DELIMITER!r}")
    return text


@dataclass(frozen=True)
class ExtendedResourceId:
    id: str
    appendix: Capsule | None = None

    def __post_init__(self):
        check_resource_id(self.id)
        # an empty capsule travels as "no appendix"
        if self.appendix is not None and self.appendix.empty:
            object.__setattr__(self, "appendix", None)


@dataclass(frozen=True)
class ElisionContext:
    """Last segment values seen on one (sender, receiver) pathway."""

    blueprint: bytes | None = None
    status: bytes | None = None

    def advance(self, capsule: Capsule | None) -> "ElisionContext":
        if capsule is None:
            return self
        ctx = self
        if capsule.blueprint is not None:
            ctx = replace(ctx, blueprint=capsule.blueprint)
        if capsule.status is not None:
            ctx = replace(ctx, status=capsule.status.to_bytes())
        return ctx


EMPTY_CONTEXT = ElisionContext()


# -- encode / decode ---------------------------------------------------------


def _segment(value: bytes, chain) -> bytes:
    out = apply_transforms(value, chain)
    if len(out) > MAX_TLV_LENGTH:
        raise SegmentTooLarge(f"segment of {len(out)} bytes exceeds {MAX_TLV_LENGTH}")
    if not out:
        raise SegmentTooLarge("present segment encodes to zero bytes")
    return out


def encode_capsule(
    capsule: Capsule,
    ctx: ElisionContext = EMPTY_CONTEXT,
    config: CodecConfig = CodecConfig(),
) -> bytes:
    """Raw ``header || TLV*`` bytes for ``capsule``."""
    flags = config.flags()
    joint = bool(flags & Flag.JOINT_ENCODING)
    key = config.key
    parts = []
    if capsule.blueprint is not None:
        if ctx.blueprint == capsule.blueprint:
            parts.append(envelope_tlv(TlvType.BLUEPRINT, b""))
        else:
            chain = [IDENTITY] if joint else _chain(config.compress_blueprint, flags, key)
            parts.append(_tlv(TlvType.BLUEPRINT, _segment(capsule.blueprint, chain)))
    if capsule.status is not None:
        raw = capsule.status.to_bytes()
        if ctx.status == raw:
            parts.append(envelope_tlv(TlvType.STATUS, b""))
        else:
            chain = [IDENTITY] if joint else _chain(config.compress_status, flags, key)
            parts.append(_tlv(TlvType.STATUS, _segment(raw, chain)))
    for tweak in capsule.tweaks:
        chain = [IDENTITY] if joint else _chain(False, flags, key)
        parts.append(_tlv(TlvType.TWEAK, _segment(tweak.to_bytes(), chain)))
    body = b"".join(parts)
    if joint:
        body = apply_transforms(body, _chain(True, flags, key))
    return bytes([capsule.direction, VERSION, flags]) + body


def _tlv(typ: TlvType, value: bytes) -> bytes:
    try:
        return envelope_tlv(typ, value)
    except LengthOverflow as exc:
        raise SegmentTooLarge(str(exc)) from None


def decode_capsule(
    data: bytes,
    ctx: ElisionContext = EMPTY_CONTEXT,
    key: bytes | None = None,
) -> Capsule:
    if len(data) < 3:
        raise MalformedAppendix("capsule shorter than its 3-byte header")
    direction, version, flags = data[0], data[1], data[2]
    if version != VERSION:
        raise UnknownVersion(f"capsule version {version} (expected {VERSION})")
    try:
        direction = Direction(direction)
    except ValueError:
        raise MalformedAppendix(f"unknown capsule direction 0x{direction:02x}") from None
    if flags & ~int(Flag.BLUEPRINT_COMPRESSED | Flag.STATUS_COMPRESSED | Flag.ENCRYPTED | Flag.JOINT_ENCODING):
        raise MalformedAppendix(f"unknown capsule flags 0x{flags:02x}")
    flags = Flag(flags)
    joint = bool(flags & Flag.JOINT_ENCODING)
    if joint and flags & (Flag.BLUEPRINT_COMPRESSED | Flag.STATUS_COMPRESSED):
        raise MalformedAppendix("joint encoding excludes per-segment compression flags")
    body = data[3:]
    if joint:
        body = invert_transforms(body, _chain(True, flags, key))
    blueprint = status = None
    seen = set()
    tweaks = []
    for tlv in parse_tlv_stream(body):
        if tlv.type is not TlvType.TWEAK:
            if tlv.type in seen:
                raise MalformedAppendix(f"duplicate {tlv.type.name.lower()} segment")
            seen.add(tlv.type)
        if tlv.type is TlvType.BLUEPRINT:
            if tlv.elided:
                if ctx.blueprint is None:
                    raise ElisionWithoutContext("blueprint elided but no prior blueprint on this pathway")
                blueprint = ctx.blueprint
            else:
                chain = [IDENTITY] if joint else _chain(bool(flags & Flag.BLUEPRINT_COMPRESSED), flags, key)
                blueprint = invert_transforms(tlv.value, chain)
        elif tlv.type is TlvType.STATUS:
            if tlv.elided:
                if ctx.status is None:
                    raise ElisionWithoutContext("status elided but no prior status on this pathway")
                raw = ctx.status
            else:
                chain = [IDENTITY] if joint else _chain(bool(flags & Flag.STATUS_COMPRESSED), flags, key)
                raw = invert_transforms(tlv.value, chain)
            status = StatusRecord.from_bytes(raw)
        else:
            if tlv.elided:
                raise MalformedAppendix("tweak TLVs cannot be elided")
            chain = [IDENTITY] if joint else _chain(False, flags, key)
            raw = invert_transforms(tlv.value, chain)
            try:
                tweaks.append(Tweak.from_bytes(raw))
            except (UnicodeDecodeError, ValueError, TypeError, AttributeError) as exc:
                raise MalformedAppendix(f"bad tweak payload: {exc}") from None
    try:
        return Capsule(direction, blueprint=blueprint, status=status, tweaks=tuple(tweaks))
    except (ValueError, TypeError) as exc:
        raise MalformedAppendix(str(exc)) from None


def encode_extended_id(
    xid: ExtendedResourceId,
    ctx: ElisionContext = EMPTY_CONTEXT,
    config: CodecConfig = CodecConfig(),
) -> bytes:
    """Serialize ``xid``; segments equal to ``ctx`` are sent elided."""
    head = check_resource_id(xid.id).encode("utf-8")
    if xid.appendix is None:
        return head
    raw = encode_capsule(xid.appendix, ctx, config)
    return head + DELIMITER.encode() + base64.urlsafe_b64encode(raw).rstrip(b"=")


def split_extended_id(data: bytes) -> tuple[str, bytes | None]:
    """Name and still-encoded appendix; this is all a relay ever looks at."""
    head, sep, tail = bytes(data).partition(DELIMITER.encode())
    try:
        name = head.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedAppendix(f"resource ID is not UTF-8: {exc}") from None
    return name, (tail if sep else None)


def decode_extended_id(
    data: bytes,
    ctx: ElisionContext = EMPTY_CONTEXT,
    key: bytes | None = None,
) -> ExtendedResourceId:
    name, tail = split_extended_id(data)
    if not name:
        raise MalformedAppendix("empty resource ID")
    if tail is None:
        return ExtendedResourceId(name)
    if len(tail) % 4 == 1:
        raise MalformedAppendix("appendix is not valid base64url")
    try:
        raw = base64.urlsafe_b64decode(tail + b"=" * (-len(tail) % 4))
    except (binascii.Error, ValueError) as exc:
        raise MalformedAppendix(f"appendix is not valid base64url: {exc}") from None
    if base64.urlsafe_b64encode(raw).rstrip(b"=") != tail:
        raise MalformedAppendix("appendix is not canonical base64url")
    capsule = decode_capsule(raw, ctx, key)
    if capsule.empty:
        raise MalformedAppendix("appendix carries an empty capsule")
    return ExtendedResourceId(name, capsule)
