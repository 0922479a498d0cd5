import base64
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsvtp import capsule as cap
from nsvtp.errors import (
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
from nsvtp.scheme import Tweak

from conftest import PROPERTY_CASES

# -- strategies --------------------------------------------------------------

ids = st.text(
    st.characters(blacklist_characters="#", blacklist_categories=("Cs",)), min_size=1, max_size=20
)
finite = st.floats(allow_nan=False, allow_infinity=False)
scalars = st.one_of(st.none(), st.booleans(), st.integers(-(2**40), 2**40), finite, st.text(max_size=10))
statuses = st.dictionaries(st.text(max_size=8), scalars, max_size=5).map(cap.StatusRecord)
tweaks = st.builds(
    Tweak,
    st.sampled_from(["dvfs", "cache", "net"]),
    st.sampled_from(["set_freq", "resize"]),
    st.dictionaries(st.sampled_from(["freq_step", "latency", "ways"]), finite, max_size=3),
)
keys = st.one_of(st.none(), st.binary(min_size=1, max_size=32))
configs = st.builds(cap.CodecConfig, st.booleans(), st.booleans(), keys, st.booleans())


@st.composite
def capsules(draw):
    if draw(st.booleans()):
        bp = draw(st.one_of(st.none(), st.binary(min_size=1, max_size=300)))
        return cap.northwise(bp, draw(st.one_of(st.none(), statuses)))
    return cap.southwise(draw(st.lists(tweaks, max_size=3)), draw(st.one_of(st.none(), statuses)))


# -- round trip and elision --------------------------------------------------


@settings(max_examples=PROPERTY_CASES)
@given(ids, capsules(), configs)
def test_round_trip(rid, capsule, config):
    xid = cap.ExtendedResourceId(rid, capsule)
    data = cap.encode_extended_id(xid, config=config)
    assert cap.decode_extended_id(data, key=config.key) == xid


@settings(max_examples=PROPERTY_CASES)
@given(ids, st.lists(capsules(), min_size=1, max_size=4), configs)
def test_elision_sound_over_a_pathway(rid, sequence, config):
    """Sender and receiver contexts advanced in lockstep always re-hydrate."""
    send = recv = cap.EMPTY_CONTEXT
    for capsule in sequence:
        xid = cap.ExtendedResourceId(rid, capsule)
        data = cap.encode_extended_id(xid, send, config)
        got = cap.decode_extended_id(data, recv, config.key)
        assert got == xid
        send, recv = send.advance(xid.appendix), recv.advance(got.appendix)
        assert send == recv


@given(st.binary(min_size=1, max_size=200), statuses)
def test_repeat_segment_is_elided_and_shorter(bp, status):
    c = cap.northwise(bp, status)
    first = cap.encode_capsule(c, config=cap.PLAIN)
    ctx = cap.EMPTY_CONTEXT.advance(c)
    again = cap.encode_capsule(c, ctx, cap.PLAIN)
    tlvs = cap.parse_tlv_stream(again[3:])
    assert all(t.elided for t in tlvs)
    assert len(again) == 3 + 3 * len(tlvs) <= len(first)
    assert cap.decode_capsule(again, ctx) == c


def test_elided_segment_without_context():
    c = cap.northwise(b"bp")
    data = cap.encode_capsule(c, cap.EMPTY_CONTEXT.advance(c))
    with pytest.raises(ElisionWithoutContext):
        cap.decode_capsule(data)


def test_no_capsule_round_trips_to_bare_id():
    assert cap.encode_extended_id(cap.ExtendedResourceId("vm-7")) == b"vm-7"
    assert cap.decode_extended_id(b"vm-7") == cap.ExtendedResourceId("vm-7")
    # an empty capsule is the same thing as none
    assert cap.ExtendedResourceId("vm-7", cap.northwise()).appendix is None


def test_id_with_delimiter_rejected():
    with pytest.raises(IdContainsDelimiter):
        cap.ExtendedResourceId("a#b")


def test_wire_form_is_unpadded_base64url():
    c = cap.northwise(b"abc")
    data = cap.encode_extended_id(cap.ExtendedResourceId("core", c), config=cap.PLAIN)
    name, tail = data.split(b"#")
    assert name == b"core" and b"=" not in tail
    raw = base64.urlsafe_b64decode(tail + b"=" * (-len(tail) % 4))
    assert raw == bytes([0x01, 0x01, 0x00, 0x10, 0x00, 0x03]) + b"abc"


@pytest.mark.parametrize("tail", [b"A", b"AQE!", b"AQEAEAADYWJk="])
def test_bad_base64_rejected(tail):
    with pytest.raises(MalformedAppendix):
        cap.decode_extended_id(b"core#" + tail)


# -- TLV accounting ----------------------------------------------------------


def test_tlv_example():
    assert cap.envelope_tlv(0x10, b"abc") == b"\x10\x00\x03abc"
    assert cap.parse_tlv_stream(b"\x10\x00\x03abc") == [cap.Tlv(cap.TlvType.BLUEPRINT, b"abc")]


tlv_lists = st.lists(
    st.tuples(st.sampled_from(list(cap.TlvType)), st.binary(max_size=80)), max_size=6
)


@settings(max_examples=PROPERTY_CASES)
@given(tlv_lists)
def test_tlv_length_accounting(items):
    stream = b"".join(cap.envelope_tlv(t, v) for t, v in items)
    assert len(stream) == sum(3 + len(v) for _, v in items)
    assert cap.parse_tlv_stream(stream) == [cap.Tlv(t, v) for t, v in items]


@settings(max_examples=PROPERTY_CASES)
@given(tlv_lists.filter(lambda xs: xs), st.data())
def test_truncation_rejected(items, data):
    stream = b"".join(cap.envelope_tlv(t, v) for t, v in items)
    boundaries = set()
    pos = 0
    for _, v in items:
        pos += 3 + len(v)
        boundaries.add(pos)
    cut = data.draw(st.integers(1, len(stream) - 1).filter(lambda n: n not in boundaries))
    with pytest.raises(TruncatedStream):
        cap.parse_tlv_stream(stream[:cut])


def test_unknown_tlv_type():
    with pytest.raises(UnknownTlvType):
        cap.parse_tlv_stream(b"\x42\x00\x00")
    with pytest.raises(UnknownTlvType):
        cap.envelope_tlv(0x42, b"")


def test_length_overflow():
    with pytest.raises(LengthOverflow):
        cap.envelope_tlv(0x10, bytes(0x10000))
    assert len(cap.envelope_tlv(0x10, bytes(0xFFFF))) == 0xFFFF + 3


def test_segment_too_large_after_transforms():
    noise = struct.pack(">" + "Q" * 9000, *range(0, 9000 * 7919, 7919))
    with pytest.raises(SegmentTooLarge):
        cap.encode_capsule(cap.northwise(noise * 2), config=cap.PLAIN)


def test_header_checks():
    good = cap.encode_capsule(cap.northwise(b"x"))
    with pytest.raises(UnknownVersion):
        cap.decode_capsule(good[:1] + b"\x02" + good[2:])
    with pytest.raises(MalformedAppendix):
        cap.decode_capsule(b"\x03" + good[1:])
    with pytest.raises(MalformedAppendix):
        cap.decode_capsule(good[:2] + b"\x80" + good[3:])
    with pytest.raises(MalformedAppendix):
        cap.decode_capsule(good[:2])


def test_direction_rules():
    with pytest.raises(ValueError):
        cap.Capsule(cap.Direction.SOUTHWISE, blueprint=b"x")
    with pytest.raises(ValueError):
        cap.Capsule(cap.Direction.NORTHWISE, tweaks=[Tweak("a", "b", {})])


# -- transforms --------------------------------------------------------------


@given(st.binary(max_size=500), st.binary(min_size=1, max_size=32))
def test_transforms_invert(payload, key):
    for chain in ([cap.IDENTITY], [cap.COMPRESS], [cap.keyed(key)], [cap.COMPRESS, cap.keyed(key)]):
        assert cap.invert_transforms(cap.apply_transforms(payload, chain), chain) == payload


def test_wrong_key_is_corrupt():
    data = cap.encode_capsule(cap.northwise(b"secret"), config=cap.CodecConfig(key=b"k1"))
    with pytest.raises(CorruptPayload):
        cap.decode_capsule(data, key=b"k2")
    with pytest.raises(TransformMismatch):
        cap.decode_capsule(data)


def test_tampered_ciphertext_is_corrupt():
    data = bytearray(cap.encode_capsule(cap.northwise(b"secret"), config=cap.CodecConfig(key=b"k")))
    data[-1] ^= 1
    with pytest.raises(CorruptPayload):
        cap.decode_capsule(bytes(data), key=b"k")


def test_flags_reflect_config():
    F = cap.Flag
    assert cap.PLAIN.flags() == 0
    assert cap.CodecConfig().flags() == F.BLUEPRINT_COMPRESSED | F.STATUS_COMPRESSED
    assert cap.CodecConfig(joint=True, key=b"k").flags() == F.JOINT_ENCODING | F.ENCRYPTED


def test_compression_shrinks_repetitive_blueprint():
    bp = b"param freq : {1, 2, 3};\n" * 40
    small = cap.encode_capsule(cap.northwise(bp))
    big = cap.encode_capsule(cap.northwise(bp), config=cap.PLAIN)
    assert len(small) < len(big) / 4


def test_status_rejects_non_scalars_and_nan():
    with pytest.raises(TypeError):
        cap.StatusRecord({"a": [1]})
    with pytest.raises(TypeError):
        cap.StatusRecord({"a": float("nan")})


def test_status_json_must_be_object():
    raw = bytes([1, 1, 0]) + cap.envelope_tlv(0x11, b"[1]")
    with pytest.raises(MalformedAppendix):
        cap.decode_capsule(raw)


def test_split_does_not_decode():
    data = b"vm-3#" + b"!!not-base64!!"
    assert cap.split_extended_id(data) == ("vm-3", b"!!not-base64!!")
