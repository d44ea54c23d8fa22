"""Codec tests built around hand-composed byte vectors.

The expected byte strings below are written out from the frame layout by
hand, not produced by the encoder under test, so they catch agreement bugs
between encode and decode.
"""

import random

import pytest

from blockfer.wire import (
    ACK_MAX_UNRECEIVED,
    DATAGRAM_BUDGET,
    Acknowledgement,
    Data,
    DecodeError,
    ErrorCode,
    ErrorPacket,
    WriteRequest,
    block_count_for,
    decode_packet,
    encode_packet,
)


def be(value, width):
    return value.to_bytes(width, "big")


def ref_encode(p):
    # Independent reference encoder: plain int.to_bytes concatenation,
    # no struct, no shared helpers with the implementation.
    head = b"\xeb\x01\x01"
    if isinstance(p, WriteRequest):
        info = p.info.encode("utf-8")
        return (
            head + b"\x01" + be(p.id, 8) + be(len(info), 2) + info
            + be(p.data_size, 8) + be(p.block_size, 4) + be(p.window_size, 4)
            + be(p.block_count, 4) + be(p.nonce, 8)
            + be(len(p.metadata), 2) + p.metadata
        )
    if isinstance(p, Acknowledgement):
        body = be(len(p.unreceived), 2) + b"".join(be(n, 4) for n in p.unreceived)
        return head + b"\x02" + be(p.id, 8) + be(p.window_index, 4) + body
    if isinstance(p, Data):
        return head + b"\x03" + be(p.id, 8) + be(p.block_number, 4) + be(len(p.payload), 2) + p.payload
    if isinstance(p, ErrorPacket):
        msg = p.message.encode("utf-8")
        return head + b"\x04" + be(p.id, 8) + be(int(p.code), 1) + be(len(msg), 2) + msg
    raise AssertionError(p)


def random_packet(rng):
    kind = rng.randrange(4)
    if kind == 0:
        block_size = rng.randrange(1, 1201)
        data_size = rng.randrange(0, block_size * 2**20)  # keeps block_count in u32
        return WriteRequest(
            id=rng.getrandbits(64),
            info="".join(rng.choice("abcdefgh-_.0123456789") for _ in range(rng.randrange(0, 65))),
            data_size=data_size,
            block_size=block_size,
            window_size=rng.randrange(1, ACK_MAX_UNRECEIVED + 1),
            block_count=block_count_for(data_size, block_size),
            nonce=rng.getrandbits(64),
            metadata=rng.randbytes(rng.randrange(0, 513)),
        )
    if kind == 1:
        count = rng.randrange(0, ACK_MAX_UNRECEIVED + 1)
        entries = sorted(rng.sample(range(2**20), count))
        return Acknowledgement(
            id=rng.getrandbits(64),
            window_index=rng.getrandbits(32),
            unreceived=tuple(entries),
        )
    if kind == 2:
        return Data(
            id=rng.getrandbits(64),
            block_number=rng.getrandbits(32),
            payload=rng.randbytes(rng.randrange(0, 1201)),
        )
    return ErrorPacket(
        id=rng.getrandbits(64),
        code=ErrorCode(rng.randrange(6)),
        message="".join(rng.choice("abcdefgh ") for _ in range(rng.randrange(0, 129))),
    )


# --- golden vectors ---------------------------------------------------------

def test_data_packet_golden_bytes():
    # header EB 01 01 03, id u64, block u32, length u16, payload
    expected = bytes.fromhex("eb010103" "0000000000000007" "00000000" "0004" "aaaaaaaa")
    packet = Data(id=7, block_number=0, payload=b"\xaa\xaa\xaa\xaa")
    assert encode_packet(packet) == expected
    assert decode_packet(expected) == packet


def test_ack_golden_bytes():
    empty = bytes.fromhex("eb010102" "0000000000000001" "00000000" "0000")
    assert encode_packet(Acknowledgement(id=1, window_index=0, unreceived=())) == empty
    assert decode_packet(empty) == Acknowledgement(id=1, window_index=0, unreceived=())

    listed = bytes.fromhex(
        "eb010102" "1122334455667788" "00000003" "0003"
        "00000005" "00000009" "00000104"
    )
    packet = Acknowledgement(id=0x1122334455667788, window_index=3, unreceived=(5, 9, 260))
    assert encode_packet(packet) == listed
    assert decode_packet(listed) == packet


def test_write_request_golden_bytes():
    expected = bytes.fromhex(
        "eb010101" "0102030405060708"
        "0008" "626c6f622e62696e"          # "blob.bin"
        "00000000000009c4"                  # 2500
        "000004b0"                          # 1200
        "00000050"                          # 80
        "00000003"                          # ceil(2500/1200)
        "deadbeef00c0ffee"
        "0002" "0102"
    )
    packet = WriteRequest(
        id=0x0102030405060708, info="blob.bin", data_size=2500, block_size=1200,
        window_size=80, block_count=3, nonce=0xDEADBEEF00C0FFEE, metadata=b"\x01\x02",
    )
    assert encode_packet(packet) == expected
    assert decode_packet(expected) == packet


def test_error_golden_bytes():
    expected = bytes.fromhex("eb010104" "0000000000000009" "03" "0009" + b"peer gone".hex())
    packet = ErrorPacket(id=9, code=ErrorCode.TIMEOUT, message="peer gone")
    assert encode_packet(packet) == expected
    assert decode_packet(expected) == packet


def test_error_code_values_are_stable():
    assert [c.value for c in ErrorCode] == [0, 1, 2, 3, 4, 5]
    assert ErrorCode.SIZE_EXCEEDED == 0
    assert ErrorCode.BUSY == 1
    assert ErrorCode.COLLISION == 2
    assert ErrorCode.TIMEOUT == 3
    assert ErrorCode.DECODE_FAILURE == 4
    assert ErrorCode.UNKNOWN_TRANSFER == 5


# --- properties over random packets ----------------------------------------

def test_reference_encoder_agreement():
    rng = random.Random(0xC0DEC)
    for _ in range(2000):
        p = random_packet(rng)
        assert encode_packet(p) == ref_encode(p)


def test_roundtrip_random_packets():
    rng = random.Random(0xB10C5)
    for _ in range(10_000):
        p = random_packet(rng)
        assert decode_packet(encode_packet(p)) == p


def test_accepted_bytes_reencode_identically():
    rng = random.Random(3)
    for _ in range(2000):
        raw = encode_packet(random_packet(rng))
        assert encode_packet(decode_packet(raw)) == raw


def test_size_budget():
    rng = random.Random(7)
    for _ in range(2000):
        raw = encode_packet(random_packet(rng))
        assert len(raw) <= DATAGRAM_BUDGET
    full = encode_packet(Data(id=1, block_number=2, payload=b"\x00" * 1200))
    assert len(full) == 1218
    assert len(full) <= 1232


def test_block_count_for():
    assert block_count_for(0, 1200) == 0
    assert block_count_for(1, 1200) == 1
    assert block_count_for(1200, 1200) == 1
    assert block_count_for(1201, 1200) == 2
    assert block_count_for(2500, 1200) == 3
    assert block_count_for(250 * 2**20, 1200) == 218_454
    rng = random.Random(11)
    for _ in range(2000):
        size = rng.randrange(0, 2**40)
        block = rng.randrange(1, 5000)
        # len(range(...)) is an exact integer ceil oracle
        assert block_count_for(size, block) == len(range(0, size, block))


# --- rejection paths --------------------------------------------------------

def valid_samples():
    return [
        encode_packet(WriteRequest(id=5, info="x", data_size=10, block_size=4,
                                   window_size=2, block_count=3, nonce=1, metadata=b"m")),
        encode_packet(Acknowledgement(id=5, window_index=1, unreceived=(1, 2))),
        encode_packet(Data(id=5, block_number=1, payload=b"abcd")),
        encode_packet(ErrorPacket(id=5, code=ErrorCode.BUSY, message="later")),
    ]


def test_every_truncation_rejected():
    for raw in valid_samples():
        for cut in range(len(raw)):
            with pytest.raises(DecodeError) as err:
                decode_packet(raw[:cut])
            assert err.value.reason == "truncation"


def test_bad_magic_and_version():
    raw = bytearray(valid_samples()[2])
    for index, category in [(0, "magic"), (1, "magic"), (2, "magic")]:
        broken = bytearray(raw)
        broken[index] ^= 0xFF
        with pytest.raises(DecodeError) as err:
            decode_packet(bytes(broken))
        assert err.value.reason == category


def test_unknown_type_byte():
    raw = bytearray(valid_samples()[2])
    for wrong in (0, 5, 9, 255):
        raw[3] = wrong
        with pytest.raises(DecodeError) as err:
            decode_packet(bytes(raw))
        assert err.value.reason == "invariant"


def test_trailing_garbage_rejected():
    raw = valid_samples()[1] + b"\x00"
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.reason == "invariant"


def test_unsorted_unreceived_rejected():
    for entries in [(5, 5), (9, 5), (1, 2, 2)]:
        body = len(entries).to_bytes(2, "big") + b"".join(e.to_bytes(4, "big") for e in entries)
        raw = b"\xeb\x01\x01\x02" + (5).to_bytes(8, "big") + (0).to_bytes(4, "big") + body
        with pytest.raises(DecodeError) as err:
            decode_packet(raw)
        assert err.value.reason == "invariant"


def test_write_request_block_count_mismatch_rejected():
    good = WriteRequest(id=5, info="", data_size=10, block_size=4,
                        window_size=2, block_count=3, nonce=1, metadata=b"")
    raw = bytearray(encode_packet(good))
    raw[-11] = 4  # block_count field, now inconsistent with ceil(10/4)
    with pytest.raises(DecodeError) as err:
        decode_packet(bytes(raw))
    assert err.value.reason == "invariant"


def test_zero_block_size_rejected():
    raw = (
        b"\xeb\x01\x01\x01" + (5).to_bytes(8, "big") + b"\x00\x00"
        + (10).to_bytes(8, "big") + (0).to_bytes(4, "big") + (2).to_bytes(4, "big")
        + (3).to_bytes(4, "big") + (1).to_bytes(8, "big") + b"\x00\x00"
    )
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.reason == "invariant"


def test_field_caps_rejected_on_decode():
    # info longer than 64 bytes
    info = b"a" * 65
    raw = (
        b"\xeb\x01\x01\x01" + (5).to_bytes(8, "big")
        + len(info).to_bytes(2, "big") + info
        + (10).to_bytes(8, "big") + (4).to_bytes(4, "big") + (2).to_bytes(4, "big")
        + (3).to_bytes(4, "big") + (1).to_bytes(8, "big") + b"\x00\x00"
    )
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.reason == "invariant"

    # payload longer than 1200
    payload = b"p" * 1201
    raw = (
        b"\xeb\x01\x01\x03" + (5).to_bytes(8, "big") + (0).to_bytes(4, "big")
        + len(payload).to_bytes(2, "big") + payload
    )
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.reason == "invariant"

    # unreceived list longer than the datagram budget allows
    count = ACK_MAX_UNRECEIVED + 1
    body = count.to_bytes(2, "big") + b"".join(i.to_bytes(4, "big") for i in range(count))
    raw = b"\xeb\x01\x01\x02" + (5).to_bytes(8, "big") + (0).to_bytes(4, "big") + body
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.reason == "invariant"

    # unknown error code
    raw = b"\xeb\x01\x01\x04" + (5).to_bytes(8, "big") + b"\x06" + b"\x00\x00"
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.reason == "invariant"


def test_invalid_utf8_rejected():
    bad = b"\xff\xfe"
    raw = (
        b"\xeb\x01\x01\x04" + (5).to_bytes(8, "big") + b"\x00"
        + len(bad).to_bytes(2, "big") + bad
    )
    with pytest.raises(DecodeError) as err:
        decode_packet(raw)
    assert err.value.reason == "invariant"


def test_encode_rejects_invalid_fields():
    with pytest.raises(ValueError):
        encode_packet(Data(id=1, block_number=0, payload=b"x" * 1201))
    with pytest.raises(ValueError):
        encode_packet(Acknowledgement(id=1, window_index=0, unreceived=(3, 2)))
    with pytest.raises(ValueError):
        encode_packet(ErrorPacket(id=1, code=ErrorCode.BUSY, message="m" * 129))
    with pytest.raises(ValueError):
        encode_packet(WriteRequest(id=1, info="i" * 65, data_size=1, block_size=1,
                                   window_size=1, block_count=1, nonce=0, metadata=b""))
    with pytest.raises(ValueError):
        encode_packet(WriteRequest(id=1, info="", data_size=10, block_size=4,
                                   window_size=1, block_count=2, nonce=0, metadata=b""))


# --- decoder total over arbitrary input -------------------------------------

def test_decoder_never_crashes_on_random_bytes():
    rng = random.Random(0xF022)
    for _ in range(10_000):
        raw = rng.randbytes(rng.randrange(0, 1400))
        try:
            packet = decode_packet(raw)
        except DecodeError as err:
            assert err.reason in ("truncation", "magic", "invariant")
        else:
            assert encode_packet(packet) == raw


def test_decoder_never_crashes_on_mutated_packets():
    rng = random.Random(0xF023)
    for _ in range(4000):
        raw = bytearray(encode_packet(random_packet(rng)))
        for _ in range(rng.randrange(1, 4)):
            raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
        try:
            packet = decode_packet(bytes(raw))
        except DecodeError as err:
            assert err.reason in ("truncation", "magic", "invariant")
        else:
            assert encode_packet(packet) == bytes(raw)
