"""Wire codec for the block transfer protocol.

Every packet travels as exactly one datagram. Common header:

    offset  size  field
    0       2     magic, 0xEB 0x01
    2       1     version, 0x01
    3       1     packet type

Type-specific fields follow in order, big endian, fixed width. Variable
fields carry a u16 prefix (byte length, or entry count for block lists).

    type 1  WriteRequest     id:u64  info:u16+utf8  data_size:u64
                             block_size:u32  window_size:u32  block_count:u32
                             nonce:u64  metadata:u16+bytes
    type 2  Acknowledgement  id:u64  window_index:u32  unreceived:u16 + n*u32
    type 3  Data             id:u64  block_number:u32  payload:u16+bytes
    type 4  Error            id:u64  code:u8  message:u16+utf8

The full layout with worked hex examples lives in docs/wire.md. Decoding is
total: any input either yields a packet or raises DecodeError; whatever is
accepted re-encodes to the identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

MAGIC = b"\xeb\x01"
VERSION = 0x01

TYPE_WRITE_REQUEST = 1
TYPE_ACKNOWLEDGEMENT = 2
TYPE_DATA = 3
TYPE_ERROR = 4

# Field caps. A Data packet with the largest payload encodes to
# 18 + 1200 = 1218 bytes; no valid packet exceeds DATAGRAM_BUDGET.
INFO_MAX = 64
METADATA_MAX = 512
MESSAGE_MAX = 128
PAYLOAD_MAX = 1200
DATAGRAM_BUDGET = 1241
DATA_WIRE_OVERHEAD = 18  # header 4 + id 8 + block_number 4 + length 2
ACK_MAX_UNRECEIVED = (DATAGRAM_BUDGET - DATA_WIRE_OVERHEAD) // 4  # 305
MTU = 1500

_HEADER = struct.Struct("!2sBB")
_U16 = struct.Struct("!H")
_U32 = struct.Struct("!I")
_U64 = struct.Struct("!Q")


class ErrorCode(IntEnum):
    """Protocol error causes; values are fixed on the wire."""

    SIZE_EXCEEDED = 0
    BUSY = 1
    COLLISION = 2
    TIMEOUT = 3
    DECODE_FAILURE = 4
    UNKNOWN_TRANSFER = 5


class DecodeError(ValueError):
    """Raised for any undecodable input.

    reason is one of "truncation" (input ends early), "magic" (bad magic or
    version), "invariant" (structurally complete but violates a field rule).
    """

    def __init__(self, reason: str, detail: str):
        super().__init__(f"{reason}: {detail}")
        self.reason = reason


def block_count_for(data_size: int, block_size: int) -> int:
    """Number of blocks a transfer of data_size bytes splits into."""
    if block_size < 1:
        raise ValueError("block_size must be positive")
    return (data_size + block_size - 1) // block_size


@dataclass(frozen=True)
class WriteRequest:
    id: int
    info: str
    data_size: int
    block_size: int
    window_size: int
    block_count: int
    nonce: int
    metadata: bytes = b""


@dataclass(frozen=True)
class Acknowledgement:
    id: int
    window_index: int
    unreceived: tuple[int, ...] = ()


@dataclass(frozen=True)
class Data:
    id: int
    block_number: int
    payload: bytes = field(repr=False, default=b"")


@dataclass(frozen=True)
class ErrorPacket:
    id: int
    code: ErrorCode
    message: str = ""


Packet = Union[WriteRequest, Acknowledgement, Data, ErrorPacket]


def _check(condition: bool, what: str) -> None:
    if not condition:
        raise ValueError(what)


def encode_packet(packet: Packet) -> bytes:
    """Serialize a packet; raises ValueError if a field violates its cap."""
    try:
        return _encode(packet)
    except struct.error as exc:
        raise ValueError(f"field out of range: {exc}") from None


def _encode(packet: Packet) -> bytes:
    if isinstance(packet, WriteRequest):
        info = packet.info.encode("utf-8")
        _check(len(info) <= INFO_MAX, "info exceeds 64 bytes")
        _check(len(packet.metadata) <= METADATA_MAX, "metadata exceeds 512 bytes")
        _check(packet.block_size >= 1, "block_size must be positive")
        _check(packet.block_count == block_count_for(packet.data_size, packet.block_size),
               "block_count inconsistent with data_size/block_size")
        body = (
            _U64.pack(packet.id)
            + _U16.pack(len(info)) + info
            + _U64.pack(packet.data_size)
            + _U32.pack(packet.block_size)
            + _U32.pack(packet.window_size)
            + _U32.pack(packet.block_count)
            + _U64.pack(packet.nonce)
            + _U16.pack(len(packet.metadata)) + packet.metadata
        )
        return _HEADER.pack(MAGIC, VERSION, TYPE_WRITE_REQUEST) + body

    if isinstance(packet, Acknowledgement):
        entries = packet.unreceived
        _check(len(entries) <= ACK_MAX_UNRECEIVED, "unreceived list too long for one datagram")
        _check(all(entries[i] < entries[i + 1] for i in range(len(entries) - 1)),
               "unreceived list must be strictly increasing")
        body = (
            _U64.pack(packet.id)
            + _U32.pack(packet.window_index)
            + _U16.pack(len(entries))
            + b"".join(_U32.pack(n) for n in entries)
        )
        return _HEADER.pack(MAGIC, VERSION, TYPE_ACKNOWLEDGEMENT) + body

    if isinstance(packet, Data):
        _check(len(packet.payload) <= PAYLOAD_MAX, "payload exceeds 1200 bytes")
        body = (
            _U64.pack(packet.id)
            + _U32.pack(packet.block_number)
            + _U16.pack(len(packet.payload)) + packet.payload
        )
        return _HEADER.pack(MAGIC, VERSION, TYPE_DATA) + body

    if isinstance(packet, ErrorPacket):
        message = packet.message.encode("utf-8")
        _check(len(message) <= MESSAGE_MAX, "message exceeds 128 bytes")
        body = (
            _U64.pack(packet.id)
            + bytes([ErrorCode(packet.code).value])
            + _U16.pack(len(message)) + message
        )
        return _HEADER.pack(MAGIC, VERSION, TYPE_ERROR) + body

    raise ValueError(f"not a packet: {packet!r}")


class _Reader:
    """Cursor over the input buffer; running out of bytes is a truncation."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise DecodeError("truncation", f"input ends inside {what}")
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def u16(self, what: str) -> int:
        return _U16.unpack(self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(8, what))[0]

    def utf8(self, cap: int, what: str) -> str:
        length = self.u16(what)
        if length > cap:
            raise DecodeError("invariant", f"{what} exceeds {cap} bytes")
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError("invariant", f"{what} is not valid UTF-8") from None

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise DecodeError("invariant", "trailing bytes after packet")


def decode_packet(raw: bytes) -> Packet:
    """Parse one datagram; raises DecodeError on any invalid input."""
    r = _Reader(raw)
    magic = r.take(2, "magic")
    if magic != MAGIC:
        raise DecodeError("magic", f"bad magic {magic.hex()}")
    version = r.take(1, "version")[0]
    if version != VERSION:
        raise DecodeError("magic", f"unsupported version {version}")
    ptype = r.take(1, "type")[0]

    if ptype == TYPE_WRITE_REQUEST:
        pid = r.u64("id")
        info = r.utf8(INFO_MAX, "info")
        data_size = r.u64("data_size")
        block_size = r.u32("block_size")
        window_size = r.u32("window_size")
        block_count = r.u32("block_count")
        nonce = r.u64("nonce")
        metadata_len = r.u16("metadata")
        if metadata_len > METADATA_MAX:
            raise DecodeError("invariant", f"metadata exceeds {METADATA_MAX} bytes")
        metadata = r.take(metadata_len, "metadata")
        r.done()
        if block_size < 1:
            raise DecodeError("invariant", "block_size is zero")
        if block_count != block_count_for(data_size, block_size):
            raise DecodeError("invariant", "block_count inconsistent with data_size/block_size")
        return WriteRequest(pid, info, data_size, block_size, window_size,
                            block_count, nonce, metadata)

    if ptype == TYPE_ACKNOWLEDGEMENT:
        pid = r.u64("id")
        window_index = r.u32("window_index")
        count = r.u16("unreceived count")
        if count > ACK_MAX_UNRECEIVED:
            raise DecodeError("invariant", "unreceived list too long for one datagram")
        entries = struct.unpack(f"!{count}I", r.take(4 * count, "unreceived list"))
        r.done()
        if any(entries[i] >= entries[i + 1] for i in range(count - 1)):
            raise DecodeError("invariant", "unreceived list is not strictly increasing")
        return Acknowledgement(pid, window_index, entries)

    if ptype == TYPE_DATA:
        pid = r.u64("id")
        block_number = r.u32("block_number")
        length = r.u16("payload")
        if length > PAYLOAD_MAX:
            raise DecodeError("invariant", f"payload exceeds {PAYLOAD_MAX} bytes")
        payload = r.take(length, "payload")
        r.done()
        return Data(pid, block_number, payload)

    if ptype == TYPE_ERROR:
        pid = r.u64("id")
        code = r.take(1, "code")[0]
        if code > 5:
            raise DecodeError("invariant", f"unknown error code {code}")
        message = r.utf8(MESSAGE_MAX, "message")
        r.done()
        return ErrorPacket(pid, ErrorCode(code), message)

    raise DecodeError("invariant", f"unknown packet type {ptype}")
