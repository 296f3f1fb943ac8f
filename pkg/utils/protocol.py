"""
AR-MAC Packet Codec
Defines every packet kind exchanged between the Central Node and sensor nodes
and the bit-exact MPDU wire format.

Wire layout (all multi-octet integers big-endian):
    octet 1      packet kind code (1..7)
    octets 2-3   source address
    octets 4..   kind-specific body in declared field order
"""
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict, Union

HEADER_OCTETS = 3
MAX_MPDU_OCTETS = 127
# Data frame = header + 1-octet length prefix + body
MAX_DATA_PAYLOAD = MAX_MPDU_OCTETS - HEADER_OCTETS - 1

BROADCAST_ADDRESS = 0xFFFF
CN_ADDRESS = 0x0000


class PacketKind(IntEnum):
    """Packet kinds, coded in the first header octet."""
    CHANNEL = 1
    TIME_SLOT_REQUEST = 2
    TIME_SLOT_REQUEST_REPLY = 3
    SYNC_ACK = 4
    DATA_REQUEST = 5
    ACK = 6
    DATA = 7


# ==================== ERRORS ====================

class PacketError(Exception):
    """Base class for codec failures."""


class BodyTooLong(PacketError):
    pass


class TruncatedFrame(PacketError):
    pass


class TrailingBytes(PacketError):
    pass


class MalformedField(PacketError):
    """A field value does not fit its wire width, or reserved bits are set."""


class UnknownKind(PacketError):
    def __init__(self, code: int):
        super().__init__(f"unknown packet kind code {code}")
        self.code = code


# ==================== BODIES ====================

@dataclass(frozen=True)
class ChannelBody:
    cn_address: int
    channel_id: int


@dataclass(frozen=True)
class TimeSlotRequestBody:
    data_rate: int  # bytes per frame
    requested_slot: int  # µs


@dataclass(frozen=True)
class TimeSlotRequestReplyBody:
    slot_start: int
    slot_len: int
    cap_start: int
    cap_len: int


@dataclass(frozen=True)
class SyncAckBody:
    dv: int
    odt: bool = False


@dataclass(frozen=True)
class DataRequestBody:
    requested_bytes: int


@dataclass(frozen=True)
class AckBody:
    odt: bool = False


@dataclass(frozen=True)
class DataBody:
    body: bytes = b''


Body = Union[ChannelBody, TimeSlotRequestBody, TimeSlotRequestReplyBody,
             SyncAckBody, DataRequestBody, AckBody, DataBody]

BODY_TYPES: Dict[PacketKind, type] = {
    PacketKind.CHANNEL: ChannelBody,
    PacketKind.TIME_SLOT_REQUEST: TimeSlotRequestBody,
    PacketKind.TIME_SLOT_REQUEST_REPLY: TimeSlotRequestReplyBody,
    PacketKind.SYNC_ACK: SyncAckBody,
    PacketKind.DATA_REQUEST: DataRequestBody,
    PacketKind.ACK: AckBody,
    PacketKind.DATA: DataBody,
}

# Fixed-width bodies; DATA is variable and handled separately
_FORMATS: Dict[PacketKind, struct.Struct] = {
    PacketKind.CHANNEL: struct.Struct('>HB'),
    PacketKind.TIME_SLOT_REQUEST: struct.Struct('>HI'),
    PacketKind.TIME_SLOT_REQUEST_REPLY: struct.Struct('>IIII'),
    PacketKind.SYNC_ACK: struct.Struct('>iB'),
    PacketKind.DATA_REQUEST: struct.Struct('>H'),
    PacketKind.ACK: struct.Struct('>B'),
}

_HEADER = struct.Struct('>BH')


@dataclass(frozen=True)
class Packet:
    """A MAC frame: kind, source address and kind-specific payload."""
    kind: PacketKind
    src: int
    payload: Body

    def __post_init__(self):
        expected = BODY_TYPES.get(self.kind)
        if expected is None or not isinstance(self.payload, expected):
            raise MalformedField(f"{self.kind!r} cannot carry {type(self.payload).__name__}")


# Convenience constructors used by the protocol state machines

def channel_packet(src: int, channel_id: int) -> Packet:
    return Packet(PacketKind.CHANNEL, src, ChannelBody(src, channel_id))


def ack_packet(src: int, odt: bool = False) -> Packet:
    return Packet(PacketKind.ACK, src, AckBody(odt))


def sync_ack_packet(src: int, dv: int, odt: bool = False) -> Packet:
    return Packet(PacketKind.SYNC_ACK, src, SyncAckBody(dv, odt))


def data_packet(src: int, body: bytes) -> Packet:
    return Packet(PacketKind.DATA, src, DataBody(bytes(body)))


def body_len(packet: Packet) -> int:
    """Encoded body length in octets."""
    if packet.kind == PacketKind.DATA:
        return 1 + len(packet.payload.body)
    return _FORMATS[packet.kind].size


def encoded_length(packet: Packet) -> int:
    return HEADER_OCTETS + body_len(packet)


def fixed_length(kind: PacketKind) -> int:
    """Encoded length of a fixed-width kind (every kind except DATA)."""
    return HEADER_OCTETS + _FORMATS[kind].size


def _body_fields(packet: Packet) -> tuple:
    p = packet.payload
    kind = packet.kind
    if kind == PacketKind.CHANNEL:
        return (p.cn_address, p.channel_id)
    if kind == PacketKind.TIME_SLOT_REQUEST:
        return (p.data_rate, p.requested_slot)
    if kind == PacketKind.TIME_SLOT_REQUEST_REPLY:
        return (p.slot_start, p.slot_len, p.cap_start, p.cap_len)
    if kind == PacketKind.SYNC_ACK:
        return (p.dv, 1 if p.odt else 0)
    if kind == PacketKind.DATA_REQUEST:
        return (p.requested_bytes,)
    return (1 if p.odt else 0,)


def encode_packet(packet: Packet) -> bytes:
    """Encode a packet into its MPDU octets."""
    length = encoded_length(packet)
    if length > MAX_MPDU_OCTETS:
        raise BodyTooLong(f"{packet.kind.name} encodes to {length} octets (max {MAX_MPDU_OCTETS})")
    try:
        header = _HEADER.pack(int(packet.kind), packet.src)
        if packet.kind == PacketKind.DATA:
            body = packet.payload.body
            return header + struct.pack('>B', len(body)) + body
        return header + _FORMATS[packet.kind].pack(*_body_fields(packet))
    except struct.error as e:
        raise MalformedField(f"{packet.kind.name}: {e}") from e


def _flag(octet: int) -> bool:
    if octet > 1:
        raise MalformedField(f"reserved bits set in flag octet 0x{octet:02x}")
    return octet == 1


def decode_packet(frame: bytes) -> Packet:
    """Decode MPDU octets back into a Packet."""
    frame = bytes(frame)
    if len(frame) < 1:
        raise TruncatedFrame("empty frame")
    code = frame[0]
    try:
        kind = PacketKind(code)
    except ValueError:
        raise UnknownKind(code) from None
    if len(frame) < HEADER_OCTETS:
        raise TruncatedFrame(f"{len(frame)} octets, header needs {HEADER_OCTETS}")
    _, src = _HEADER.unpack_from(frame)
    rest = frame[HEADER_OCTETS:]

    if kind == PacketKind.DATA:
        if not rest:
            raise TruncatedFrame("missing data length prefix")
        size = rest[0]
        if len(rest) - 1 < size:
            raise TruncatedFrame(f"data body declares {size} octets, {len(rest) - 1} present")
        if len(rest) - 1 > size:
            raise TrailingBytes(f"{len(rest) - 1 - size} octets after data body")
        return Packet(kind, src, DataBody(rest[1:]))

    fmt = _FORMATS[kind]
    if len(rest) < fmt.size:
        raise TruncatedFrame(f"{kind.name} body needs {fmt.size} octets, {len(rest)} present")
    if len(rest) > fmt.size:
        raise TrailingBytes(f"{len(rest) - fmt.size} octets after {kind.name} body")
    fields = fmt.unpack(rest)

    if kind == PacketKind.CHANNEL:
        payload = ChannelBody(*fields)
    elif kind == PacketKind.TIME_SLOT_REQUEST:
        payload = TimeSlotRequestBody(*fields)
    elif kind == PacketKind.TIME_SLOT_REQUEST_REPLY:
        payload = TimeSlotRequestReplyBody(*fields)
    elif kind == PacketKind.SYNC_ACK:
        payload = SyncAckBody(fields[0], _flag(fields[1]))
    elif kind == PacketKind.DATA_REQUEST:
        payload = DataRequestBody(fields[0])
    else:
        payload = AckBody(_flag(fields[0]))
    return Packet(kind, src, payload)
