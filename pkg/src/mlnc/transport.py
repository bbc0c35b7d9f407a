"""Wire format and block framing for coded datagrams.

Every datagram carries a fixed 24-byte big-endian header::

    magic:u16 | version:u8 | kind:u8 | block_id:u32 | symbol_index:u16 |
    k:u16 | n:u16 | payload_len:u16 | send_timestamp_us:u64

followed by ``payload_len`` bytes. Feedback datagrams (kind 0x01) carry a
25-byte payload ``measured_rate_bps:u64 | command:u8 | target_rate_bps:u64 |
timestamp_us:u64``.
"""

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .erasure import CodeParams, EncodedSymbol, decode_array, encode_array

MAGIC = 0x4C4C
VERSION = 0x01
HEADER = struct.Struct(">HBBIHHHHQ")
HEADER_LEN = HEADER.size  # 24
FEEDBACK = struct.Struct(">QBQQ")
BLOCK_PREFIX = struct.Struct(">I")
EVICT_AFTER_US = 2_000_000


class WireFormatError(ValueError):
    pass


class BadMagicError(WireFormatError):
    pass


class TruncatedError(WireFormatError):
    pass


class UnsupportedVersionError(WireFormatError):
    pass


class MalformedPacketError(WireFormatError):
    pass


class CorruptSymbolError(ValueError):
    pass


class PacketKind(enum.IntEnum):
    DATA = 0x00
    FEEDBACK = 0x01


class Command(enum.IntEnum):
    KEEP = 0
    SET_TARGET = 1
    PROBE_UP = 2
    PROBE_DOWN = 3
    CONFIRM_INCREASE = 4


@dataclass(frozen=True)
class WirePacket:
    kind: PacketKind
    block_id: int
    symbol_index: int
    k: int
    n: int
    send_timestamp_us: int
    payload: bytes = b""
    magic: int = MAGIC
    version: int = VERSION

    @property
    def payload_len(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class FeedbackMessage:
    measured_rate_bps: int
    command: Command
    target_rate_bps: int
    timestamp_us: int = 0

    def __post_init__(self):
        if self.command != Command.KEEP and self.target_rate_bps <= 0:
            raise ValueError(f"{self.command.name} needs a positive target rate")


def _validate(p: WirePacket):
    if p.kind == PacketKind.DATA:
        if not (p.k <= p.n and p.symbol_index < p.n):
            raise MalformedPacketError(
                f"symbol_index={p.symbol_index}, k={p.k}, n={p.n} violate index < n, k <= n")
    if p.payload_len > 0xFFFF:
        raise MalformedPacketError(f"payload of {p.payload_len} bytes exceeds u16 length")


def serialize_packet(p: WirePacket, payload_len: Optional[int] = None) -> bytes:
    """Encode ``p``; an explicit ``payload_len`` must agree with the payload."""
    if payload_len is not None and payload_len != p.payload_len:
        raise MalformedPacketError(f"payload_len {payload_len} != {p.payload_len} payload bytes")
    _validate(p)
    head = HEADER.pack(p.magic, p.version, int(p.kind), p.block_id, p.symbol_index, p.k, p.n,
                       p.payload_len, p.send_timestamp_us)
    return head + bytes(p.payload)


def parse_packet(buf: bytes) -> WirePacket:
    buf = memoryview(buf)
    if len(buf) < 2:
        raise TruncatedError(f"{len(buf)} bytes is shorter than the header")
    (magic,) = struct.unpack_from(">H", buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:04X}")
    if len(buf) < HEADER_LEN:
        raise TruncatedError(f"{len(buf)} bytes is shorter than the {HEADER_LEN}-byte header")
    magic, version, kind, block_id, idx, k, n, plen, ts = HEADER.unpack_from(buf)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if len(buf) < HEADER_LEN + plen:
        raise TruncatedError(f"header announces {plen} payload bytes, {len(buf) - HEADER_LEN} present")
    try:
        kind = PacketKind(kind)
    except ValueError:
        raise MalformedPacketError(f"unknown packet kind {kind}") from None
    p = WirePacket(kind, block_id, idx, k, n, ts, bytes(buf[HEADER_LEN:HEADER_LEN + plen]))
    _validate(p)
    return p


def encode_feedback(msg: FeedbackMessage) -> bytes:
    return FEEDBACK.pack(msg.measured_rate_bps, int(msg.command), msg.target_rate_bps,
                         msg.timestamp_us)


def decode_feedback(payload: bytes) -> FeedbackMessage:
    if len(payload) < FEEDBACK.size:
        raise TruncatedError(f"feedback payload needs {FEEDBACK.size} bytes, got {len(payload)}")
    rate, cmd, target, ts = FEEDBACK.unpack_from(payload)
    try:
        cmd = Command(cmd)
    except ValueError:
        raise MalformedPacketError(f"unknown feedback command {cmd}") from None
    return FeedbackMessage(rate, cmd, target, ts)


def feedback_packet(msg: FeedbackMessage, link_id: int = 0) -> WirePacket:
    """Wrap feedback in a datagram; ``block_id`` carries the link it refers to."""
    return WirePacket(PacketKind.FEEDBACK, link_id, 0, 0, 0, msg.timestamp_us,
                      encode_feedback(msg))


# -- sender side ------------------------------------------------------------


def symbol_len_for(block_bytes: int, k: int) -> int:
    return -(-(block_bytes + BLOCK_PREFIX.size) // k)


def packetize_block(data: bytes, block_id: int, params: CodeParams,
                    now_us: int) -> list[WirePacket]:
    """Frame one application block (e.g. a video slice) into n coded datagrams.

    The block is prefixed with its u32 length and zero-padded to
    ``k * symbol_len`` so the receiver can strip the padding.
    """
    framed = BLOCK_PREFIX.pack(len(data)) + bytes(data)
    cap = params.k * params.symbol_len
    if len(framed) > cap:
        raise MalformedPacketError(
            f"block of {len(data)} bytes does not fit k={params.k} x {params.symbol_len}")
    arr = np.frombuffer(framed.ljust(cap, b"\0"), dtype=np.uint8).reshape(
        params.k, params.symbol_len)
    code = encode_array(arr, params)
    return [WirePacket(PacketKind.DATA, block_id, i, params.k, params.n, now_us,
                       code[i].tobytes()) for i in range(params.n)]


def unframe_block(symbols: list[bytes]) -> bytes:
    joined = b"".join(symbols)
    (size,) = BLOCK_PREFIX.unpack_from(joined)
    if size > len(joined) - BLOCK_PREFIX.size:
        raise MalformedPacketError(f"block length {size} exceeds decoded bytes")
    return joined[BLOCK_PREFIX.size:BLOCK_PREFIX.size + size]


# -- receiver side ----------------------------------------------------------


@dataclass
class BlockAssembly:
    block_id: int
    k: int
    n: int
    received: dict[int, bytes] = field(default_factory=dict)
    first_arrival_us: Optional[int] = None
    ready_at_us: Optional[int] = None
    send_timestamp_us: Optional[int] = None

    @property
    def ready(self) -> bool:
        return self.ready_at_us is not None

    def latency_us(self) -> Optional[int]:
        if self.ready_at_us is None or self.send_timestamp_us is None:
            return None
        return self.ready_at_us - self.send_timestamp_us


def assemble(state: BlockAssembly, s: EncodedSymbol, now_us: int) -> tuple[BlockAssembly, bool]:
    """Add one symbol to a block; returns the state and whether the block is decodable.

    Mutates ``state`` in place (single receive loop owns it). Duplicates and
    symbols arriving after readiness are ignored.
    """
    if not 0 <= s.index < state.n:
        raise CorruptSymbolError(f"symbol index {s.index} outside [0, {state.n})")
    if state.first_arrival_us is None:
        state.first_arrival_us = now_us
    if state.ready or s.index in state.received:
        return state, state.ready
    state.received[s.index] = s.payload
    if len(state.received) == state.k:
        state.ready_at_us = now_us
    return state, state.ready


def decode_assembly(state: BlockAssembly, symbol_len: Optional[int] = None) -> list[bytes]:
    if not state.ready:
        raise ValueError(f"block {state.block_id} has {len(state.received)}/{state.k} symbols")
    idx = sorted(state.received)
    symbol_len = symbol_len or len(state.received[idx[0]])
    params = CodeParams(state.k, state.n - state.k, symbol_len)
    payloads = np.frombuffer(b"".join(state.received[i] for i in idx), dtype=np.uint8).reshape(
        len(idx), symbol_len)
    out = decode_array(idx, payloads, params)
    return [out[j].tobytes() for j in range(state.k)]


@dataclass
class CompletedBlock:
    block_id: int
    send_us: int
    ready_us: int
    data: bytes

    @property
    def latency_us(self) -> int:
        return self.ready_us - self.send_us


class Reassembler:
    """Per-endpoint block table: feeds data packets, yields decoded blocks.

    Incomplete blocks are evicted ``evict_after_us`` after their first symbol;
    completed block ids are remembered for the same horizon so late symbols
    are discarded rather than reopening the block.
    """

    def __init__(self, evict_after_us: int = EVICT_AFTER_US):
        self.evict_after_us = evict_after_us
        self.blocks: dict[int, BlockAssembly] = {}
        self._done: dict[int, int] = {}
        self.evicted = 0

    def push(self, pkt: WirePacket, now_us: int) -> Optional[CompletedBlock]:
        if pkt.kind != PacketKind.DATA:
            raise ValueError("only data packets can be assembled")
        self.expire(now_us)
        if pkt.block_id in self._done:
            return None
        st = self.blocks.get(pkt.block_id)
        if st is None or (st.k, st.n) != (pkt.k, pkt.n):
            st = BlockAssembly(pkt.block_id, pkt.k, pkt.n, send_timestamp_us=pkt.send_timestamp_us)
            self.blocks[pkt.block_id] = st
        _, ready = assemble(st, EncodedSymbol(pkt.symbol_index, pkt.payload), now_us)
        if not ready:
            return None
        del self.blocks[pkt.block_id]
        self._done[pkt.block_id] = now_us
        data = unframe_block(decode_assembly(st))
        return CompletedBlock(pkt.block_id, st.send_timestamp_us, st.ready_at_us, data)

    def expire(self, now_us: int) -> None:
        horizon = now_us - self.evict_after_us
        stale = [b for b, st in self.blocks.items() if st.first_arrival_us < horizon]
        for b in stale:
            del self.blocks[b]
        self.evicted += len(stale)
        for b in [b for b, t in self._done.items() if t < horizon]:
            del self._done[b]

    def __iter__(self) -> Iterator[BlockAssembly]:
        return iter(self.blocks.values())
