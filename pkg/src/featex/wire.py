"""Bit-exact wire encoding of the three protocol message kinds.

Layout (little-endian throughout):

    header   u8 version=1 | u32 round | u16 sender | u16 receiver
             | u8 kind | u32 body_length                          (14 bytes)
    METADATA u16 H | u16 W | u16 P | f32 spatial[H*W] | f32 saliency[Q]
    PLAN     u16 agents | u16 patches | u16 grants[agents*patches] row-major
    PAYLOAD  u32 count | count * (u16 patch | u16 channel | f32 values[P*P])

Grids and block values are row-major float32. decode(encode(m)) == m for
every valid message.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EncodingError, ProtocolError

WIRE_VERSION = 1
BROADCAST = 0xFFFF

KIND_METADATA = 1
KIND_PLAN = 2
KIND_PAYLOAD = 3

_HEADER = struct.Struct("<BIHHBI")
HEADER_BYTES = _HEADER.size  # 14


def _check_u16(value: int, what: str) -> int:
    v = int(value)
    if not 0 <= v <= 0xFFFF:
        raise EncodingError(f"{what} {value} does not fit u16")
    return v


def _check_u32(value: int, what: str) -> int:
    v = int(value)
    if not 0 <= v <= 0xFFFFFFFF:
        raise EncodingError(f"{what} {value} does not fit u32")
    return v


def _f32(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(arr), dtype="<f4")


@dataclass(frozen=True)
class MetadataMessage:
    """Transmitted sender metadata: spatial map plus per-patch saliency."""

    round_id: int
    sender_id: int
    receiver_id: int
    height: int
    width: int
    patch_size: int
    spatial: np.ndarray   # (H, W) float32
    saliency: np.ndarray  # (H/P, W/P) float32

    def __post_init__(self):
        object.__setattr__(self, "spatial", _f32(self.spatial))
        object.__setattr__(self, "saliency", _f32(self.saliency))

    def __eq__(self, other):
        return (isinstance(other, MetadataMessage)
                and (self.round_id, self.sender_id, self.receiver_id,
                     self.height, self.width, self.patch_size)
                == (other.round_id, other.sender_id, other.receiver_id,
                    other.height, other.width, other.patch_size)
                and np.array_equal(self.spatial, other.spatial)
                and np.array_equal(self.saliency, other.saliency))


@dataclass(frozen=True)
class PlanMessage:
    """Broadcast allocation plan: per-(agent, patch) block grants."""

    round_id: int
    sender_id: int
    receiver_id: int
    grants: np.ndarray  # (agents, patches) uint16

    def __post_init__(self):
        g = np.ascontiguousarray(np.asarray(self.grants))
        if g.ndim != 2:
            raise EncodingError(f"plan grants must be 2-D, got {g.shape}")
        if g.size and (g.min() < 0 or g.max() > 0xFFFF):
            raise EncodingError("plan grant out of u16 range")
        object.__setattr__(self, "grants", g.astype("<u2"))

    def __eq__(self, other):
        return (isinstance(other, PlanMessage)
                and (self.round_id, self.sender_id, self.receiver_id)
                == (other.round_id, other.sender_id, other.receiver_id)
                and np.array_equal(self.grants, other.grants))


@dataclass(frozen=True)
class PayloadBlock:
    patch: int
    channel: int
    values: np.ndarray  # (P*P,) float32, row-major tile

    def __post_init__(self):
        object.__setattr__(self, "values", _f32(self.values).ravel())

    def __eq__(self, other):
        return (isinstance(other, PayloadBlock)
                and (self.patch, self.channel) == (other.patch, other.channel)
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class PayloadMessage:
    """Priority-ordered sparse feature payload."""

    round_id: int
    sender_id: int
    receiver_id: int
    blocks: tuple[PayloadBlock, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def __eq__(self, other):
        return (isinstance(other, PayloadMessage)
                and (self.round_id, self.sender_id, self.receiver_id)
                == (other.round_id, other.sender_id, other.receiver_id)
                and self.blocks == other.blocks)


Message = MetadataMessage | PlanMessage | PayloadMessage


def encode(msg: Message) -> bytes:
    if isinstance(msg, MetadataMessage):
        kind = KIND_METADATA
        rows, cols = msg.saliency.shape
        if msg.spatial.shape != (msg.height, msg.width):
            raise EncodingError("spatial grid shape does not match header dims")
        if (rows * msg.patch_size, cols * msg.patch_size) != (msg.height, msg.width):
            raise EncodingError("saliency grid does not match patch geometry")
        body = struct.pack("<HHH", _check_u16(msg.height, "height"),
                           _check_u16(msg.width, "width"),
                           _check_u16(msg.patch_size, "patch size"))
        body += msg.spatial.tobytes() + msg.saliency.tobytes()
    elif isinstance(msg, PlanMessage):
        kind = KIND_PLAN
        agents, patches = msg.grants.shape
        body = struct.pack("<HH", _check_u16(agents, "agent count"),
                           _check_u16(patches, "patch count"))
        body += msg.grants.tobytes()
    elif isinstance(msg, PayloadMessage):
        kind = KIND_PAYLOAD
        body = struct.pack("<I", _check_u32(len(msg.blocks), "block count"))
        tile = None
        for blk in msg.blocks:
            if tile is None:
                tile = blk.values.size
            elif blk.values.size != tile:
                raise EncodingError("payload blocks have mixed tile sizes")
            body += struct.pack("<HH", _check_u16(blk.patch, "patch index"),
                                _check_u16(blk.channel, "channel index"))
            body += blk.values.tobytes()
    else:
        raise EncodingError(f"unknown message type {type(msg).__name__}")

    header = _HEADER.pack(WIRE_VERSION, _check_u32(msg.round_id, "round"),
                          _check_u16(msg.sender_id, "sender"),
                          _check_u16(msg.receiver_id, "receiver"),
                          kind, len(body))
    return header + body


def decode(data: bytes) -> Message:
    if len(data) < HEADER_BYTES:
        raise ProtocolError(f"message truncated: {len(data)} bytes")
    version, round_id, sender, receiver, kind, body_len = _HEADER.unpack_from(data)
    if version != WIRE_VERSION:
        raise ProtocolError(f"unsupported wire version {version}")
    body = data[HEADER_BYTES:]
    if len(body) != body_len:
        raise ProtocolError(f"body length {len(body)} != declared {body_len}")

    if kind == KIND_METADATA:
        if body_len < 6:
            raise ProtocolError("metadata body truncated")
        h, w, p = struct.unpack_from("<HHH", body)
        if p == 0 or h % p or w % p:
            raise ProtocolError(f"invalid metadata geometry {h}x{w} P={p}")
        q = (h // p) * (w // p)
        expect = 6 + 4 * (h * w + q)
        if body_len != expect:
            raise ProtocolError(f"metadata body {body_len} != expected {expect}")
        spatial = np.frombuffer(body, dtype="<f4", count=h * w, offset=6)
        saliency = np.frombuffer(body, dtype="<f4", count=q, offset=6 + 4 * h * w)
        return MetadataMessage(round_id, sender, receiver, h, w, p,
                               spatial.reshape(h, w).copy(),
                               saliency.reshape(h // p, w // p).copy())

    if kind == KIND_PLAN:
        if body_len < 4:
            raise ProtocolError("plan body truncated")
        agents, patches = struct.unpack_from("<HH", body)
        expect = 4 + 2 * agents * patches
        if body_len != expect:
            raise ProtocolError(f"plan body {body_len} != expected {expect}")
        grants = np.frombuffer(body, dtype="<u2", count=agents * patches, offset=4)
        return PlanMessage(round_id, sender, receiver,
                           grants.reshape(agents, patches).copy())

    if kind == KIND_PAYLOAD:
        if body_len < 4:
            raise ProtocolError("payload body truncated")
        (count,) = struct.unpack_from("<I", body)
        if count == 0:
            if body_len != 4:
                raise ProtocolError("empty payload carries trailing bytes")
            return PayloadMessage(round_id, sender, receiver, ())
        per_block, rem = divmod(body_len - 4, count)
        if rem or per_block < 8 or (per_block - 4) % 4:
            raise ProtocolError(f"payload body {body_len} not divisible into {count} blocks")
        tile = (per_block - 4) // 4
        blocks = []
        off = 4
        for _ in range(count):
            patch, channel = struct.unpack_from("<HH", body, off)
            vals = np.frombuffer(body, dtype="<f4", count=tile, offset=off + 4)
            blocks.append(PayloadBlock(patch, channel, vals.copy()))
            off += per_block
        return PayloadMessage(round_id, sender, receiver, tuple(blocks))

    raise ProtocolError(f"unknown message kind {kind}")
