"""Byte-exact node layout for the distributed HNSW index.

A node record is a contiguous little-endian byte region:

    header    8 B   packed u64 (node id, max level, lock bit)
    vector    d*4 B IEEE-754 float32 components
    level 0   4 B count + 2M slots of 8 B packed remote addresses
    level 1   4 B count + M slots
    ...
    level l   4 B count + M slots

Header bit packing (one u64, little-endian on the wire):

    bits  0..39   node id        (40 bits)
    bits 40..47   max level      (8 bits)
    bit  48       lock bit
    bits 49..63   reserved, zero

Unused neighbor slots are zero-filled; a zero word is never a valid node
address (offset 0 of every arena holds the allocator counter).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MN_ID_BITS = 16
OFFSET_BITS = 48
OFFSET_MASK = (1 << OFFSET_BITS) - 1

HEADER_BYTES = 8
NODE_ID_BITS = 40
NODE_ID_MASK = (1 << NODE_ID_BITS) - 1
LEVEL_SHIFT = 40
LEVEL_MASK = 0xFF
LOCK_BIT = 1 << 48

ADDR_BYTES = 8
COUNT_BYTES = 4


class LayoutError(ValueError):
    """Raised for out-of-range ids, offsets or undersized byte regions."""


def pack_addr(mn_id: int, offset: int) -> int:
    """Pack (memory node id, byte offset) into one u64 global address."""
    if not 0 <= mn_id < (1 << MN_ID_BITS):
        raise LayoutError(f"mn_id {mn_id} out of range")
    if not 0 <= offset < (1 << OFFSET_BITS):
        raise LayoutError(f"offset {offset} out of range")
    return (mn_id << OFFSET_BITS) | offset


def unpack_addr(value: int) -> tuple[int, int]:
    """Inverse of :func:`pack_addr`."""
    if not 0 <= value < (1 << 64):
        raise LayoutError(f"address {value} out of range")
    return value >> OFFSET_BITS, value & OFFSET_MASK


@dataclass(frozen=True)
class LayoutParams:
    """Fixed per-index layout parameters: dimensionality and out-degree bound."""

    d: int
    m: int

    def __post_init__(self) -> None:
        if self.d < 1:
            raise LayoutError(f"d must be >= 1, got {self.d}")
        if self.m < 2:
            raise LayoutError(f"M must be >= 2, got {self.m}")

    @property
    def vector_bytes(self) -> int:
        return 4 * self.d

    @property
    def payload_bytes(self) -> int:
        """Header + vector: the part of a node that search fetches and caches."""
        return HEADER_BYTES + self.vector_bytes

    @property
    def base_list_bytes(self) -> int:
        return COUNT_BYTES + 2 * self.m * ADDR_BYTES

    @property
    def upper_list_bytes(self) -> int:
        return COUNT_BYTES + self.m * ADDR_BYTES


def node_size(d: int, m: int, l: int) -> int:
    """Total serialized size in bytes of a node topping out at level ``l``."""
    if d < 1 or m < 2 or l < 0:
        raise LayoutError(f"invalid node_size arguments d={d} m={m} l={l}")
    return 8 + d * 4 + 4 + 2 * m * 8 + l * (4 + m * 8)


def pack_header(node_id: int, max_level: int, lock_bit: int = 0) -> int:
    if not 0 <= node_id <= NODE_ID_MASK:
        raise LayoutError(f"node_id {node_id} exceeds 40 bits")
    if not 0 <= max_level <= LEVEL_MASK:
        raise LayoutError(f"max_level {max_level} exceeds 8 bits")
    word = node_id | (max_level << LEVEL_SHIFT)
    if lock_bit:
        word |= LOCK_BIT
    return word


def unpack_header(word: int) -> tuple[int, int, int]:
    """Return (node_id, max_level, lock_bit) from a packed header word."""
    return word & NODE_ID_MASK, (word >> LEVEL_SHIFT) & LEVEL_MASK, 1 if word & LOCK_BIT else 0


@dataclass
class NodeRecord:
    """Decoded form of one node: identity, vector and per-level neighbor lists.

    ``neighbors[0]`` is the base list (capacity 2M), ``neighbors[i]`` for
    i >= 1 the upper lists (capacity M). Entries are packed remote addresses.
    """

    node_id: int
    max_level: int
    vector: np.ndarray
    neighbors: list[list[int]] = field(default_factory=list)
    lock_bit: int = 0

    def __post_init__(self) -> None:
        if not self.neighbors:
            self.neighbors = [[] for _ in range(self.max_level + 1)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NodeRecord):
            return NotImplemented
        return (
            self.node_id == other.node_id
            and self.max_level == other.max_level
            and self.lock_bit == other.lock_bit
            and np.array_equal(self.vector, other.vector)
            and self.neighbors == other.neighbors
        )


def encode_node(record: NodeRecord, params: LayoutParams) -> bytes:
    """Serialize a record; inverse of :func:`decode_node`."""
    if len(record.vector) != params.d:
        raise LayoutError(
            f"vector has {len(record.vector)} components, layout expects {params.d}"
        )
    if len(record.neighbors) != record.max_level + 1:
        raise LayoutError("neighbor list count must be max_level + 1")
    out = bytearray(node_size(params.d, params.m, record.max_level))
    struct.pack_into(
        "<Q", out, 0, pack_header(record.node_id, record.max_level, record.lock_bit)
    )
    vec = np.asarray(record.vector, dtype="<f4")
    out[HEADER_BYTES : HEADER_BYTES + params.vector_bytes] = vec.tobytes()
    pos = HEADER_BYTES + params.vector_bytes
    for level, lst in enumerate(record.neighbors):
        cap = 2 * params.m if level == 0 else params.m
        if len(lst) > cap:
            raise LayoutError(f"level {level} holds {len(lst)} neighbors, cap {cap}")
        struct.pack_into("<I", out, pos, len(lst))
        pos += COUNT_BYTES
        for slot, addr in enumerate(lst):
            struct.pack_into("<Q", out, pos + slot * ADDR_BYTES, addr)
        pos += cap * ADDR_BYTES
    return bytes(out)


def decode_node(data: bytes, params: LayoutParams) -> NodeRecord:
    """Parse a serialized node. ``data`` may be longer than the node."""
    if len(data) < node_size(params.d, params.m, 0):
        raise LayoutError(f"byte region of {len(data)} B shorter than any node")
    (header,) = struct.unpack_from("<Q", data, 0)
    node_id, max_level, lock_bit = unpack_header(header)
    need = node_size(params.d, params.m, max_level)
    if len(data) < need:
        raise LayoutError(f"byte region of {len(data)} B, node needs {need}")
    vector = np.frombuffer(
        data, dtype="<f4", count=params.d, offset=HEADER_BYTES
    ).copy()
    neighbors = []
    pos = HEADER_BYTES + params.vector_bytes
    for level in range(max_level + 1):
        cap = 2 * params.m if level == 0 else params.m
        (count,) = struct.unpack_from("<I", data, pos)
        if count > cap:
            raise LayoutError(f"level {level} count {count} exceeds cap {cap}")
        pos += COUNT_BYTES
        lst = list(struct.unpack_from(f"<{count}Q", data, pos)) if count else []
        pos += cap * ADDR_BYTES
        neighbors.append(lst)
    return NodeRecord(node_id, max_level, vector, neighbors, lock_bit)


def neighbor_list_address(node_addr: int, level: int, params: LayoutParams) -> tuple[int, int]:
    """Address and length of the level-``level`` neighbor region of a node.

    The region covers the 4-byte count plus the full slot array, so a single
    remote read fetches the complete list.
    """
    base = HEADER_BYTES + params.vector_bytes
    if level == 0:
        rel, length = base, params.base_list_bytes
    else:
        rel = base + params.base_list_bytes + (level - 1) * params.upper_list_bytes
        length = params.upper_list_bytes
    mn_id, offset = unpack_addr(node_addr)
    return pack_addr(mn_id, offset + rel), length


def parse_neighbor_list(data: bytes, level: int, params: LayoutParams) -> list[int]:
    """Decode the count-prefixed slot array returned by a neighbor-list read."""
    cap = 2 * params.m if level == 0 else params.m
    (count,) = struct.unpack_from("<I", data, 0)
    if count > cap:
        raise LayoutError(f"neighbor count {count} exceeds slot capacity {cap}")
    if count == 0:
        return []
    return list(struct.unpack_from(f"<{count}Q", data, COUNT_BYTES))


def encode_neighbor_list(addrs: list[int], level: int, params: LayoutParams) -> bytes:
    cap = 2 * params.m if level == 0 else params.m
    if len(addrs) > cap:
        raise LayoutError(f"{len(addrs)} neighbors exceed slot capacity {cap}")
    out = bytearray(COUNT_BYTES + cap * ADDR_BYTES)
    struct.pack_into("<I", out, 0, len(addrs))
    for slot, addr in enumerate(addrs):
        struct.pack_into("<Q", out, COUNT_BYTES + slot * ADDR_BYTES, addr)
    return bytes(out)
