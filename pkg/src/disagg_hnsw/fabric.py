"""Emulated disaggregated-memory fabric.

Memory nodes are raw byte arenas addressed by 64-bit global addresses
(16-bit memory-node id << 48 | 48-bit offset). Compute nodes access them
through :class:`FabricClient` handles that expose one-sided verbs (read,
write, fetch-and-add, compare-and-swap) and two-sided messaging relayed by
a per-memory-node router. Every verb is charged to the issuing client's
:class:`TrafficStats`.

Allocation is a bump counter: the first 8 bytes of each arena hold the next
free offset, advanced atomically via the fetch-and-add verb. Allocations
start at ``DATA_BASE`` so the counter and the reserved metadata block stay
out of the data region.
"""

from __future__ import annotations

import logging
import struct
import threading
from collections import deque
from dataclasses import dataclass, field, fields

import numpy as np

from .layout import OFFSET_BITS, OFFSET_MASK, pack_addr, unpack_addr

logger = logging.getLogger(__name__)

# Offset 0 holds the 8-byte bump counter; 8..DATA_BASE is reserved for the
# fabric-global metadata block (kept on memory node 0).
DATA_BASE = 4096
META_BASE = 8

MSG_QUERY = 0
MSG_PROGRESS = 1

_MSG_HEADER = struct.Struct("<HB")  # dest_cn, kind


class FabricFault(RuntimeError):
    """Out-of-range or misaligned access: fatal, signals a layout bug."""


class AllocationError(RuntimeError):
    """Arena exhausted; the experiment is undersized."""


@dataclass
class TrafficStats:
    """Monotone per-verb counters, reset only between experiment phases."""

    read_ops: int = 0
    read_bytes: int = 0
    write_ops: int = 0
    write_bytes: int = 0
    faa_ops: int = 0
    cas_ops: int = 0
    msgs_sent: int = 0
    msg_bytes: int = 0

    def add(self, other: "TrafficStats") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def snapshot(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def reset(self) -> None:
        for f in fields(self):
            setattr(self, f.name, 0)


@dataclass
class RoutedMessage:
    """Two-sided message relayed by a memory node to a compute node."""

    dest_cn: int
    kind: int
    payload: bytes

    def encode(self) -> bytes:
        return _MSG_HEADER.pack(self.dest_cn, self.kind) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "RoutedMessage":
        dest_cn, kind = _MSG_HEADER.unpack_from(data, 0)
        return cls(dest_cn, kind, data[_MSG_HEADER.size :])


class MemoryNodeArena:
    """One memory node: a byte arena plus its sequential message router."""

    def __init__(self, mn_id: int, capacity: int):
        self.id = mn_id
        self.capacity = capacity
        self.data = bytearray(capacity)
        # FAA/CAS are totally ordered per arena through this lock.
        self.atomic_lock = threading.Lock()
        self.inbox: deque[bytes] = deque()
        struct.pack_into("<Q", self.data, 0, DATA_BASE)

    @property
    def bump_value(self) -> int:
        return struct.unpack_from("<Q", self.data, 0)[0]

    def check_range(self, offset: int, length: int) -> None:
        if length < 0 or offset < 0 or offset + length > self.capacity:
            raise FabricFault(
                f"MN{self.id}: access [{offset}, {offset + length}) outside "
                f"arena of {self.capacity} B"
            )


class Fabric:
    """The whole emulated cluster: arenas, routers and compute-node inboxes.

    Compute nodes are identified by id only; their query logic lives in the
    driver. ``client(cn_id)`` hands out a verb interface with its own traffic
    counters.
    """

    def __init__(self, mn_count: int, cn_count: int, capacity_per_mn: int, seed: int = 0):
        if mn_count < 1 or cn_count < 1:
            raise ValueError("need at least one memory node and one compute node")
        self.arenas = [MemoryNodeArena(i, capacity_per_mn) for i in range(mn_count)]
        self.cn_count = cn_count
        self.cn_inboxes: list[deque[RoutedMessage]] = [deque() for _ in range(cn_count)]
        self._inbox_lock = threading.Lock()
        self._alloc_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA110C]))
        self.msgs_delivered = 0
        self.msgs_dropped = 0
        self.clients: list[FabricClient] = []

    @property
    def mn_count(self) -> int:
        return len(self.arenas)

    def client(self, cn_id: int) -> "FabricClient":
        cl = FabricClient(self, cn_id)
        self.clients.append(cl)
        return cl

    def total_traffic(self) -> TrafficStats:
        total = TrafficStats()
        for cl in self.clients:
            total.add(cl.stats)
        return total

    # -- raw verb implementations (clients charge their own counters) --

    def _arena(self, addr: int) -> tuple[MemoryNodeArena, int]:
        mn_id, offset = unpack_addr(addr)
        if mn_id >= len(self.arenas):
            raise FabricFault(f"unknown memory node {mn_id}")
        return self.arenas[mn_id], offset

    def raw_read(self, addr: int, length: int) -> bytes:
        arena, offset = self._arena(addr)
        arena.check_range(offset, length)
        return bytes(arena.data[offset : offset + length])

    def raw_write(self, addr: int, data: bytes) -> None:
        arena, offset = self._arena(addr)
        arena.check_range(offset, len(data))
        arena.data[offset : offset + len(data)] = data

    def raw_faa(self, addr: int, delta: int) -> int:
        arena, offset = self._arena(addr)
        if offset % 8 != 0:
            raise FabricFault(f"misaligned FAA at offset {offset}")
        arena.check_range(offset, 8)
        with arena.atomic_lock:
            (old,) = struct.unpack_from("<Q", arena.data, offset)
            struct.pack_into("<Q", arena.data, offset, (old + delta) % (1 << 64))
        return old

    def raw_cas(self, addr: int, expected: int, new: int) -> int:
        arena, offset = self._arena(addr)
        if offset % 8 != 0:
            raise FabricFault(f"misaligned CAS at offset {offset}")
        arena.check_range(offset, 8)
        with arena.atomic_lock:
            (old,) = struct.unpack_from("<Q", arena.data, offset)
            if old == expected:
                struct.pack_into("<Q", arena.data, offset, new)
        return old

    # -- message routing --

    def mn_enqueue(self, mn_id: int, wire: bytes) -> None:
        if not 0 <= mn_id < len(self.arenas):
            raise FabricFault(f"unknown memory node {mn_id}")
        self.arenas[mn_id].inbox.append(wire)

    def pump_router(self, mn_id: int, limit: int | None = None) -> int:
        """Process up to ``limit`` pending messages on one MN router, FIFO.

        Each MN router is sequential (models the single assigned core).
        Returns the number of messages forwarded.
        """
        arena = self.arenas[mn_id]
        done = 0
        while arena.inbox and (limit is None or done < limit):
            msg = RoutedMessage.decode(arena.inbox.popleft())
            if 0 <= msg.dest_cn < self.cn_count:
                with self._inbox_lock:
                    self.cn_inboxes[msg.dest_cn].append(msg)
                    self.msgs_delivered += 1
            else:
                self.msgs_dropped += 1
                logger.warning("MN%d dropped message for unknown CN%d", mn_id, msg.dest_cn)
            done += 1
        return done

    def pump_all_routers(self) -> int:
        done = 0
        for mn in range(len(self.arenas)):
            done += self.pump_router(mn)
        return done

    def dump_arena(self, mn_id: int) -> bytes:
        """Serialize one arena: 32-byte header + bytes up to the bump frontier."""
        arena = self.arenas[mn_id]
        bump = arena.bump_value
        header = struct.pack("<8sIQQxxxx", b"DHARENA1", 1, arena.capacity, bump)
        assert len(header) == 32
        return header + bytes(arena.data[:bump])

    def load_arena(self, mn_id: int, blob: bytes) -> None:
        magic, version, capacity, bump = struct.unpack_from("<8sIQQ", blob, 0)
        if magic != b"DHARENA1" or version != 1:
            raise ValueError("not an arena dump")
        arena = self.arenas[mn_id]
        if capacity > arena.capacity:
            arena.data = bytearray(capacity)
            arena.capacity = capacity
        arena.data[:bump] = blob[32 : 32 + bump]


class FabricClient:
    """Per-compute-node verb interface with its own traffic accounting."""

    def __init__(self, fabric: Fabric, cn_id: int):
        self.fabric = fabric
        self.cn_id = cn_id
        self.stats = TrafficStats()

    def read(self, addr: int, length: int) -> bytes:
        # flattened raw_read: this is the hottest verb by two orders of magnitude
        arenas = self.fabric.arenas
        mn_id = addr >> OFFSET_BITS
        if mn_id >= len(arenas):
            raise FabricFault(f"unknown memory node {mn_id}")
        arena = arenas[mn_id]
        offset = addr & OFFSET_MASK
        end = offset + length
        if length < 0 or end > arena.capacity:
            arena.check_range(offset, length)
        stats = self.stats
        stats.read_ops += 1
        stats.read_bytes += length
        return bytes(arena.data[offset:end])

    def write(self, addr: int, data: bytes) -> None:
        self.fabric.raw_write(addr, data)
        self.stats.write_ops += 1
        self.stats.write_bytes += len(data)

    def faa(self, addr: int, delta: int) -> int:
        old = self.fabric.raw_faa(addr, delta)
        self.stats.faa_ops += 1
        return old

    def cas(self, addr: int, expected: int, new: int) -> int:
        old = self.fabric.raw_cas(addr, expected, new)
        self.stats.cas_ops += 1
        return old

    def alloc_node(self, size: int, rng: np.random.Generator | None = None) -> int:
        """Allocate ``size`` bytes on a uniformly random memory node.

        Sizes are rounded up to 8-byte multiples so headers stay aligned.
        """
        if size <= 0:
            raise ValueError("allocation size must be positive")
        rounded = (size + 7) & ~7
        rng = rng if rng is not None else self.fabric._alloc_rng
        mn_id = int(rng.integers(0, self.fabric.mn_count))
        counter_addr = pack_addr(mn_id, 0)
        offset = self.faa(counter_addr, rounded)
        if offset + rounded > self.fabric.arenas[mn_id].capacity:
            raise AllocationError(
                f"MN{mn_id} exhausted: need {rounded} B at offset {offset}, "
                f"capacity {self.fabric.arenas[mn_id].capacity} B; "
                "increase the arena size"
            )
        return pack_addr(mn_id, offset)

    def send_via_mn(self, mn_id: int, msg: RoutedMessage) -> None:
        wire = msg.encode()
        self.fabric.mn_enqueue(mn_id, wire)
        self.stats.msgs_sent += 1
        self.stats.msg_bytes += len(wire)

    def recv(self) -> RoutedMessage | None:
        """Pop the next message from this compute node's inbox, if any."""
        inbox = self.fabric.cn_inboxes[self.cn_id]
        with self.fabric._inbox_lock:
            return inbox.popleft() if inbox else None


def arena_capacity_for(
    n: int, d: int, m: int, mn_count: int, slack: float = 1.6
) -> int:
    """Size arenas so ``n`` nodes fit with headroom for random level draws
    and the uneven split across memory nodes."""
    from .layout import node_size

    base = node_size(d, m, 0)
    # Expected upper-list bytes per node: levels are geometric with ratio 1/M.
    expected_upper = (4 + m * 8) / (m - 1)
    per_node = base + expected_upper + 8
    total = int(n * per_node * slack) + DATA_BASE
    return max(1 << 16, total // mn_count + DATA_BASE + (1 << 16))
