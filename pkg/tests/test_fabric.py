import struct

import numpy as np
import pytest

from disagg_hnsw.fabric import (
    DATA_BASE,
    MSG_QUERY,
    Fabric,
    FabricFault,
    RoutedMessage,
)
from disagg_hnsw.layout import pack_addr


def small_fabric(mns=2, cns=2, cap=1 << 16, seed=0):
    return Fabric(mn_count=mns, cn_count=cns, capacity_per_mn=cap, seed=seed)


def test_read_write_round_trip():
    fab = small_fabric()
    cl = fab.client(0)
    addr = pack_addr(1, DATA_BASE)
    cl.write(addr, b"hello fabric")
    assert cl.read(addr, 12) == b"hello fabric"
    assert cl.read(addr + 6, 6) == b"fabric"


def test_out_of_range_access_faults():
    fab = small_fabric(cap=4096 + 64)
    cl = fab.client(0)
    with pytest.raises(FabricFault):
        cl.read(pack_addr(0, 4096), 128)
    with pytest.raises(FabricFault):
        cl.write(pack_addr(0, 4200), b"x")
    with pytest.raises(FabricFault):
        cl.read(pack_addr(5, 0), 8)  # no such memory node


def test_cas_semantics():
    fab = small_fabric()
    cl = fab.client(0)
    addr = pack_addr(0, DATA_BASE)
    cl.write(addr, struct.pack("<Q", 7))
    assert cl.cas(addr, 7, 99) == 7  # success returns the expected value
    assert struct.unpack("<Q", cl.read(addr, 8))[0] == 99
    assert cl.cas(addr, 7, 123) == 99  # failure returns the actual value
    assert struct.unpack("<Q", cl.read(addr, 8))[0] == 99  # and writes nothing
    with pytest.raises(FabricFault):
        cl.cas(addr + 4, 0, 1)  # misaligned


def test_faa_returns_old_value():
    fab = small_fabric()
    cl = fab.client(0)
    addr = pack_addr(1, DATA_BASE)
    cl.write(addr, struct.pack("<Q", 10))
    assert cl.faa(addr, 5) == 10
    assert cl.faa(addr, 1) == 15
    assert struct.unpack("<Q", cl.read(addr, 8))[0] == 16
    # wrap-around stays within u64
    cl.write(addr, struct.pack("<Q", (1 << 64) - 1))
    assert cl.faa(addr, 2) == (1 << 64) - 1
    assert struct.unpack("<Q", cl.read(addr, 8))[0] == 1


def test_alloc_bump_and_alignment():
    fab = small_fabric(cap=1 << 14)
    cl = fab.client(0)
    rng = np.random.default_rng(1)
    seen = set()
    for _ in range(20):
        addr = cl.alloc_node(37, rng)  # odd size must be rounded up
        mn, off = addr >> 48, addr & ((1 << 48) - 1)
        assert off >= DATA_BASE
        assert off % 8 == 0
        assert addr not in seen
        seen.add(addr)


def test_alloc_exhaustion():
    from disagg_hnsw.fabric import AllocationError

    fab = small_fabric(mns=1, cap=4096 + 64)
    cl = fab.client(0)
    cl.alloc_node(48)
    with pytest.raises(AllocationError):
        cl.alloc_node(64)


def test_message_relay_fifo():
    fab = small_fabric(cns=3)
    cl = fab.client(0)
    for i in range(5):
        cl.send_via_mn(0, RoutedMessage(2, MSG_QUERY, bytes([i])))
    assert fab.pump_router(0) == 5
    got = []
    receiver = fab.client(2)
    while (msg := receiver.recv()) is not None:
        got.append(msg.payload[0])
    assert got == [0, 1, 2, 3, 4]
    assert fab.msgs_delivered == 5


def test_message_unknown_cn_dropped():
    fab = small_fabric(cns=2)
    cl = fab.client(0)
    cl.send_via_mn(1, RoutedMessage(9, MSG_QUERY, b"?"))
    fab.pump_all_routers()
    assert fab.msgs_dropped == 1
    assert fab.msgs_delivered == 0


def test_traffic_accounting():
    fab = small_fabric()
    a, b = fab.client(0), fab.client(1)
    addr = pack_addr(0, DATA_BASE)
    a.write(addr, b"\x00" * 16)
    a.read(addr, 16)
    a.read(addr, 8)
    b.faa(addr, 1)
    b.cas(addr, 0, 0)
    b.send_via_mn(0, RoutedMessage(1, MSG_QUERY, b"abc"))
    assert a.stats.read_ops == 2 and a.stats.read_bytes == 24
    assert a.stats.write_ops == 1 and a.stats.write_bytes == 16
    assert b.stats.faa_ops == 1 and b.stats.cas_ops == 1
    assert b.stats.msgs_sent == 1 and b.stats.msg_bytes == 3 + 3  # header + payload
    total = fab.total_traffic()
    assert total.read_ops == 2 and total.faa_ops == 1 and total.msgs_sent == 1


def test_dump_load_round_trip():
    fab = small_fabric(cap=1 << 14)
    cl = fab.client(0)
    addr = cl.alloc_node(64)
    cl.write(addr, bytes(range(64)))
    blob = fab.dump_arena(addr >> 48)

    fab2 = small_fabric(cap=1 << 14)
    fab2.load_arena(addr >> 48, blob)
    assert fab2.client(0).read(addr, 64) == bytes(range(64))
    # the bump counter travels with the dump: next alloc lands after it
    nxt = fab2.client(0).alloc_node(8)
    assert (nxt & ((1 << 48) - 1)) > (addr & ((1 << 48) - 1))


def test_dump_rejects_garbage():
    fab = small_fabric()
    with pytest.raises(ValueError):
        fab.load_arena(0, b"not an arena dump at all........")
