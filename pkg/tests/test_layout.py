import numpy as np
import pytest

from disagg_hnsw import layout
from disagg_hnsw.layout import (
    LayoutError,
    LayoutParams,
    NodeRecord,
    decode_node,
    encode_neighbor_list,
    encode_node,
    neighbor_list_address,
    node_size,
    pack_addr,
    pack_header,
    parse_neighbor_list,
    unpack_addr,
    unpack_header,
)


def test_node_size_reference_values():
    # d=128, M=32: header 8 + vector 512 + base list 516 + 260 per upper level
    assert node_size(128, 32, 0) == 1036
    assert node_size(128, 32, 1) == 1296
    assert node_size(128, 32, 2) == 1556


def test_node_size_formula():
    for d in (1, 16, 33, 128):
        for m in (2, 8, 32):
            for l in (0, 1, 5):
                expect = 8 + 4 * d + (4 + 16 * m) + l * (4 + 8 * m)
                assert node_size(d, m, l) == expect


def test_node_size_rejects_bad_args():
    with pytest.raises(LayoutError):
        node_size(0, 32, 0)
    with pytest.raises(LayoutError):
        node_size(128, 1, 0)
    with pytest.raises(LayoutError):
        node_size(128, 32, -1)


def test_addr_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        mn = int(rng.integers(0, 1 << 16))
        off = int(rng.integers(0, 1 << 48))
        assert unpack_addr(pack_addr(mn, off)) == (mn, off)
    # boundaries
    assert unpack_addr(pack_addr(0, 0)) == (0, 0)
    assert unpack_addr(pack_addr((1 << 16) - 1, (1 << 48) - 1)) == (
        (1 << 16) - 1,
        (1 << 48) - 1,
    )


def test_addr_range_errors():
    with pytest.raises(LayoutError):
        pack_addr(1 << 16, 0)
    with pytest.raises(LayoutError):
        pack_addr(0, 1 << 48)
    with pytest.raises(LayoutError):
        pack_addr(-1, 0)
    with pytest.raises(LayoutError):
        unpack_addr(1 << 64)


def test_header_round_trip():
    for node_id in (0, 1, (1 << 40) - 1, 123456789):
        for level in (0, 1, 255):
            for lock in (0, 1):
                word = pack_header(node_id, level, lock)
                assert unpack_header(word) == (node_id, level, lock)


def test_header_range_errors():
    with pytest.raises(LayoutError):
        pack_header(1 << 40, 0)
    with pytest.raises(LayoutError):
        pack_header(0, 256)


def test_node_record_round_trip():
    params = LayoutParams(d=16, m=4)
    rng = np.random.default_rng(3)
    vec = rng.random(16, dtype=np.float32)
    neighbors = [
        [pack_addr(0, 4096), pack_addr(1, 8192)],  # base, cap 8
        [pack_addr(1, 12288)],  # level 1, cap 4
    ]
    rec = NodeRecord(node_id=42, max_level=1, vector=vec, neighbors=neighbors)
    data = encode_node(rec, params)
    assert len(data) == node_size(16, 4, 1)
    back = decode_node(data, params)
    assert back == rec
    assert back.vector.dtype == np.float32
    # decoding tolerates trailing bytes
    assert decode_node(data + b"\x00" * 32, params) == rec


def test_node_record_errors():
    params = LayoutParams(d=4, m=2)
    vec = np.zeros(4, dtype=np.float32)
    with pytest.raises(LayoutError):
        encode_node(NodeRecord(1, 0, np.zeros(5, dtype=np.float32)), params)
    too_many = [[pack_addr(0, 4096)] * 5]  # base cap is 4
    with pytest.raises(LayoutError):
        encode_node(NodeRecord(1, 0, vec, too_many), params)
    good = encode_node(NodeRecord(1, 1, vec, [[], []]), params)
    with pytest.raises(LayoutError):
        decode_node(good[:-1], params)
    with pytest.raises(LayoutError):
        decode_node(b"", params)


def test_neighbor_list_regions():
    params = LayoutParams(d=8, m=4)
    base = layout.HEADER_BYTES + params.vector_bytes
    node = pack_addr(1, 4096)
    addr0, len0 = neighbor_list_address(node, 0, params)
    assert unpack_addr(addr0) == (1, 4096 + base)
    assert len0 == params.base_list_bytes
    addr2, len2 = neighbor_list_address(node, 2, params)
    assert unpack_addr(addr2) == (
        1,
        4096 + base + params.base_list_bytes + params.upper_list_bytes,
    )
    assert len2 == params.upper_list_bytes


def test_neighbor_list_round_trip():
    params = LayoutParams(d=8, m=4)
    addrs = [pack_addr(0, 4096), pack_addr(1, 9000), pack_addr(0, 7777)]
    data = encode_neighbor_list(addrs, 1, params)
    assert len(data) == params.upper_list_bytes
    assert parse_neighbor_list(data, 1, params) == addrs
    assert parse_neighbor_list(encode_neighbor_list([], 0, params), 0, params) == []
    with pytest.raises(LayoutError):
        encode_neighbor_list(addrs + addrs, 1, params)  # 6 > cap 4
    bad = bytearray(data)
    bad[0] = 200  # count byte far above capacity
    with pytest.raises(LayoutError):
        parse_neighbor_list(bytes(bad), 1, params)
