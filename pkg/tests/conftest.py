"""Shared fixtures: one small distributed/reference index pair per session.

Tests treat these as read-only; anything that mutates arenas or adjacency
builds its own index.
"""

import numpy as np
import pytest

from disagg_hnsw.fabric import Fabric
from disagg_hnsw.hnsw import DistributedIndex
from disagg_hnsw.reference import LocalHnsw

TINY = dict(d=24, m=8, ef_construction=60)


@pytest.fixture(scope="session")
def tiny_data():
    rng = np.random.default_rng(7)
    return rng.random((1000, TINY["d"]), dtype=np.float32)


@pytest.fixture(scope="session")
def tiny_index(tiny_data):
    fab = Fabric(mn_count=2, cn_count=2, capacity_per_mn=16 << 20, seed=5)
    idx = DistributedIndex.create(fab, **TINY)
    idx.build(tiny_data, seed=11)
    return idx


@pytest.fixture(scope="session")
def tiny_reference(tiny_data):
    ref = LocalHnsw(**TINY)
    ref.build(tiny_data, seed=11)
    return ref
