"""Emulated memory-disaggregated HNSW: index, cache, routing, benchmarks."""

from .cache import CacheConfig, NodeCache
from .fabric import Fabric, FabricClient, TrafficStats
from .hnsw import DistributedIndex, Searcher, distance, draw_level
from .layout import LayoutParams, node_size, pack_addr, unpack_addr
from .reference import LocalHnsw

__all__ = [
    "CacheConfig",
    "DistributedIndex",
    "Fabric",
    "FabricClient",
    "LayoutParams",
    "LocalHnsw",
    "NodeCache",
    "Searcher",
    "TrafficStats",
    "distance",
    "draw_level",
    "node_size",
    "pack_addr",
    "unpack_addr",
]

__version__ = "0.1.0"
