"""Estimator-style wrapper around the index: fit / kneighbors / get_params.

Duck-typed to the common fit/predict conventions without importing any
estimator framework; useful for notebook experiments and as a drop-in for
neighbor-search comparisons. The full benchmark pipeline does not fit this
shape and lives in :mod:`disagg_hnsw.driver` instead.
"""

from __future__ import annotations

import math

import numpy as np

from .fabric import Fabric, arena_capacity_for
from .hnsw import METRIC_L2, DistributedIndex


class HnswNeighbors:
    """Approximate k-nearest-neighbors search over the emulated fabric."""

    def __init__(self, m: int = 16, ef_construction: int = 200,
                 ef_search: int = 64, metric: str = METRIC_L2,
                 mns: int = 1, seed: int = 0):
        self.m = m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.metric = metric
        self.mns = mns
        self.seed = seed
        self.index_: DistributedIndex | None = None

    def get_params(self, deep: bool = True) -> dict:
        return {
            "m": self.m,
            "ef_construction": self.ef_construction,
            "ef_search": self.ef_search,
            "metric": self.metric,
            "mns": self.mns,
            "seed": self.seed,
        }

    def set_params(self, **params) -> "HnswNeighbors":
        valid = self.get_params()
        for key, val in params.items():
            if key not in valid:
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, val)
        return self

    def fit(self, X) -> "HnswNeighbors":
        data = np.ascontiguousarray(X, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, d = data.shape
        fabric = Fabric(self.mns, 1, arena_capacity_for(n, d, self.m, self.mns),
                        seed=self.seed)
        self.index_ = DistributedIndex.create(fabric, d, self.m,
                                              self.ef_construction, self.metric)
        self.index_.build(data, seed=self.seed)
        return self

    def kneighbors(self, X, n_neighbors: int = 10, return_distance: bool = True):
        if self.index_ is None:
            raise RuntimeError("call fit before kneighbors")
        queries = np.atleast_2d(np.asarray(X, dtype=np.float32))
        ef = max(self.ef_search, n_neighbors)
        ids = np.empty((len(queries), n_neighbors), dtype=np.int64)
        dists = np.empty((len(queries), n_neighbors), dtype=np.float64)
        searcher = self.index_.searcher()
        for row, q in enumerate(queries):
            found = searcher.knn_search(q, n_neighbors, ef)
            ids[row] = [nid for _, nid, _ in found]
            dists[row] = [d for d, _, _ in found]
        if not return_distance:
            return ids
        if self.metric == METRIC_L2:  # internal distances are squared
            dists = np.array([[math.sqrt(x) for x in row] for row in dists])
        return dists, ids
