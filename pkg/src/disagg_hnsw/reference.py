"""In-process HNSW used as the correctness baseline.

Runs the exact algorithm from :mod:`disagg_hnsw.hnsw` (same level draws,
same tie-breaking, same pruning) over plain Python lists and a numpy
matrix. A distributed build with the same seed must produce the identical
adjacency structure; tests compare the two graphs node by node.
"""

from __future__ import annotations

import numpy as np

from .hnsw import (
    METRIC_L2,
    SearchStats,
    insert_impl,
    knn_search_impl,
    prune_order,
)


class LocalHnsw:
    """Reference index; handles are node ids."""

    def __init__(self, d: int, m: int, ef_construction: int, metric: str = METRIC_L2):
        self.d = d
        self.m = m
        self.ef_construction = ef_construction
        self.metric = metric
        self.vectors: list[np.ndarray] = []
        self.levels: list[int] = []
        # adjacency[node][level] -> list of neighbor ids, levels 0..max_level
        self.adjacency_lists: list[list[list[int]]] = []
        self.entry_id: int | None = None
        self.top_level = -1

    # -- view interface --

    def payloads(self, handles, stats: SearchStats):
        stats.visits += len(handles)
        vecs = self.vectors
        rows = [vecs[h] for h in handles]
        return (list(handles), [self.levels[h] for h in handles],
                np.concatenate(rows).reshape(len(rows), -1))

    def neighbors(self, handle, level, stats: SearchStats):
        stats.list_reads += 1
        return self.adjacency_lists[handle][level]

    def entry(self):
        if self.entry_id is None:
            return None
        return self.entry_id, self.top_level

    def create_node(self, vec32, level, node_id):
        assert node_id == len(self.vectors)
        self.vectors.append(np.array(vec32, dtype=np.float32))
        self.levels.append(level)
        self.adjacency_lists.append([[] for _ in range(level + 1)])
        return node_id

    def set_links(self, handle, level, handles_list):
        self.adjacency_lists[handle][level] = list(handles_list)

    def add_reverse_link(self, nb_handle, level, new_handle):
        cap = 2 * self.m if level == 0 else self.m
        current = self.adjacency_lists[nb_handle][level]
        if new_handle in current:
            return
        if len(current) < cap:
            current.append(new_handle)
            return
        candidates = current + [new_handle]
        stats = SearchStats()
        ids, _, mat = self.payloads(candidates, stats)
        center = self.vectors[nb_handle].astype(np.float64)
        order = prune_order(center, ids, mat, self.metric, cap)
        self.adjacency_lists[nb_handle][level] = [candidates[i] for i in order]

    def try_set_entry(self, handle, level):
        if self.entry_id is not None:
            return False
        self.entry_id = handle
        self.top_level = level
        return True

    def promote_entry(self, handle, level):
        if level > self.top_level:
            self.entry_id = handle
            self.top_level = level

    # -- public API --

    def insert(self, vec, rng: np.random.Generator) -> int:
        vec32 = np.asarray(vec, dtype=np.float32)
        if vec32.shape != (self.d,):
            raise ValueError(f"vector shape {vec32.shape} != ({self.d},)")
        node_id, _ = insert_impl(self, vec32, len(self.vectors), rng, self.ef_construction)
        return node_id

    def build(self, dataset: np.ndarray, seed: int = 0) -> None:
        """Same seeding scheme as the distributed build: identical level draws."""
        data32 = np.ascontiguousarray(dataset, dtype=np.float32)
        rng_level = np.random.default_rng(np.random.SeedSequence([seed, 0x1E7E1]))
        for row in data32:
            self.insert(row, rng_level)

    def knn_search(self, q, k: int, ef_search: int):
        q64 = np.asarray(q, dtype=np.float32).astype(np.float64)
        stats = SearchStats()
        return knn_search_impl(self, q64, k, ef_search, stats)[:k]

    def adjacency(self) -> dict[int, list[list[int]]]:
        return {i: [list(lst) for lst in lists]
                for i, lists in enumerate(self.adjacency_lists)}
