"""Logical index partitioning.

Assigns each compute node a region of vector space so the router can steer
queries toward a CN whose cache already holds the relevant graph region. No
arena byte moves: the model is a small table of centroids rebuilt
independently (and identically, thanks to fixed seeds) on every CN.

The sample comes from the highest index level populated by at least 1000
nodes, clustered with a capacity-capped k-means so cluster sizes stay
within ceil(n/k). Small odd CN counts get a doubling-then-merging pass
because k-means balance degrades there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_CAP = 100_000
MIN_LEVEL_POP = 1000
BALANCE_RATIO = 1.25  # "nearly equal" for the doubling loop
DOUBLE_K_MAX = 64
ODD_K_MAX = 7


@dataclass
class SampleInfo:
    """Which level fed the clustering sample, for the report audit."""

    level: int
    fallback: bool  # no level reached MIN_LEVEL_POP
    node_ids: list[int]
    vectors: np.ndarray  # (n, d) float32


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (k, d) float64
    labels: np.ndarray  # cluster id per sample point
    point_ids: list[int] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def assignment(self) -> dict[int, int]:
        """Sample node id -> cluster id."""
        return {nid: int(c) for nid, c in zip(self.point_ids, self.labels)}

    def describe(self) -> dict:
        return {
            "k": self.k,
            "sizes": [int(s) for s in self.sizes],
            "centroids": [[float(x) for x in c] for c in self.centroids],
        }


@dataclass
class OracleTable:
    """Centroid i belongs to CN i; ranks CNs by distance to a query."""

    centroids: np.ndarray  # (k, d) float64

    def rank(self, q) -> list[tuple[float, int]]:
        q64 = np.asarray(q, dtype=np.float64)
        diff = self.centroids - q64  # exactly k distance computations
        dists = (diff * diff).sum(axis=1)
        order = np.lexsort((np.arange(len(dists)), dists))
        return [(float(dists[i]), int(i)) for i in order]


def select_sample(index, seed: int = 0, max_sample: int = SAMPLE_CAP,
                  min_level_pop: int = MIN_LEVEL_POP) -> SampleInfo:
    """Vectors of the first level (top down) holding >= min_level_pop nodes.

    Works against either index flavor: anything exposing per-node top levels
    and a vector accessor. Falls back to the base level when the index is
    too small, and uniformly subsamples past ``max_sample``.
    """
    levels = getattr(index, "node_levels", None)
    if levels is None:
        levels = index.levels
    if not levels:
        raise ValueError("cannot sample an empty index")
    levels = np.asarray(levels)
    top = int(levels.max())
    chosen = None
    for lev in range(top, -1, -1):
        if int((levels >= lev).sum()) >= min_level_pop:
            chosen = lev
            break
    fallback = chosen is None
    if fallback:
        chosen = 0  # base level holds every node: largest population
    ids = np.flatnonzero(levels >= chosen)
    if len(ids) > max_sample:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A3B1E]))
        ids = np.sort(rng.choice(ids, size=max_sample, replace=False))
    ids = [int(i) for i in ids]
    if hasattr(index, "node_vector"):
        rows = [index.node_vector(i) for i in ids]
    else:
        rows = [index.vectors[i] for i in ids]
    vectors = np.ascontiguousarray(np.stack(rows), dtype=np.float32)
    if fallback:
        logger.warning("no level reaches %d nodes; sampling base level (%d nodes)",
                       min_level_pop, len(ids))
    return SampleInfo(chosen, fallback, ids, vectors)


def _kmeans_pp_init(points64: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points64)
    first = int(rng.integers(n))
    centroids = [points64[first]]
    d2 = ((points64 - centroids[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # all remaining points coincide
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids.append(points64[idx])
        d2 = np.minimum(d2, ((points64 - centroids[-1]) ** 2).sum(axis=1))
    return np.stack(centroids)


def balanced_kmeans(points, k: int, seed: int = 0, max_iter: int = 50) -> ClusterModel:
    """Capacity-capped k-means: no cluster exceeds ceil(n/k).

    Assignment walks points in input order, giving each its nearest centroid
    that still has room; the hard cap approximates the balanced formulation
    while keeping the pass deterministic.
    """
    points64 = np.asarray(points, dtype=np.float64)
    n = len(points64)
    if k <= 0:
        raise ValueError("k must be positive")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    cap = math.ceil(n / k)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x4B4D]))
    centroids = _kmeans_pp_init(points64, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        # (n, k) distance table, then capacity-greedy sweep in point order
        dists = ((points64[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        prefs = np.argsort(dists, axis=1, kind="stable")
        new_labels = np.empty(n, dtype=np.int64)
        sizes = np.zeros(k, dtype=np.int64)
        for i in range(n):
            for c in prefs[i]:
                if sizes[c] < cap:
                    new_labels[i] = c
                    sizes[c] += 1
                    break
        for c in range(k):
            members = points64[new_labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
        if (new_labels == labels).all():
            break
        labels = new_labels
    return ClusterModel(centroids, labels)


def merge_to_k(model: ClusterModel, k: int) -> ClusterModel:
    """Merge closest centroid pairs (size-weighted means) down to k clusters.

    Merging runs in rounds of disjoint pairings: within a round each cluster
    is merged at most once, so sizes roughly double instead of chaining into
    one giant cluster. A round performs only as many merges as still needed,
    which also handles counts that are not a power-of-two multiple of k.
    """
    centroids = [c.copy() for c in model.centroids]
    sizes = [int(s) for s in model.sizes]
    groups = [[i] for i in range(len(centroids))]
    while len(centroids) > k:
        count = len(centroids)
        budget = min(count // 2, count - k)
        pairs = sorted(
            (float(((centroids[a] - centroids[b]) ** 2).sum()), a, b)
            for a in range(count) for b in range(a + 1, count))
        consumed = [False] * count
        merged_into: dict[int, int] = {}  # victim index -> surviving index
        for _, a, b in pairs:
            if budget == 0:
                break
            if consumed[a] or consumed[b]:
                continue
            consumed[a] = consumed[b] = True
            na, nb = sizes[a], sizes[b]
            centroids[a] = (na * centroids[a] + nb * centroids[b]) / (na + nb)
            sizes[a] = na + nb
            merged_into[b] = a
            budget -= 1
        for b in sorted(merged_into, reverse=True):
            groups[merged_into[b]].extend(groups[b])
            del centroids[b], sizes[b], groups[b]
    remap = {}
    for new_c, members in enumerate(groups):
        for old_c in members:
            remap[old_c] = new_c
    labels = np.array([remap[int(c)] for c in model.labels], dtype=np.int64)
    return ClusterModel(np.stack(centroids), labels)


def refine_small_odd_k(points, k: int, seed: int = 0) -> ClusterModel:
    """Double k until clusters come out nearly equal, then merge back to k."""
    points64 = np.asarray(points, dtype=np.float64)
    best = None
    j = 1
    while True:
        k2 = k * (2 ** j)
        if k2 > DOUBLE_K_MAX or k2 > len(points64):
            break
        model = balanced_kmeans(points64, k2, seed)
        sizes = model.sizes
        ratio = float(sizes.max() / max(1, sizes.min()))
        if best is None or ratio < best[0]:
            best = (ratio, model)
        if ratio <= BALANCE_RATIO:
            break
        j += 1
    if best is None:  # doubling impossible; fall back to the direct clustering
        return balanced_kmeans(points64, k, seed)
    return merge_to_k(best[1], k)


def build_model(points, k: int, seed: int = 0) -> ClusterModel:
    """Clustering entry point: odd small k gets the doubling/merging pass."""
    if k >= 3 and k <= ODD_K_MAX and k % 2 == 1:
        return refine_small_odd_k(points, k, seed)
    return balanced_kmeans(points, k, seed)


def build_partition(index, k: int, seed: int = 0) -> tuple[ClusterModel, OracleTable, SampleInfo]:
    """Sample the index, cluster, and hand back the per-CN oracle."""
    sample = select_sample(index, seed)
    model = build_model(sample.vectors, k, seed)
    model.point_ids = sample.node_ids
    return model, OracleTable(model.centroids), sample
