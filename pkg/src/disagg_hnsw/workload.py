"""Query streams, brute-force ground truth, and the benchmark metrics.

Skew follows a Zipf law over the query pool: pool entries are ranked by a
seed-fixed permutation and rank r is drawn with probability proportional
to r^-s, so "some queries occur more frequently than others" without
changing the pool itself. Every query gets a uniformly random arrival CN,
standing in for independent clients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .hnsw import METRIC_L2, batch_distances

logger = logging.getLogger(__name__)


@dataclass
class QueryStream:
    """Ordered queries with their arrival CNs; indexes into a shared pool."""

    pool: np.ndarray  # (p, d) float32
    picks: np.ndarray  # (n,) pool row per query
    arrival_cns: np.ndarray  # (n,) CN id per query
    warmup_count: int
    s: float | None = None  # None for uniform

    def __len__(self) -> int:
        return len(self.picks)

    @property
    def measured_count(self) -> int:
        return len(self.picks) - self.warmup_count

    def vector(self, i: int) -> np.ndarray:
        return self.pool[self.picks[i]]


def _assign_arrivals(count: int, cn_count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(cn_count, size=count)


def gen_uniform(query_pool: np.ndarray, count: int, cn_count: int, seed: int,
                warmup_count: int = 0) -> QueryStream:
    if len(query_pool) == 0:
        raise ValueError("empty query pool")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57EA]))
    picks = rng.integers(len(query_pool), size=count)
    return QueryStream(query_pool, picks, _assign_arrivals(count, cn_count, rng),
                       warmup_count)


def gen_zipf(query_pool: np.ndarray, count: int, s: float, cn_count: int, seed: int,
             warmup_count: int = 0) -> QueryStream:
    """Zipf-over-pool: P(rank r) proportional to r^-s, ranks by a seeded shuffle."""
    if len(query_pool) == 0:
        raise ValueError("empty query pool")
    if s <= 0:
        raise ValueError("zipf exponent must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57EA]))
    n = len(query_pool)
    ranked = rng.permutation(n)  # ranked[r] = pool row holding rank r+1
    weights = (np.arange(1, n + 1, dtype=np.float64)) ** (-s)
    weights /= weights.sum()
    ranks = rng.choice(n, size=count, p=weights)
    picks = ranked[ranks]
    stream = QueryStream(query_pool, picks, _assign_arrivals(count, cn_count, rng),
                         warmup_count, s=s)
    return stream


def brute_force_knn(dataset: np.ndarray, q, k: int, metric: str = METRIC_L2) -> list[int]:
    """Exact linear scan; ties broken by lower id."""
    if k > len(dataset):
        raise ValueError(f"k={k} exceeds dataset size {len(dataset)}")
    q64 = np.asarray(q, dtype=np.float32).astype(np.float64)
    dists = batch_distances(q64, np.asarray(dataset, dtype=np.float32), metric)
    order = np.lexsort((np.arange(len(dists)), dists))
    return [int(i) for i in order[:k]]


def ground_truth(dataset: np.ndarray, queries: np.ndarray, k: int,
                 metric: str = METRIC_L2) -> np.ndarray:
    """brute_force_knn over many queries; (q, k) int32 id matrix."""
    out = np.empty((len(queries), k), dtype=np.int32)
    for i, q in enumerate(queries):
        out[i] = brute_force_knn(dataset, q, k, metric)
        if (i + 1) % 2000 == 0:
            logger.info("ground truth %d/%d", i + 1, len(queries))
    return out


def recall_at_k(result_ids, truth_ids, k: int) -> float:
    if len(truth_ids) != k:
        raise ValueError(f"truth must have exactly k={k} ids")
    return len(set(result_ids) & set(int(t) for t in truth_ids)) / k


def csp(chr_value: float, chr_max: float) -> float:
    """Cache segmentation penalty: 1 - CHR / CHR_max.

    The fraction of the aggregate cache capacity lost to duplication across
    per-CN caches, relative to one unified cache of the summed size.
    """
    if not (0 < chr_max <= 1):
        raise ValueError(f"chr_max must be in (0, 1], got {chr_max}")
    if chr_value < 0:
        raise ValueError(f"negative hit rate {chr_value}")
    if chr_value > chr_max:
        logger.warning("CHR %.4f exceeds CHR_max %.4f; clamping CSP to 0",
                       chr_value, chr_max)
        return 0.0
    return 1.0 - chr_value / chr_max


def aggregate_chr(hits: int, accesses: int) -> float:
    """Sum-based hit rate: total hits over total accesses, never a mean of rates."""
    return hits / accesses if accesses else 0.0


def traffic_summary(list_bytes: int, vector_bytes: int, read_bytes: int,
                    query_count: int) -> dict:
    """Per-query remote read volume and the neighbor-list/vector byte ratio."""
    if query_count == 0:
        return {"bytes_per_query": 0.0, "neighborlist_to_vector_byte_ratio": 0.0}
    ratio = (list_bytes / vector_bytes) if vector_bytes else 0.0
    return {
        "bytes_per_query": read_bytes / query_count,
        "neighborlist_to_vector_byte_ratio": ratio,
    }
