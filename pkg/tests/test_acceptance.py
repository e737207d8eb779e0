"""Acceptance gate: twelve end-to-end checks, one verdict line each.

Heavy shared state (the 100k-vector desk context, the policy sweeps, the
10k dual build) lives in session fixtures so the whole gate costs one
build per index regardless of how many checks read it. Budgets are wall
clock on a single worker; the desk-scale checks measure supersets of the
minimum required runs, so a budget pass is conservative.
"""

import threading
import time

import numpy as np
import pytest

from disagg_hnsw.cache import CacheConfig, NodeCache
from disagg_hnsw.driver import (
    ExperimentConfig,
    apply_preset,
    prepare,
    run_experiment,
    sweep,
    tune_efs,
    unified_chr_max,
)
from disagg_hnsw.fabric import Fabric, arena_capacity_for
from disagg_hnsw.hnsw import DistributedIndex
from disagg_hnsw.layout import (
    LayoutParams,
    NodeRecord,
    decode_node,
    encode_node,
    node_size,
)
from disagg_hnsw.reference import LocalHnsw
from disagg_hnsw.report import report_to_json_bytes
from disagg_hnsw.router import update_limits
from disagg_hnsw.workload import csp, ground_truth, recall_at_k


# ---------------------------------------------------------------------------
# Shared heavy fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def dual_build():
    """10k-vector index built twice: over the fabric and in one address space."""
    data = np.random.default_rng(2026).random((10_000, 16), dtype=np.float32)
    t0 = time.perf_counter()
    fabric = Fabric(2, 2, arena_capacity_for(10_000, 16, 16, 2), seed=0)
    index = DistributedIndex.create(fabric, 16, 16, 200)
    index.build(data, seed=7)
    ref = LocalHnsw(16, 16, 200)
    ref.build(data, seed=7)
    return {"index": index, "ref": ref, "data": data,
            "build_s": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def desk_ctx():
    cfg = apply_preset(ExperimentConfig(), "desk")
    return prepare(cfg)


@pytest.fixture(scope="session")
def desk_tuning(desk_ctx):
    t0 = time.perf_counter()
    out = tune_efs(desk_ctx.cfg, 0.95, desk_ctx)
    out["elapsed_s"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def desk_run_cfg(desk_ctx, desk_tuning):
    return desk_ctx.cfg.with_overrides(ef_search=desk_tuning["ef_search"])


@pytest.fixture(scope="session")
def skew_sweeps(desk_ctx, desk_run_cfg):
    """The full desk policy sweep at s=1.0, run twice."""
    cfg = desk_run_cfg.with_overrides(zipf_s=1.0)
    t0 = time.perf_counter()
    first = sweep(cfg, ctx=desk_ctx)
    first_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    second = sweep(cfg, ctx=desk_ctx)
    return {"first": first, "second": second,
            "first_s": first_s, "second_s": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def uniform_runs(desk_ctx, desk_run_cfg):
    """Uniform-workload trio: shared-cache replay, cache-only, Adaptive."""
    t0 = time.perf_counter()
    chr_max = unified_chr_max(desk_run_cfg, desk_ctx)["chr_max"]
    out = {"chr_max": chr_max}
    for policy in ("NoRouting", "Adaptive"):
        out[policy] = run_experiment(
            desk_run_cfg.with_overrides(policy=policy), desk_ctx,
            chr_max=chr_max)
    out["elapsed_s"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def skew_chr_curve(desk_ctx, desk_run_cfg, skew_sweeps):
    """Cache-only CHR across Zipf exponents; s=1.0 reuses the sweep run."""
    curve = {}
    for s in (0.5, 1.25, 1.5):
        rep = run_experiment(
            desk_run_cfg.with_overrides(zipf_s=s, policy="NoRouting",
                                        unified_replay=False),
            desk_ctx)
        curve[s] = rep["measured"]["chr"]
    nr = next(r for r in skew_sweeps["first"]["runs"]
              if r["config"]["policy"] == "NoRouting")
    curve[1.0] = nr["measured"]["chr"]
    return curve


@pytest.fixture(scope="session")
def wide_uncached_run():
    """d=128, cache off, uniform queries: the list/vector traffic probe."""
    cfg = ExperimentConfig(
        n=10_000, d=128, distribution="uniform", m=16, ef_construction=200,
        ef_search=64, cns=4, mns=2, cache_enabled=False, query_pool=3_000,
        warmup_queries=500, measured_queries=2_500, seed=0, recall_sample=0,
        unified_replay=False)
    return run_experiment(cfg, prepare(cfg))


# ---------------------------------------------------------------------------
# The twelve checks
# ---------------------------------------------------------------------------


def test_c01_node_layout_sizes_and_round_trip():
    t0 = time.perf_counter()
    assert node_size(128, 32, 0) == 1036
    assert node_size(128, 32, 1) == 1296
    assert node_size(128, 32, 2) == 1556
    rng = np.random.default_rng(0xACC1)
    for _ in range(10_000):
        d = int(rng.integers(1, 65))
        m = int(rng.integers(2, 33))
        level = int(rng.integers(0, 4))
        params = LayoutParams(d, m)
        neighbors = []
        for lv in range(level + 1):
            cap = 2 * m if lv == 0 else m
            cnt = int(rng.integers(0, cap + 1))
            neighbors.append(
                [int(a) for a in rng.integers(0, 1 << 63, size=cnt, dtype=np.uint64)])
        record = NodeRecord(
            int(rng.integers(0, 1 << 40)), level,
            rng.random(d, dtype=np.float32), neighbors,
            int(rng.integers(0, 2)))
        assert decode_node(encode_node(record, params), params) == record
    assert time.perf_counter() - t0 < 5.0


def test_c02_distributed_build_equals_reference(dual_build):
    t0 = time.perf_counter()
    index, ref = dual_build["index"], dual_build["ref"]
    assert index.meta.node_count == len(dual_build["data"])
    assert list(index.node_levels) == list(ref.levels)
    got = index.adjacency()
    want = ref.adjacency()
    mismatched = [nid for nid in range(index.meta.node_count)
                  if got[nid] != want[nid]]
    assert mismatched == []
    assert index.meta.entry_addr == index.node_addrs[ref.entry_id]
    assert dual_build["build_s"] + (time.perf_counter() - t0) < 120.0


def test_c03_results_survive_cache_and_node_placement(dual_build):
    index = dual_build["index"]
    pool = np.random.default_rng(123).random((1000, 16), dtype=np.float32)
    t0 = time.perf_counter()
    plain = index.searcher()
    entry = 8 + 4 * 16
    cached = [
        index.searcher(index.fabric.client(cn),
                       NodeCache(CacheConfig((500 + 300 * cn) * entry, entry),
                                 seed=cn),
                       admission_rng=np.random.default_rng(50 + cn),
                       admission_prob=0.01)
        for cn in (0, 1)
    ]
    baseline = []
    for i, q in enumerate(pool):
        base = {nid for _, nid, _ in plain.knn_search(q, 10, 64)}
        baseline.append(base)
        for s in cached:
            assert {nid for _, nid, _ in s.knn_search(q, 10, 64)} == base, i
    # second pass over warm caches must still agree
    warm_hits = 0
    for i, q in enumerate(pool[:200]):
        for s in cached:
            assert {nid for _, nid, _ in s.knn_search(q, 10, 64)} == baseline[i], i
            warm_hits += s.last_stats.cache_hits
    assert warm_hits > 0  # the caches did serve payloads
    assert time.perf_counter() - t0 < 60.0


def test_c04_ef_search_tuning_recall(desk_ctx, desk_tuning):
    assert desk_tuning["reached"] is True
    assert desk_tuning["recall"] >= 0.95
    t0 = time.perf_counter()
    cfg = desk_ctx.cfg
    # held-out rows disjoint from the tuning sample
    tune_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E5]))
    tuned_rows = set(
        tune_rng.choice(len(desk_ctx.pool), size=1000, replace=False).tolist())
    held_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x4E1D]))
    candidates = np.array(sorted(set(range(len(desk_ctx.pool))) - tuned_rows))
    rows = np.sort(held_rng.choice(candidates, size=1000, replace=False))
    truth = ground_truth(desk_ctx.dataset, desk_ctx.pool[rows], cfg.k, cfg.metric)
    searcher = desk_ctx.index.searcher()
    ef = desk_tuning["ef_search"]
    recalls = []
    for q, t in zip(desk_ctx.pool[rows], truth):
        found = searcher.knn_search(q, cfg.k, ef)
        recalls.append(recall_at_k([nid for _, nid, _ in found], t, cfg.k))
    assert float(np.mean(recalls)) >= 0.93
    assert desk_tuning["elapsed_s"] + (time.perf_counter() - t0) < 600.0


def test_c05_segmentation_penalty_formula():
    assert csp(0.25, 1.0) == 0.75
    assert csp(0.15, 0.60) == 0.75


def test_c06_routing_lifts_hit_rate_and_cuts_penalty(uniform_runs, skew_sweeps):
    cache_only = uniform_runs["NoRouting"]
    adaptive = uniform_runs["Adaptive"]
    assert adaptive["measured"]["chr"] >= 1.5 * cache_only["measured"]["chr"]
    assert adaptive["csp"] <= 0.7 * cache_only["csp"]
    assert uniform_runs["elapsed_s"] < 900.0
    by_policy = {r["config"]["policy"]: r for r in skew_sweeps["first"]["runs"]}
    assert by_policy["Adaptive"]["csp"] <= 0.6 * by_policy["NoRouting"]["csp"]
    assert skew_sweeps["first_s"] < 900.0


def test_c07_policy_ordering_under_skew(skew_sweeps):
    by_policy = {r["config"]["policy"]: r for r in skew_sweeps["first"]["runs"]}
    qps = {p: by_policy[p]["measured"]["simulated_qps"] for p in by_policy}
    assert qps["Adaptive"] >= qps["Balanced"] >= qps["BestFit"], qps
    chr_ = {p: by_policy[p]["measured"]["chr"] for p in by_policy}
    assert chr_["BestFit"] >= chr_["Balanced"] >= chr_["NoRouting"], chr_


def test_c08_limit_update_arithmetic():
    got = update_limits([30.0, 10.0, 10.0, 10.0], 1000)
    want = [500 / 3, 2500 / 9, 2500 / 9, 2500 / 9]
    assert max(abs(g - w) for g, w in zip(got, want)) < 1e-9
    rng = np.random.default_rng(0xACC8)
    for _ in range(10_000):
        k = int(rng.integers(1, 9))
        progress = (rng.random(k) * 10.0 ** int(rng.integers(0, 4))).tolist()
        if rng.random() < 0.3:  # zeros exercise the idle-CN branch
            progress = [0.0 if rng.random() < 0.5 else p for p in progress]
        limits = update_limits(progress, 1000)
        assert abs(sum(limits) - 1000.0) < 1e-6


def test_c09_cache_invariants_under_stress():
    t0 = time.perf_counter()
    entry = 72
    capacity = 10_000
    cache = NodeCache(CacheConfig(capacity * entry, entry, 0.10, 0.01), seed=3)
    keyspace = 40_000
    ops_per_worker = 62_500  # 16 workers -> 1e6 ops

    def canonical(key: int) -> bytes:
        return key.to_bytes(8, "little") * 9

    torn = []
    over_capacity = []

    def worker(wid: int) -> None:
        rng = np.random.default_rng(1000 + wid)
        draws = rng.integers(0, keyspace, size=ops_per_worker)
        admit = rng.random(ops_per_worker)
        for i in range(ops_per_worker):
            key = int(draws[i])
            got = cache.lookup(key)
            if got is not None:
                if got != canonical(key):
                    torn.append((wid, key))
                    return
            elif admit[i] < 0.5:
                cache.insert(key, canonical(key))
            if i % 5000 == 0 and len(cache) > capacity:
                over_capacity.append((wid, len(cache)))

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(16)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    elapsed = time.perf_counter() - t0
    assert torn == []
    assert over_capacity == []
    assert len(cache) <= capacity
    assert 0.8 * 0.10 * capacity <= cache.cooling_population() <= 1.2 * 0.10 * capacity
    cache.check_coherence()
    assert elapsed < 120.0


def test_c10_hit_rate_rises_with_skew(skew_chr_curve):
    curve = skew_chr_curve
    assert curve[0.5] < curve[1.0] < curve[1.5], curve
    assert curve[1.25] >= 0.90 * curve[1.5], curve


def test_c11_neighbor_list_traffic_ratio(wide_uncached_run):
    ratio = wide_uncached_run["measured"]["traffic"][
        "neighborlist_to_vector_byte_ratio"]
    assert 2 / 128 <= ratio <= 8 / 128, ratio


def test_c12_desk_sweep_byte_identical(skew_sweeps):
    first = report_to_json_bytes(skew_sweeps["first"])
    second = report_to_json_bytes(skew_sweeps["second"])
    assert first == second
