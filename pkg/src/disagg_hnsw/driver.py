"""End-to-end experiment driver.

Two execution modes share the same routing and search code:

* ``deterministic``: a discrete-event simulation. Every query's service
  time is derived from its own search statistics (CPU per visited node
  plus remote reads amortized over per-worker coroutines), so load
  imbalance and cache misses show up in simulated throughput, and any two
  runs of the same config are byte-identical.
* ``concurrent``: real threads per CN (router plus workers) against the
  shared in-process fabric, reporting wall-clock throughput.

Queries are issued closed-loop: each CN has ``clients_per_cn`` clients
with one outstanding query each, and a client submits its next query
only when the previous one completes (wherever it was processed). This
keeps working-queue lengths meaningful as congestion signals, which the
adaptive limit update depends on; an open spigot that enqueued the whole
stream up front would let count-based policies distribute all work at
time zero and reduce every backlog report to a constant. The default
depth saturates the system at the same scale as the batch size and the
sync threshold: an overloaded CN then backs up by hundreds of entries,
so a backlog snapshot measures sustained imbalance rather than the
arrival jitter a few-entry queue would show.

A run is warm-up then measured phase over one query stream; caches and
adaptive limits carry across the boundary but metric counters do not.
The unified-cache replay reruns the identical stream with NoRouting
semantics against a single cache of the aggregate capacity, yielding the
CHR ceiling that the segmentation penalty is measured against.
"""

from __future__ import annotations

import heapq
import logging
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cache import CacheConfig, NodeCache
from .datasets import gen_synthetic, read_vectors
from .fabric import MSG_PROGRESS, MSG_QUERY, Fabric, arena_capacity_for
from .hnsw import DistributedIndex, Searcher, SearchStats
from .partition import OracleTable, build_partition
from .router import (
    DEFAULT_BATCH,
    POLICIES,
    CnRouter,
    ProgressReport,
    decode_query,
)
from .workload import (
    QueryStream,
    aggregate_chr,
    csp,
    gen_uniform,
    gen_zipf,
    ground_truth,
    recall_at_k,
    traffic_summary,
)

logger = logging.getLogger(__name__)

MODES = ("deterministic", "concurrent")


@dataclass
class ExperimentConfig:
    """Bench parameters; field defaults follow the reference setup, the
    ``desk`` preset scales them down to laptop size."""

    # dataset
    dataset: str | None = None  # vector file; None -> synthetic
    n: int = 100_000
    d: int = 32
    distribution: str = "gauss-mix"
    metric: str = "l2"
    # index
    m: int = 32
    ef_construction: int = 500
    ef_search: int = 64
    k: int = 10
    index_path: str | None = None
    # topology
    cns: int = 4
    mns: int = 2
    # cache
    cache_enabled: bool = True
    cache_ratio: float = 0.05
    cooling_fraction: float = 0.10
    admission_prob: float = 0.01
    # routing
    policy: str = "NoRouting"
    batch_b: int = DEFAULT_BATCH
    sync_t: int | None = None  # None -> batch_b
    # workload
    queries: str | None = None  # query pool file; None -> synthetic
    query_pool: int = 50_000
    warmup_queries: int = 10_000
    measured_queries: int = 40_000
    zipf_s: float | None = None  # None -> uniform; reference skew is 1.0
    # execution
    seed: int = 0
    mode: str = "deterministic"
    workers_per_cn: int = 4
    clients_per_cn: int = 1000  # saturating depth, same scale as batch_b/sync_t
    coroutines_per_worker: int = 4
    verb_latency_us: float = 2.0
    cpu_us_per_visit: float = 0.2
    unified_replay: bool = True
    recall_sample: int = 1000

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.clients_per_cn < 1:
            raise ValueError("clients_per_cn must be positive")
        if self.sync_t is None:
            self.sync_t = self.batch_b

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


DESK_PRESET = dict(n=100_000, d=32, m=16, ef_construction=200, cns=4, mns=2,
                   warmup_queries=10_000, measured_queries=40_000)


def apply_preset(cfg: ExperimentConfig, preset: str) -> ExperimentConfig:
    if preset == "desk":
        return cfg.with_overrides(**DESK_PRESET)
    raise ValueError(f"unknown preset {preset!r}")


def service_time_us(cfg: ExperimentConfig, stats: SearchStats) -> float:
    """Simulated query service time from its own search footprint."""
    reads = stats.node_reads + stats.list_reads
    return (cfg.cpu_us_per_visit * stats.visits
            + (cfg.verb_latency_us / cfg.coroutines_per_worker) * reads)


@dataclass
class QueryRecord:
    q_idx: int
    cn: int
    start_us: float
    end_us: float
    ids: list[int]
    stats: SearchStats


# ---------------------------------------------------------------------------
# Shared run context (index, partition, ground-truth cache)
# ---------------------------------------------------------------------------


@dataclass
class RunContext:
    cfg: ExperimentConfig
    dataset: np.ndarray
    index: DistributedIndex
    oracle: OracleTable
    model_summary: dict
    sample_summary: dict
    pool: np.ndarray
    truth_rows: dict[int, list[int]] = field(default_factory=dict)
    streams: dict = field(default_factory=dict)


def load_or_gen_dataset(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.dataset:
        data = read_vectors(cfg.dataset).astype(np.float32)
    else:
        data = gen_synthetic(cfg.n, cfg.d, cfg.distribution, cfg.seed)
    return np.ascontiguousarray(data, dtype=np.float32)


def load_or_gen_pool(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.queries:
        return np.ascontiguousarray(read_vectors(cfg.queries), dtype=np.float32)
    # fresh samples from the dataset's own distribution (shared mixture means)
    return gen_synthetic(cfg.query_pool, cfg.d, cfg.distribution, cfg.seed + 1,
                         means_seed=cfg.seed)


def build_index(cfg: ExperimentConfig, dataset: np.ndarray) -> DistributedIndex:
    cap = arena_capacity_for(len(dataset), cfg.d, cfg.m, cfg.mns)
    fabric = Fabric(cfg.mns, cfg.cns, cap, seed=cfg.seed)
    index = DistributedIndex.create(fabric, cfg.d, cfg.m, cfg.ef_construction,
                                    cfg.metric)
    t0 = time.perf_counter()
    index.build(dataset, seed=cfg.seed)
    logger.info("built %d nodes in %.1fs", index.meta.node_count,
                time.perf_counter() - t0)
    return index


def prepare(cfg: ExperimentConfig) -> RunContext:
    """Dataset + index + partition model, shared across a sweep."""
    dataset = load_or_gen_dataset(cfg)
    cfg = cfg.with_overrides(n=len(dataset), d=dataset.shape[1])
    if cfg.index_path and Path(cfg.index_path, "index_meta.json").exists():
        index = DistributedIndex.load(cfg.index_path, cn_count=cfg.cns)
        logger.info("loaded index from %s (%d nodes)", cfg.index_path,
                    index.meta.node_count)
    else:
        index = build_index(cfg, dataset)
        if cfg.index_path:
            index.save(cfg.index_path)
    model, oracle, sample = build_partition(index, cfg.cns, cfg.seed)
    pool = load_or_gen_pool(cfg)
    return RunContext(
        cfg, dataset, index, oracle,
        model_summary=model.describe(),
        sample_summary={"level": sample.level, "fallback": sample.fallback,
                        "size": len(sample.node_ids)},
        pool=pool,
    )


def make_stream(ctx: RunContext, cfg: ExperimentConfig) -> QueryStream:
    key = (cfg.zipf_s, cfg.warmup_queries, cfg.measured_queries, cfg.seed)
    if key not in ctx.streams:
        count = cfg.warmup_queries + cfg.measured_queries
        if cfg.zipf_s is None:
            stream = gen_uniform(ctx.pool, count, cfg.cns, cfg.seed,
                                 cfg.warmup_queries)
        else:
            stream = gen_zipf(ctx.pool, count, cfg.zipf_s, cfg.cns, cfg.seed,
                              cfg.warmup_queries)
        ctx.streams[key] = stream
    return ctx.streams[key]


def _cache_entry_bytes(cfg: ExperimentConfig) -> int:
    return 8 + 4 * cfg.d  # node payload: header + vector


def make_caches(cfg: ExperimentConfig, unified: bool) -> list[NodeCache | None]:
    if not cfg.cache_enabled:
        return [None] * cfg.cns
    entry = _cache_entry_bytes(cfg)
    per_cn = max(1, int(cfg.cache_ratio * cfg.n)) * entry
    if unified:
        shared = NodeCache(
            CacheConfig(per_cn * cfg.cns, entry, cfg.cooling_fraction,
                        cfg.admission_prob),
            seed=int(np.random.SeedSequence([cfg.seed, 0xCA, 0xFFFF]).generate_state(1)[0]),
        )
        return [shared] * cfg.cns
    return [
        NodeCache(
            CacheConfig(per_cn, entry, cfg.cooling_fraction, cfg.admission_prob),
            seed=int(np.random.SeedSequence([cfg.seed, 0xCA, cn]).generate_state(1)[0]),
        )
        for cn in range(cfg.cns)
    ]


# ---------------------------------------------------------------------------
# Deterministic discrete-event engine
# ---------------------------------------------------------------------------


@dataclass
class _CnState:
    router: CnRouter
    searcher: Searcher
    input: deque = field(default_factory=deque)
    working: deque = field(default_factory=deque)
    idle_workers: int = 0
    blocked: bool = False


class DesEngine:
    def __init__(self, cfg: ExperimentConfig, ctx: RunContext,
                 stream: QueryStream, unified: bool = False):
        self.cfg = cfg
        self.index = ctx.index
        self.fabric = ctx.index.fabric
        self.stream = stream
        policy = "NoRouting" if unified else cfg.policy
        caches = make_caches(cfg, unified)
        self.cns: list[_CnState] = []
        for cn in range(cfg.cns):
            client = self.fabric.client(cn)
            router = CnRouter(cn, cfg.cns, policy, ctx.oracle, client,
                              cfg.mns, cfg.batch_b, cfg.sync_t, cfg.seed)
            searcher = self.index.searcher(
                client, caches[cn],
                admission_rng=np.random.default_rng(
                    np.random.SeedSequence([cfg.seed, 0xAD, cn])),
                admission_prob=cfg.admission_prob,
            )
            self.cns.append(_CnState(router, searcher,
                                     idle_workers=cfg.workers_per_cn))
        self.caches = caches
        self.records: list[QueryRecord] = []
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self._pending: list[deque] = []
        self._outstanding = 0
        self.max_outstanding = 0

    # -- event plumbing --

    def _schedule(self, t: float, kind: str, cn: int, q_idx: int = -1) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, cn, q_idx))
        self._seq += 1

    def _issue(self, cn: int) -> None:
        """One client at ``cn`` submits its next query to the local router."""
        q_idx = self._pending[cn].popleft()
        self.cns[cn].input.append(q_idx)
        self._outstanding += 1
        self.max_outstanding = max(self.max_outstanding, self._outstanding)
        self._schedule(self.now, "route", cn)

    def _deliver(self) -> None:
        """Move fabric messages to their CNs; zero modeled latency."""
        self.fabric.pump_all_routers()
        for cn, st in enumerate(self.cns):
            while True:
                msg = st.router.client.recv()
                if msg is None:
                    break
                if msg.kind == MSG_QUERY:
                    q_idx, _ = decode_query(msg.payload)
                    st.working.append(q_idx)
                    self._schedule(self.now, "dispatch", cn)
                elif msg.kind == MSG_PROGRESS:
                    st.router.note_report(ProgressReport.decode(msg.payload))
                    if st.blocked:
                        self._schedule(self.now, "route", cn)

    # -- event handlers --

    def _router_step(self, cn: int) -> None:
        st = self.cns[cn]
        router = st.router
        while True:
            if st.blocked:
                if router.try_finish_sync(len(st.working)):
                    st.blocked = False
                else:
                    return
            if router.at_batch_boundary():
                router.end_of_batch(len(st.working))
                self._deliver()
                if router.policy == "Adaptive":
                    st.blocked = True
                    continue
            if not st.input:
                return
            q_idx = st.input.popleft()
            vec = self.stream.vector(q_idx)
            dest = router.route(vec)
            if dest == cn:
                st.working.append(q_idx)
                self._schedule(self.now, "dispatch", cn)
            else:
                router.forward(dest, q_idx, cn, vec)
                self._deliver()

    def _dispatch(self, cn: int) -> None:
        st = self.cns[cn]
        while st.idle_workers > 0 and st.working:
            q_idx = st.working.popleft()
            st.idle_workers -= 1
            ids, stats = self._execute(st, q_idx)
            end = self.now + service_time_us(self.cfg, stats)
            self.records.append(QueryRecord(q_idx, cn, self.now, end, ids, stats))
            self._schedule(end, "complete", cn, q_idx)

    def _execute(self, st: _CnState, q_idx: int):
        vec = self.stream.vector(q_idx)
        found = st.searcher.knn_search(vec, self.cfg.k, self.cfg.ef_search)
        return [nid for _, nid, _ in found], st.searcher.last_stats

    def _complete(self, cn: int, q_idx: int) -> None:
        st = self.cns[cn]
        st.idle_workers += 1
        self._outstanding -= 1
        # closed loop: the client that owns this query submits its next one
        arrival = int(self.stream.arrival_cns[q_idx])
        if self._pending[arrival]:
            self._issue(arrival)
        self._dispatch(cn)
        if st.blocked:
            self._router_step(cn)

    # -- phase loop --

    def run_phase(self, lo: int, hi: int) -> list[QueryRecord]:
        self.records = []
        self.now = 0.0
        self._heap = []
        self._outstanding = 0
        for st in self.cns:
            assert not st.working and not st.input, "previous phase left work"
        arrivals = self.stream.arrival_cns
        self._pending = [deque() for _ in self.cns]
        for i in range(lo, hi):
            self._pending[int(arrivals[i])].append(i)
        for cn in range(len(self.cns)):
            for _ in range(min(self.cfg.clients_per_cn, len(self._pending[cn]))):
                self._issue(cn)
        while True:
            while self._heap:
                t, _, kind, cn, q_idx = heapq.heappop(self._heap)
                self.now = t
                if kind == "route":
                    self._router_step(cn)
                elif kind == "dispatch":
                    self._dispatch(cn)
                else:
                    self._complete(cn, q_idx)
            stuck = [cn for cn, st in enumerate(self.cns)
                     if st.blocked or st.input]
            if not stuck:
                break
            progressed = False
            for cn in stuck:
                st = self.cns[cn]
                if st.blocked:
                    # peers went quiet; finish the batch on stale reports
                    if st.router.try_finish_sync(len(st.working), poll_budget=-1):
                        st.blocked = False
                        progressed = True
                        self._schedule(self.now, "route", cn)
                elif st.input:
                    progressed = True
                    self._schedule(self.now, "route", cn)
            if not progressed:
                raise RuntimeError("scheduler wedged: blocked routers cannot drain")
        for st in self.cns:
            assert not st.working and not st.input
        assert self._outstanding == 0 and not any(self._pending)
        return self.records


# ---------------------------------------------------------------------------
# Concurrent (threaded) engine
# ---------------------------------------------------------------------------


class ThreadEngine:
    """Real threads per CN: one router and workers_per_cn workers.

    The router is the sole producer into its working queue, draining both
    the client input and the CN inbox (forwarded queries, progress
    reports). Clients are closed-loop as in the simulator: a semaphore of
    clients_per_cn permits per arrival CN, released when that client's
    query completes. Throughput is wall-clock; determinism is not
    promised.
    """

    SYNC_TIMEOUT_S = 0.1

    def __init__(self, cfg: ExperimentConfig, ctx: RunContext,
                 stream: QueryStream, unified: bool = False):
        self.cfg = cfg
        self.index = ctx.index
        self.fabric = ctx.index.fabric
        self.stream = stream
        policy = "NoRouting" if unified else cfg.policy
        caches = make_caches(cfg, unified)
        self.caches = caches
        self.routers = []
        self.searchers: list[list[Searcher]] = []
        for cn in range(cfg.cns):
            self.routers.append(CnRouter(cn, cfg.cns, policy, ctx.oracle,
                                         self.fabric.client(cn), cfg.mns,
                                         cfg.batch_b, cfg.sync_t, cfg.seed))
            per_worker = []
            for w in range(cfg.workers_per_cn):
                per_worker.append(self.index.searcher(
                    self.fabric.client(cn), caches[cn],
                    admission_rng=np.random.default_rng(
                        np.random.SeedSequence([cfg.seed, 0xAD, cn, w])),
                    admission_prob=cfg.admission_prob))
            self.searchers.append(per_worker)
        self.records: list[QueryRecord] = []

    def run_phase(self, lo: int, hi: int) -> list[QueryRecord]:
        cfg = self.cfg
        total = hi - lo
        records: list[QueryRecord] = []
        rec_lock = threading.Lock()
        done = threading.Event()
        processed = [0]
        working = [deque() for _ in range(cfg.cns)]
        conds = [threading.Condition() for _ in range(cfg.cns)]
        inputs = [deque() for _ in range(cfg.cns)]
        sems = [threading.Semaphore(cfg.clients_per_cn) for _ in range(cfg.cns)]
        for i in range(lo, hi):
            inputs[int(self.stream.arrival_cns[i])].append(i)

        def pump():
            while not done.is_set():
                self.fabric.pump_all_routers()
                time.sleep(0.0002)
            self.fabric.pump_all_routers()

        def drain_inbox(cn):
            router = self.routers[cn]
            moved = False
            while True:
                msg = router.client.recv()
                if msg is None:
                    return moved
                if msg.kind == MSG_QUERY:
                    q_idx, _ = decode_query(msg.payload)
                    with conds[cn]:
                        working[cn].append(q_idx)
                        conds[cn].notify()
                    moved = True
                elif msg.kind == MSG_PROGRESS:
                    router.note_report(ProgressReport.decode(msg.payload))

        def route_loop(cn):
            router = self.routers[cn]
            my_input = inputs[cn]
            while my_input:
                drain_inbox(cn)
                if router.at_batch_boundary():
                    router.end_of_batch(len(working[cn]))
                    if router.policy == "Adaptive":
                        deadline = time.perf_counter() + self.SYNC_TIMEOUT_S
                        while True:
                            drain_inbox(cn)
                            budget = 10 if time.perf_counter() < deadline else -1
                            if router.try_finish_sync(len(working[cn]), budget):
                                break
                            time.sleep(0.0002)
                if not sems[cn].acquire(timeout=0.0005):
                    continue  # all local clients still have queries in flight
                q_idx = my_input.popleft()
                vec = self.stream.vector(q_idx)
                dest = router.route(vec)
                if dest == cn:
                    with conds[cn]:
                        working[cn].append(q_idx)
                        conds[cn].notify()
                else:
                    router.forward(dest, q_idx, cn, vec)
            while not done.is_set():  # keep accepting forwarded arrivals
                drain_inbox(cn)
                time.sleep(0.0002)
            drain_inbox(cn)

        def work_loop(cn, w):
            searcher = self.searchers[cn][w]
            while True:
                with conds[cn]:
                    while not working[cn]:
                        if done.is_set():
                            return
                        conds[cn].wait(timeout=0.01)
                    q_idx = working[cn].popleft()
                t0 = time.perf_counter()
                vec = self.stream.vector(q_idx)
                found = searcher.knn_search(vec, cfg.k, cfg.ef_search)
                t1 = time.perf_counter()
                rec = QueryRecord(q_idx, cn, t0 * 1e6, t1 * 1e6,
                                  [nid for _, nid, _ in found],
                                  searcher.last_stats)
                with rec_lock:
                    records.append(rec)
                    processed[0] += 1
                sems[int(self.stream.arrival_cns[q_idx])].release()

        threads = [threading.Thread(target=pump, daemon=True)]
        for cn in range(cfg.cns):
            threads.append(threading.Thread(target=route_loop, args=(cn,), daemon=True))
            for w in range(cfg.workers_per_cn):
                threads.append(threading.Thread(target=work_loop, args=(cn, w), daemon=True))
        for t in threads:
            t.start()
        while processed[0] < total:
            time.sleep(0.002)
        done.set()
        for cn in range(cfg.cns):
            with conds[cn]:
                conds[cn].notify_all()
        for t in threads:
            t.join(timeout=5)
        records.sort(key=lambda r: r.q_idx)
        return records


# ---------------------------------------------------------------------------
# Runs, metrics, reports
# ---------------------------------------------------------------------------


def _recall_for_records(ctx: RunContext, cfg: ExperimentConfig,
                        stream: QueryStream,
                        by_idx: dict[int, QueryRecord]) -> float | None:
    if not cfg.recall_sample:
        return None
    lo = cfg.warmup_queries
    hi = min(lo + cfg.recall_sample, len(stream))
    rows = sorted({int(stream.picks[i]) for i in range(lo, hi)})
    missing = [r for r in rows if r not in ctx.truth_rows]
    if missing:
        truth = ground_truth(ctx.dataset, ctx.pool[missing], cfg.k, cfg.metric)
        for row, ids in zip(missing, truth):
            ctx.truth_rows[row] = [int(x) for x in ids]
    recalls = [
        recall_at_k(by_idx[i].ids, ctx.truth_rows[int(stream.picks[i])], cfg.k)
        for i in range(lo, hi)
    ]
    return float(np.mean(recalls)) if recalls else None


def summarize_run(cfg: ExperimentConfig, ctx: RunContext, stream: QueryStream,
                  warm_records: list[QueryRecord],
                  meas_records: list[QueryRecord],
                  engine, wall_seconds: float | None) -> dict:
    by_idx = {r.q_idx: r for r in meas_records}
    per_cn = []
    agg = SearchStats()
    warm = SearchStats()
    for r in warm_records:
        warm.add(r.stats)
    cn_stats = [SearchStats() for _ in range(cfg.cns)]
    cn_counts = [0] * cfg.cns
    for r in meas_records:
        agg.add(r.stats)
        cn_stats[r.cn].add(r.stats)
        cn_counts[r.cn] += 1
    for cn in range(cfg.cns):
        s = cn_stats[cn]
        per_cn.append({
            "cn": cn,
            "queries": cn_counts[cn],
            "cache_hits": s.cache_hits,
            "cache_misses": s.cache_misses,
            "chr": aggregate_chr(s.cache_hits, s.cache_hits + s.cache_misses),
            "read_bytes": s.node_bytes + s.list_bytes,
            "forwarded": engine.cns[cn].router.forwarded if hasattr(engine, "cns")
                         else engine.routers[cn].forwarded,
        })
    routers = [st.router for st in engine.cns] if hasattr(engine, "cns") else engine.routers
    vector_bytes = agg.visits * 4 * cfg.d
    report = {
        "schema_version": 1,
        "config": asdict(cfg),
        "partition": {"model": ctx.model_summary, "sample": ctx.sample_summary},
        "warmup": {
            "queries": len(warm_records),
            "accesses": warm.cache_hits + warm.cache_misses,
            "cache_hits": warm.cache_hits,
        },
        "measured": {
            "queries": len(meas_records),
            "accesses": agg.cache_hits + agg.cache_misses,
            "cache_hits": agg.cache_hits,
            "cache_misses": agg.cache_misses,
            "chr": aggregate_chr(agg.cache_hits, agg.cache_hits + agg.cache_misses),
            "visits": agg.visits,
            "expansions": agg.expansions,
            "node_reads": agg.node_reads,
            "list_reads": agg.list_reads,
            "read_bytes": agg.node_bytes + agg.list_bytes,
            "traffic": traffic_summary(agg.list_bytes, vector_bytes,
                                       agg.node_bytes + agg.list_bytes,
                                       len(meas_records)),
        },
        "per_cn": per_cn,
        "recall_at_k": _recall_for_records(ctx, cfg, stream, by_idx),
        "limit_traces": {str(cn): routers[cn].limit_trace
                         for cn in range(cfg.cns) if routers[cn].limit_trace},
        "cache_totals_cumulative": [
            (c.stats() if c is not None else None)
            for c in (engine.caches[:1] if engine.caches and engine.caches[0] is not None
                      and all(c is engine.caches[0] for c in engine.caches)
                      else engine.caches)
        ],
    }
    if meas_records:
        if cfg.mode == "deterministic":
            start = min(r.start_us for r in meas_records)
            end = max(r.end_us for r in meas_records)
            span_s = (end - start) / 1e6
            report["measured"]["simulated_qps"] = (
                len(meas_records) / span_s if span_s > 0 else 0.0)
            report["measured"]["simulated_makespan_s"] = span_s
        else:
            report["measured"]["wall_qps"] = (
                len(meas_records) / wall_seconds if wall_seconds else 0.0)
            report["measured"]["wall_seconds"] = wall_seconds
    return report


def run_single(cfg: ExperimentConfig, ctx: RunContext,
               unified: bool = False) -> dict:
    """One warm-up + measured run; returns the report dict (no CSP yet)."""
    stream = make_stream(ctx, cfg)
    engine_cls = DesEngine if cfg.mode == "deterministic" else ThreadEngine
    engine = engine_cls(cfg, ctx, stream, unified=unified)
    t0 = time.perf_counter()
    warm = engine.run_phase(0, cfg.warmup_queries)
    meas = engine.run_phase(cfg.warmup_queries, len(stream))
    wall = time.perf_counter() - t0
    report = summarize_run(cfg, ctx, stream, warm, meas, engine,
                           wall_seconds=wall if cfg.mode == "concurrent" else None)
    if unified:
        report["unified"] = True
    return report


def unified_chr_max(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    """CHR of the identical stream against one cache of aggregate capacity."""
    report = run_single(cfg, ctx, unified=True)
    return {
        "chr_max": report["measured"]["chr"],
        "report": report,
    }


def run_experiment(cfg: ExperimentConfig, ctx: RunContext | None = None,
                   chr_max: float | None = None) -> dict:
    if ctx is None:
        ctx = prepare(cfg)
    report = run_single(cfg, ctx)
    if cfg.cache_enabled:
        if chr_max is None and cfg.unified_replay:
            chr_max = unified_chr_max(cfg, ctx)["chr_max"]
        if chr_max:
            report["chr_max"] = chr_max
            report["csp"] = csp(report["measured"]["chr"], chr_max)
    return report


def tune_efs(cfg: ExperimentConfig, target_recall: float = 0.95,
             ctx: RunContext | None = None, val_queries: int = 1000) -> dict:
    """Smallest ef_search reaching the target R@k: doubling then bisection."""
    if ctx is None:
        ctx = prepare(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7E5]))
    rows = np.sort(rng.choice(len(ctx.pool), size=min(val_queries, len(ctx.pool)),
                              replace=False))
    qvecs = ctx.pool[rows]
    truth = ground_truth(ctx.dataset, qvecs, cfg.k, cfg.metric)
    searcher = ctx.index.searcher(ctx.index.fabric.client(-1))

    def measure(ef: int) -> float:
        vals = []
        for q, t in zip(qvecs, truth):
            found = searcher.knn_search(q, cfg.k, ef)
            vals.append(recall_at_k([nid for _, nid, _ in found], t, cfg.k))
        return float(np.mean(vals))

    trace = []
    ef = cfg.k
    r = measure(ef)
    trace.append({"ef_search": ef, "recall": r})
    if r >= target_recall:
        return {"ef_search": ef, "recall": r, "trace": trace, "reached": True}
    lo = ef
    while r < target_recall:
        if ef >= ctx.index.meta.node_count:
            return {"ef_search": ef, "recall": r, "trace": trace, "reached": False}
        lo = ef
        ef = min(ef * 2, ctx.index.meta.node_count)
        r = measure(ef)
        trace.append({"ef_search": ef, "recall": r})
    hi, hi_r = ef, r
    while hi - lo > 1:
        mid = (lo + hi) // 2
        r = measure(mid)
        trace.append({"ef_search": mid, "recall": r})
        if r >= target_recall:
            hi, hi_r = mid, r
        else:
            lo = mid
    return {"ef_search": hi, "recall": hi_r, "trace": trace, "reached": True}


def sweep(cfg: ExperimentConfig, policies=POLICIES,
          ctx: RunContext | None = None) -> dict:
    """All policies over one stream and one build; one shared CHR_max."""
    if ctx is None:
        ctx = prepare(cfg)
    chr_max = None
    if cfg.cache_enabled and cfg.unified_replay:
        chr_max = unified_chr_max(cfg, ctx)["chr_max"]
    runs = []
    for policy in policies:
        run_cfg = cfg.with_overrides(policy=policy)
        runs.append(run_experiment(run_cfg, ctx, chr_max=chr_max))
    return {
        "schema_version": 1,
        "sweep": {"policies": list(policies), "zipf_s": cfg.zipf_s,
                  "chr_max": chr_max},
        "runs": runs,
    }
