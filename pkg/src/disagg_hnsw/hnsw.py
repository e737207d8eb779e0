"""Distributed HNSW over the emulated fabric.

The graph lives entirely in memory-node arenas; compute nodes traverse it
with one-sided reads. Construction and search are written once against a
small storage-view interface, so the in-process reference implementation
(:mod:`disagg_hnsw.reference`) runs the byte-for-byte identical algorithm
over local arrays — the two builds must produce identical adjacency.

Search is the classic level descent: greedy ef=1 walks from the entry point
down to level 1, then a best-first beam of width ``ef_search`` at the base
level. Neighbor lists are fetched with one remote read each; node payloads
(header + vector) go through the per-compute-node cache when one is
attached.

Distances are squared L2 (rank-equivalent to Euclidean, cheaper) or negated
inner product, so smaller is always closer. All distance evaluations funnel
through :func:`batch_distances` to keep floating-point reduction order
identical everywhere.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layout
from .cache import NodeCache, should_admit
from .fabric import DATA_BASE, Fabric, FabricClient, arena_capacity_for
from .layout import LayoutParams, neighbor_list_address, pack_addr

logger = logging.getLogger(__name__)

METRIC_L2 = "l2"
METRIC_IP = "ip"

# MN-0 metadata block (offsets within the reserved 8..4096 region).
META_ENTRY = 8  # packed address of the entry node, 0 while empty
META_PARAMS = 16  # d, M, efC, metric code, node count (5 x u64)
_METRIC_CODES = {METRIC_L2: 0, METRIC_IP: 1}
_METRIC_NAMES = {v: k for k, v in _METRIC_CODES.items()}


class EmptyIndexError(RuntimeError):
    pass


class CorruptionError(RuntimeError):
    """A decoded structure violates layout invariants."""


def draw_level(rng: np.random.Generator, m: int) -> int:
    """Geometric level draw: P(level >= x) = M^-x."""
    if m < 2:
        raise ValueError("M must be >= 2")
    u = 1.0 - rng.random()  # uniform in (0, 1]
    return int(-math.log(u) / math.log(m))


def batch_distances(q64: np.ndarray, mat: np.ndarray, metric: str) -> np.ndarray:
    """Distances from one float64 query to the rows of a float32 matrix.

    Row results are independent of the batch size (elementwise ufuncs plus a
    per-row pairwise sum), which keeps distributed and reference builds
    bitwise identical regardless of how candidates are grouped.
    """
    m64 = np.asarray(mat, dtype=np.float64)
    if metric == METRIC_L2:
        diff = m64 - q64
        return np.einsum("ij,ij->i", diff, diff)
    if metric == METRIC_IP:
        return -np.einsum("ij,j->i", m64, q64)
    raise ValueError(f"unknown metric {metric!r}")


def distance(a: np.ndarray, b: np.ndarray, metric: str = METRIC_L2) -> float:
    """Squared L2, or negated inner product (smaller = closer)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(batch_distances(a, b.astype(np.float32).reshape(1, -1), metric)[0])


@dataclass
class SearchStats:
    """Per-query tallies used for cache metrics and the simulated cost model."""

    visits: int = 0  # unique nodes whose payload was needed
    expansions: int = 0  # neighbor lists fetched
    cache_hits: int = 0
    cache_misses: int = 0
    node_reads: int = 0  # remote payload reads (cache misses or no cache)
    node_bytes: int = 0
    list_reads: int = 0
    list_bytes: int = 0

    def add(self, other: "SearchStats") -> None:
        self.visits += other.visits
        self.expansions += other.expansions
        self.cache_hits += other.cache_hits
        self.cache_misses += other.cache_misses
        self.node_reads += other.node_reads
        self.node_bytes += other.node_bytes
        self.list_reads += other.list_reads
        self.list_bytes += other.list_bytes


# ---------------------------------------------------------------------------
# Core algorithm, shared between the fabric-backed and the reference index.
#
# A *view* provides:
#   m, metric
#   payloads(handles, stats) -> (ids, levels, mat float32)   one node fetch each
#   neighbors(handle, level, stats) -> list of handles       one list read
#   entry() -> (handle, level) | None
#   create_node(vec32, level, node_id) -> handle
#   set_links(handle, level, handles)
#   add_reverse_link(nb_handle, level, new_handle)
#   try_set_entry(handle, level) / promote_entry(handle, level)
# ---------------------------------------------------------------------------


def search_layer(view, q64, ep, ef, level, visited, stats):
    """Best-first expansion at one level; returns candidates ascending.

    ``ep`` is a (dist, node_id, handle) triple whose distance is already
    known; ``visited`` is the per-query set shared across the level descent,
    so every node is fetched (and cache-probed) at most once per query.
    """
    cand = [ep]  # min-heap of (dist, id, handle)
    top = [(-ep[0], -ep[1], ep[2])]  # max-heap via negation
    push = heapq.heappush
    pop = heapq.heappop
    neighbors = view.neighbors
    payloads = view.payloads
    metric = view.metric
    visited_update = visited.update
    while cand:
        dist_c, _, handle_c = pop(cand)
        if dist_c > -top[0][0]:
            break  # all remaining candidates are farther than the worst kept
        stats.expansions += 1
        # neighbor lists never hold duplicates, so filter-then-update is safe
        fresh = [nb for nb in neighbors(handle_c, level, stats) if nb not in visited]
        if not fresh:
            continue
        visited_update(fresh)
        ids, _, mat = payloads(fresh, stats)
        dlist = batch_distances(q64, mat, metric).tolist()
        worst = -top[0][0]
        n_top = len(top)
        for pos, handle_n in enumerate(fresh):
            dist_n = dlist[pos]
            if dist_n < worst or n_top < ef:
                nid = ids[pos]
                push(cand, (dist_n, nid, handle_n))
                push(top, (-dist_n, -nid, handle_n))
                if n_top >= ef:
                    pop(top)
                else:
                    n_top += 1
                worst = -top[0][0]
    return sorted((-d, -i, h) for d, i, h in top)


def _entry_candidate(view, q64, stats, visited):
    got = view.entry()
    if got is None:
        raise EmptyIndexError("index has no nodes")
    handle, level = got
    visited.add(handle)
    ids, _, mat = view.payloads([handle], stats)
    dist = float(batch_distances(q64, mat, view.metric)[0])
    return (dist, ids[0], handle), level


def knn_search_impl(view, q64, k, ef_search, stats):
    """Descend ef=1 from the top, then beam-search the base level."""
    if k > ef_search:
        raise ValueError(f"k={k} exceeds ef_search={ef_search}")
    visited: set[int] = set()
    cur, top_level = _entry_candidate(view, q64, stats, visited)
    for level in range(top_level, 0, -1):
        cur = search_layer(view, q64, cur, 1, level, visited, stats)[0]
    top = search_layer(view, q64, cur, ef_search, 0, visited, stats)
    return top[:k]


def select_neighbors(candidates, m):
    """The M closest candidates; the list is already (distance, id) sorted."""
    return candidates[:m]


def prune_order(center64, ids, mat, metric, cap):
    """Indices of the ``cap`` closest candidates to ``center64``, ties by id."""
    dists = batch_distances(center64, mat, metric)
    order = np.lexsort((np.asarray(ids), dists))
    return [int(i) for i in order[:cap]]


def insert_impl(view, vec32, node_id, rng_level, ef_construction):
    """Insert one vector: draw a level, allocate, descend, connect."""
    level = draw_level(rng_level, view.m)
    handle = view.create_node(vec32, level, node_id)
    if view.try_set_entry(handle, level):
        return handle, level

    q64 = vec32.astype(np.float64)
    stats = SearchStats()
    visited = {handle}
    cur, top_level = _entry_candidate(view, q64, stats, visited)
    for lev in range(top_level, level, -1):
        cur = search_layer(view, q64, cur, 1, lev, visited, stats)[0]
    for lev in range(min(level, top_level), -1, -1):
        found = search_layer(view, q64, cur, ef_construction, lev, visited, stats)
        chosen = select_neighbors(found, view.m)
        view.set_links(handle, lev, [h for _, _, h in chosen])
        for _, _, nb in chosen:
            view.add_reverse_link(nb, lev, handle)
        cur = found[0]
    if level > top_level:
        view.promote_entry(handle, level)
    return handle, level


# ---------------------------------------------------------------------------
# Fabric-backed index
# ---------------------------------------------------------------------------


@dataclass
class IndexMeta:
    d: int
    m: int
    ef_construction: int
    metric: str
    node_count: int = 0
    entry_addr: int = 0
    top_level: int = -1

    def __post_init__(self):
        self._layout = LayoutParams(self.d, self.m)

    @property
    def layout(self) -> LayoutParams:
        return self._layout


class DistributedIndex:
    """HNSW graph stored across the fabric's memory-node arenas.

    Holds the cluster-wide metadata plus a node directory (address and top
    level per node id, in insertion order) used for enumeration tasks such
    as partition sampling and adjacency audits.
    """

    def __init__(self, fabric: Fabric, meta: IndexMeta):
        self.fabric = fabric
        self.meta = meta
        self.node_addrs: list[int] = []
        self.node_levels: list[int] = []
        self._meta_client = fabric.client(-1)  # bookkeeping traffic

    # -- creation / metadata block --

    @classmethod
    def create(cls, fabric: Fabric, d: int, m: int, ef_construction: int,
               metric: str = METRIC_L2) -> "DistributedIndex":
        if metric not in _METRIC_CODES:
            raise ValueError(f"unknown metric {metric!r}")
        meta = IndexMeta(d, m, ef_construction, metric)
        idx = cls(fabric, meta)
        block = struct.pack(
            "<5Q", d, m, ef_construction, _METRIC_CODES[metric], 0
        )
        idx._meta_client.write(pack_addr(0, META_PARAMS), block)
        idx._meta_client.write(pack_addr(0, META_ENTRY), struct.pack("<Q", 0))
        return idx

    @classmethod
    def open(cls, fabric: Fabric) -> "DistributedIndex":
        client = fabric.client(-1)
        d, m, efc, code, count = struct.unpack(
            "<5Q", client.read(pack_addr(0, META_PARAMS), 40)
        )
        meta = IndexMeta(int(d), int(m), int(efc), _METRIC_NAMES[int(code)], int(count))
        idx = cls(fabric, meta)
        idx._refresh_entry()
        return idx

    def _refresh_entry(self) -> None:
        (addr,) = struct.unpack("<Q", self._meta_client.read(pack_addr(0, META_ENTRY), 8))
        self.meta.entry_addr = addr
        if addr:
            hdr = self._meta_client.read(addr, 8)
            _, level, _ = layout.unpack_header(struct.unpack("<Q", hdr)[0])
            self.meta.top_level = level

    def _store_node_count(self) -> None:
        self._meta_client.write(
            pack_addr(0, META_PARAMS + 32), struct.pack("<Q", self.meta.node_count)
        )

    # -- build --

    def builder(self, client: FabricClient | None = None,
                alloc_rng: np.random.Generator | None = None) -> "_FabricView":
        client = client or self.fabric.client(-1)
        return _FabricView(self, client, alloc_rng=alloc_rng, memoize=True)

    def insert(self, vec, rng: np.random.Generator, view: "_FabricView | None" = None) -> int:
        """Insert one vector; returns its remote address."""
        view = view or self.builder()
        vec32 = np.asarray(vec, dtype=np.float32)
        if vec32.shape != (self.meta.d,):
            raise ValueError(f"vector shape {vec32.shape} != ({self.meta.d},)")
        node_id = self.meta.node_count
        handle, level = insert_impl(view, vec32, node_id, rng, self.meta.ef_construction)
        self.meta.node_count += 1
        self.node_addrs.append(handle)
        self.node_levels.append(level)
        self._refresh_entry()
        return handle

    def build(self, dataset: np.ndarray, seed: int = 0) -> None:
        """Sequential deterministic build in dataset order."""
        data32 = np.ascontiguousarray(dataset, dtype=np.float32)
        rng_level = np.random.default_rng(np.random.SeedSequence([seed, 0x1E7E1]))
        alloc_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA110C]))
        view = self.builder(alloc_rng=alloc_rng)
        for row in data32:
            self.insert(row, rng_level, view)
            if self.meta.node_count % 20000 == 0:
                logger.info("built %d nodes", self.meta.node_count)
        self._store_node_count()

    # -- search --

    def searcher(self, client: FabricClient | None = None, cache: NodeCache | None = None,
                 admission_rng: np.random.Generator | None = None,
                 admission_prob: float = 0.01) -> "Searcher":
        client = client or self.fabric.client(-1)
        return Searcher(self, client, cache, admission_rng, admission_prob)

    def knn_search(self, q, k: int, ef_search: int):
        """Cache-less convenience search; returns [(dist, node_id, addr)]."""
        return self.searcher().knn_search(q, k, ef_search)

    # -- audits --

    def adjacency(self) -> dict[int, list[list[int]]]:
        """Read every node's neighbor lists through the fabric, as node ids."""
        client = self.fabric.client(-1)
        params = self.meta.layout
        addr_to_id = {a: i for i, a in enumerate(self.node_addrs)}
        out: dict[int, list[list[int]]] = {}
        for node_id, (addr, level) in enumerate(zip(self.node_addrs, self.node_levels)):
            try:
                record = layout.decode_node(
                    client.read(addr, layout.node_size(self.meta.d, self.meta.m, level)),
                    params,
                )
            except layout.LayoutError as exc:
                raise CorruptionError(f"undecodable node {node_id}: {exc}") from exc
            if record.node_id != node_id or record.max_level != level:
                raise CorruptionError(f"directory mismatch at node {node_id}")
            out[node_id] = [[addr_to_id[a] for a in lst] for lst in record.neighbors]
        return out

    def node_vector(self, node_id: int) -> np.ndarray:
        addr = self.node_addrs[node_id]
        payload = self._meta_client.read(addr, self.meta.layout.payload_bytes)
        return np.frombuffer(payload, dtype="<f4", offset=8, count=self.meta.d).copy()

    # -- persistence --

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        for mn in range(self.fabric.mn_count):
            (path / f"mn{mn}.arena").write_bytes(self.fabric.dump_arena(mn))
        self._store_node_count()
        meta = {
            "format_version": 1,
            "d": self.meta.d,
            "m": self.meta.m,
            "ef_construction": self.meta.ef_construction,
            "metric": self.meta.metric,
            "node_count": self.meta.node_count,
            "mn_count": self.fabric.mn_count,
            "node_addrs": self.node_addrs,
            "node_levels": self.node_levels,
        }
        (path / "index_meta.json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, path: str | Path, cn_count: int = 1) -> "DistributedIndex":
        path = Path(path)
        meta = json.loads((path / "index_meta.json").read_text())
        capacities = []
        blobs = []
        for mn in range(meta["mn_count"]):
            blob = (path / f"mn{mn}.arena").read_bytes()
            capacities.append(struct.unpack_from("<8sIQ", blob, 0)[2])
            blobs.append(blob)
        fabric = Fabric(meta["mn_count"], cn_count, max(capacities))
        for mn, blob in enumerate(blobs):
            fabric.load_arena(mn, blob)
        idx = cls.open(fabric)
        idx.node_addrs = list(meta["node_addrs"])
        idx.node_levels = list(meta["node_levels"])
        return idx


class _FabricView:
    """Storage view over the fabric used by the shared algorithm.

    With ``memoize=True`` (construction) decoded payloads are kept in local
    memory; traffic-accurate search goes through a :class:`Searcher` instead,
    which layers the node cache on top.
    """

    def __init__(self, index: DistributedIndex, client: FabricClient,
                 cache: NodeCache | None = None,
                 admission_rng: np.random.Generator | None = None,
                 admission_prob: float = 0.01,
                 alloc_rng: np.random.Generator | None = None,
                 memoize: bool = False):
        self.index = index
        self.client = client
        self.cache = cache
        self.admission_rng = admission_rng
        self.admission_prob = admission_prob
        self.alloc_rng = alloc_rng
        self.memo: dict[int, tuple[int, int, np.ndarray]] | None = {} if memoize else None
        self.lock_retries = 0
        # hot-path constants, precomputed once
        params = index.meta.layout
        self.params = params
        self.m = params.m
        self.metric = index.meta.metric
        self._payload_bytes = params.payload_bytes
        self._d = params.d
        self._base_off = layout.HEADER_BYTES + params.vector_bytes
        self._base_len = params.base_list_bytes
        self._upper_len = params.upper_list_bytes
        self._base_cap = 2 * params.m
        self._payload_dtype = np.dtype([("h", "<u8"), ("v", "<f4", (params.d,))])
        assert self._payload_dtype.itemsize == self._payload_bytes

    # -- reads --

    def _fetch_payload(self, handle: int, stats: SearchStats) -> tuple[int, int, np.ndarray]:
        if self.memo is not None:
            got = self.memo.get(handle)
            if got is not None:
                stats.visits += 1
                return got
        payload = None
        if self.cache is not None:
            payload = self.cache.lookup(handle)
            if payload is None:
                stats.cache_misses += 1
            else:
                stats.cache_hits += 1
        if payload is None:
            payload = self.client.read(handle, self._payload_bytes)
            stats.node_reads += 1
            stats.node_bytes += self._payload_bytes
            admit = self.cache is not None
        else:
            admit = False
        (header,) = struct.unpack_from("<Q", payload, 0)
        node_id, level, _ = layout.unpack_header(header)
        vec = np.frombuffer(payload, dtype="<f4", count=self._d, offset=8)
        if admit and should_admit(level, self.admission_prob, self.admission_rng):
            self.cache.insert(handle, payload)
        if self.memo is not None:
            # widened once so distance batches skip the float64 conversion
            out = (node_id, level, vec.astype(np.float64))
            self.memo[handle] = out
        else:
            out = (node_id, level, vec)
        stats.visits += 1
        return out

    def payloads(self, handles, stats):
        memo = self.memo
        if memo is not None:
            fetch = self._fetch_payload
            memo_get = memo.get
            ids = []
            levels = []
            rows = []
            hits = 0
            for handle in handles:
                got = memo_get(handle)
                if got is None:
                    got = fetch(handle, stats)  # counts its own visit
                else:
                    hits += 1
                ids.append(got[0])
                levels.append(got[1])
                rows.append(got[2])
            stats.visits += hits
            return ids, levels, np.concatenate(rows).reshape(len(ids), -1)

        # batched path: per-handle cache probes and reads, one decode
        cache = self.cache
        read = self.client.read
        nbytes = self._payload_bytes
        if cache is None:
            blobs = [read(h, nbytes) for h in handles]
            misses = []
            stats.node_reads += len(blobs)
            stats.node_bytes += len(blobs) * nbytes
        else:
            lookup = cache.lookup
            blobs = []
            misses = []  # (position, handle) pairs needing an admission decision
            for h in handles:
                payload = lookup(h)
                if payload is None:
                    misses.append((len(blobs), h))
                    payload = read(h, nbytes)
                blobs.append(payload)
            stats.cache_hits += len(blobs) - len(misses)
            stats.cache_misses += len(misses)
            stats.node_reads += len(misses)
            stats.node_bytes += len(misses) * nbytes
        stats.visits += len(blobs)
        arr = np.frombuffer(b"".join(blobs), dtype=self._payload_dtype)
        words = arr["h"]
        ids = (words & layout.NODE_ID_MASK).tolist()
        levels = ((words >> layout.LEVEL_SHIFT) & layout.LEVEL_MASK).tolist()
        if misses and cache is not None:
            prob = self.admission_prob
            rng = self.admission_rng
            insert = cache.insert
            for pos, h in misses:
                if should_admit(levels[pos], prob, rng):
                    insert(h, blobs[pos])
        return ids, levels, arr["v"]

    def neighbors(self, handle, level, stats):
        if level == 0:
            addr = handle + self._base_off
            length = self._base_len
            cap = self._base_cap
        else:
            addr = handle + self._base_off + self._base_len + (level - 1) * self._upper_len
            length = self._upper_len
            cap = self.m
        data = self.client.read(addr, length)
        stats.list_reads += 1
        stats.list_bytes += length
        count = struct.unpack_from("<I", data, 0)[0]
        if count > cap:
            raise CorruptionError(
                f"neighbor count {count} exceeds capacity {cap} at {handle:#x} level {level}")
        return np.frombuffer(data, dtype="<u8", count=count, offset=4).tolist()

    def entry(self):
        meta = self.index.meta
        if not meta.entry_addr:
            return None
        return meta.entry_addr, meta.top_level

    # -- construction writes --

    def create_node(self, vec32, level, node_id):
        params = self.params
        size = layout.node_size(params.d, params.m, level)
        handle = self.client.alloc_node(size, self.alloc_rng)
        record = layout.NodeRecord(node_id, level, vec32)
        self.client.write(handle, layout.encode_node(record, params))
        if self.memo is not None:
            self.memo[handle] = (node_id, level, vec32)
        return handle

    def _write_list(self, handle, level, handles_list):
        addr, _ = neighbor_list_address(handle, level, self.params)
        cap = 2 * self.params.m if level == 0 else self.params.m
        if len(handles_list) > cap:
            raise CorruptionError(f"{len(handles_list)} links exceed capacity {cap}")
        slots = bytearray(cap * 8)
        for i, a in enumerate(handles_list):
            struct.pack_into("<Q", slots, i * 8, a)
        # Slots first, the 4-byte count last: a concurrent reader sees either
        # the old or the new list, never a half-written count.
        self.client.write(addr + 4, bytes(slots))
        self.client.write(addr, struct.pack("<I", len(handles_list)))

    def _lock(self, handle, stats):
        node_id, level, _ = self._fetch_payload(handle, stats)
        unlocked = layout.pack_header(node_id, level, 0)
        locked = unlocked | layout.LOCK_BIT
        while True:
            seen = self.client.cas(handle, unlocked, locked)
            if seen == unlocked:
                return unlocked, locked
            if seen not in (locked,):
                raise CorruptionError(f"unexpected header {seen:#x} at {handle:#x}")
            self.lock_retries += 1

    def _unlock(self, handle, unlocked, locked):
        seen = self.client.cas(handle, locked, unlocked)
        if seen != locked:
            raise CorruptionError("unlock of a node we do not hold")

    def set_links(self, handle, level, handles_list):
        stats = SearchStats()
        unlocked, locked = self._lock(handle, stats)
        try:
            self._write_list(handle, level, handles_list)
        finally:
            self._unlock(handle, unlocked, locked)

    def add_reverse_link(self, nb_handle, level, new_handle):
        cap = 2 * self.params.m if level == 0 else self.params.m
        stats = SearchStats()
        unlocked, locked = self._lock(nb_handle, stats)
        try:
            current = self.neighbors(nb_handle, level, stats)
            if new_handle in current:
                return
            if len(current) < cap:
                self._write_list(nb_handle, level, current + [new_handle])
                return
            candidates = current + [new_handle]
            ids, _, mat = self.payloads(candidates, stats)
            _, _, center = self._fetch_payload(nb_handle, stats)
            order = prune_order(center.astype(np.float64), ids, mat, self.metric, cap)
            self._write_list(nb_handle, level, [candidates[i] for i in order])
        finally:
            self._unlock(nb_handle, unlocked, locked)

    # -- entry point --

    def try_set_entry(self, handle, level):
        addr = pack_addr(0, META_ENTRY)
        seen = self.client.cas(addr, 0, handle)
        if seen == 0:
            self.index.meta.entry_addr = handle
            self.index.meta.top_level = level
            return True
        self.index._refresh_entry()
        return False

    def promote_entry(self, handle, level):
        addr = pack_addr(0, META_ENTRY)
        while True:
            self.index._refresh_entry()
            cur = self.index.meta.entry_addr
            if level <= self.index.meta.top_level:
                return
            if self.client.cas(addr, cur, handle) == cur:
                self.index.meta.entry_addr = handle
                self.index.meta.top_level = level
                return


class Searcher:
    """Per-compute-node query context: fabric client + optional node cache."""

    def __init__(self, index: DistributedIndex, client: FabricClient,
                 cache: NodeCache | None = None,
                 admission_rng: np.random.Generator | None = None,
                 admission_prob: float = 0.01):
        if cache is not None and admission_rng is None:
            admission_rng = np.random.default_rng(0)
        self.view = _FabricView(index, client, cache=cache,
                                admission_rng=admission_rng,
                                admission_prob=admission_prob)
        self.last_stats = SearchStats()

    def knn_search(self, q, k: int, ef_search: int):
        """Returns the k nearest as [(dist, node_id, addr)], ascending."""
        q64 = np.asarray(q, dtype=np.float32).astype(np.float64)
        stats = SearchStats()
        top = knn_search_impl(self.view, q64, k, ef_search, stats)
        self.last_stats = stats
        return top[:k]
