"""Per-compute-node cache of node payloads (header + vector bytes).

Replacement is a relaxed LRU: the cache keeps a fixed slice of its entries
(default 10%) in a *cooling* state managed by a bucketed FIFO table. When a
full cache admits a new payload, a random hot entry transitions to cooling
and is pushed at the head of its bucket's FIFO; if that FIFO overflows, the
tail key is evicted and frees the slot for the new entry. A hit on a cooling
entry promotes it back to hot. Neighbor lists are never cached, only the
header + vector prefix of a node.

Lookups are optimistic and lock-free: readers capture a slot's version tag,
copy the payload reference, and revalidate key and tag; evictions increment
the tag under the bucket lock, forcing concurrent readers to retry.

Admission is probabilistic: nodes that only exist at the base level enter
the cache with a small fixed probability (default 1%), nodes present on any
upper level are always admitted.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


class CacheOversizeError(ValueError):
    """Payload does not fit the configured capacity at all."""


@dataclass(frozen=True)
class CacheConfig:
    capacity_bytes: int
    entry_bytes: int
    cooling_fraction: float = 0.10
    base_admission_prob: float = 0.01
    bucket_count: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.cooling_fraction < 1:
            raise ValueError("cooling_fraction must be in (0, 1)")
        if not 0 <= self.base_admission_prob <= 1:
            raise ValueError("base_admission_prob must be in [0, 1]")
        if self.entry_bytes <= 0 or self.capacity_bytes <= 0:
            raise ValueError("capacity_bytes and entry_bytes must be positive")


class _Slot:
    __slots__ = ("key", "tag", "cooling", "payload")

    def __init__(self) -> None:
        self.key: int | None = None
        self.tag = 0
        self.cooling = False
        self.payload: bytes | None = None


class NodeCache:
    """Bounded payload cache with cooling-table replacement.

    Capacity is accounted in entries (``capacity_bytes // entry_bytes``)
    since all payloads of one index share a size. Thread safety: lookups are
    optimistic retries, inserts and evictions take per-bucket locks plus a
    short slot-allocation lock.
    """

    def __init__(self, config: CacheConfig, seed: int = 0):
        self.config = config
        self.capacity_entries = max(1, config.capacity_bytes // config.entry_bytes)

        cooling_target = max(1, round(config.cooling_fraction * self.capacity_entries))
        buckets = config.bucket_count or max(16, self.capacity_entries // 1024)
        buckets = min(buckets, cooling_target)
        self.bucket_count = max(1, buckets)
        self.bucket_len = max(1, cooling_target // self.bucket_count)

        self._slots = [_Slot() for _ in range(self.capacity_entries)]
        self._index: dict[int, int] = {}  # key -> slot number
        self._free = list(range(self.capacity_entries - 1, -1, -1))
        self._alloc_lock = threading.Lock()
        self._buckets: list[list[int]] = [[] for _ in range(self.bucket_count)]
        self._bucket_locks = [threading.Lock() for _ in range(self.bucket_count)]
        self._victim_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC001]))

        self.hits = 0
        self.misses = 0
        self.evictions = 0

    # -- helpers --

    def _bucket_of(self, key: int) -> int:
        # Fibonacci mixing; keys are packed addresses with low-entropy slots.
        return ((key * 0x9E3779B97F4A7C15) >> 17) % self.bucket_count

    def __len__(self) -> int:
        return len(self._index)

    @property
    def cooling_population(self) -> int:
        return sum(len(b) for b in self._buckets)

    # -- operations --

    def lookup(self, key: int) -> bytes | None:
        """Return the payload for ``key`` or None. A hit on a cooling entry
        promotes it back to the hot state."""
        while True:
            slot_no = self._index.get(key)
            if slot_no is None:
                self.misses += 1
                return None
            slot = self._slots[slot_no]
            tag = slot.tag
            if slot.key != key:
                continue  # slot recycled between map read and slot read
            payload = slot.payload
            cooling = slot.cooling
            if slot.tag != tag or slot.key != key:
                continue
            if cooling:
                self._promote(key, slot_no, tag)
            self.hits += 1
            return payload

    def _promote(self, key: int, slot_no: int, tag: int) -> None:
        b = self._bucket_of(key)
        with self._bucket_locks[b]:
            slot = self._slots[slot_no]
            if slot.tag != tag or slot.key != key or not slot.cooling:
                return  # raced with eviction or another promoter
            try:
                self._buckets[b].remove(key)
            except ValueError:
                pass
            slot.cooling = False

    def insert(self, key: int, payload: bytes) -> None:
        """Store a payload the caller already decided to admit.

        With no free slot: a random hot entry starts cooling; only if its
        bucket FIFO overflows does the dropped tail free a slot for the new
        entry — otherwise the new payload is not stored this time.
        """
        if len(payload) > self.config.capacity_bytes:
            raise CacheOversizeError(
                f"payload of {len(payload)} B exceeds cache capacity "
                f"{self.config.capacity_bytes} B"
            )
        existing = self._index.get(key)
        if existing is not None:
            slot = self._slots[existing]
            if slot.key == key:
                slot.payload = payload
                return

        with self._alloc_lock:
            if self._free:
                self._fill_slot(self._free.pop(), key, payload)
                return
            victim_key = self._pick_hot_victim()
        if victim_key is None:
            return
        freed = self._start_cooling(victim_key)
        if freed is not None:
            with self._alloc_lock:
                self._fill_slot(freed, key, payload)

    def _fill_slot(self, slot_no: int, key: int, payload: bytes) -> None:
        # Runs under _alloc_lock. Two workers may race a miss on the same
        # key; the loser refreshes in place and returns its slot.
        existing = self._index.get(key)
        if existing is not None:
            self._slots[existing].payload = payload
            self._free.append(slot_no)
            return
        slot = self._slots[slot_no]
        slot.key = key
        slot.cooling = False
        slot.payload = payload
        self._index[key] = slot_no

    def _pick_hot_victim(self) -> int | None:
        """Uniform random probing over occupied slots until a hot one turns up."""
        n = self.capacity_entries
        for _ in range(8 * n):
            slot = self._slots[int(self._victim_rng.integers(0, n))]
            key = slot.key
            if key is not None and not slot.cooling:
                return key
        return None

    def _start_cooling(self, victim_key: int) -> int | None:
        """Move a hot entry into the cooling table. Returns a freed slot
        number if the bucket FIFO overflowed, else None."""
        b = self._bucket_of(victim_key)
        with self._bucket_locks[b]:
            slot_no = self._index.get(victim_key)
            if slot_no is None:
                return None
            slot = self._slots[slot_no]
            if slot.key != victim_key or slot.cooling:
                return None
            slot.cooling = True
            bucket = self._buckets[b]
            bucket.insert(0, victim_key)
            if len(bucket) <= self.bucket_len:
                return None
            tail_key = bucket.pop()
            return self._evict(tail_key)

    def _evict(self, key: int) -> int | None:
        """Unlink an entry and free its slot; caller holds the bucket lock
        of ``key``'s bucket (tail and head share it by construction)."""
        slot_no = self._index.get(key)
        if slot_no is None:
            return None
        slot = self._slots[slot_no]
        if slot.key != key:
            return None
        del self._index[key]
        slot.tag += 1
        slot.key = None
        slot.cooling = False
        slot.payload = None
        self.evictions += 1
        return slot_no

    def stats(self) -> dict[str, float]:
        accesses = self.hits + self.misses
        return {
            "hits": self.hits,
            "misses": self.misses,
            "evictions": self.evictions,
            "cooling_population": self.cooling_population,
            "entries": len(self._index),
            "chr": (self.hits / accesses) if accesses else 0.0,
        }

    def reset_stats(self) -> None:
        """Zero the counters between experiment phases; contents stay."""
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def check_coherence(self) -> None:
        """Flag/table coherence and capacity invariants, under full lock."""
        with self._alloc_lock:
            for lock in self._bucket_locks:
                lock.acquire()
            try:
                table_keys = [k for b in self._buckets for k in b]
                assert len(table_keys) == len(set(table_keys)), "duplicate cooling key"
                flagged = {
                    s.key for s in self._slots if s.key is not None and s.cooling
                }
                assert flagged == set(table_keys), "cooling flags out of sync"
                assert len(self._index) <= self.capacity_entries, "over capacity"
                target = max(1, round(self.config.cooling_fraction * self.capacity_entries))
                assert len(table_keys) <= target + self.bucket_count, "cooling overfull"
            finally:
                for lock in self._bucket_locks:
                    lock.release()


def should_admit(level: int, prob: float, rng: np.random.Generator) -> bool:
    """Admission policy: upper-level nodes always, base-only nodes with
    probability ``prob``."""
    if level >= 1:
        return True
    if prob <= 0.0:
        return False
    return bool(rng.random() < prob)
