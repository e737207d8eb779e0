"""Per-CN query admission and the adaptive limit update.

Four policies:

* ``NoRouting``: every query runs on the CN it arrived at.
* ``BestFit``: always the oracle's rank-1 CN (best cache affinity, no
  load consideration).
* ``Balanced``: first CN in oracle order still under a fixed per-batch
  quota of b/|CN|.
* ``Adaptive``: like Balanced, but the quotas are reweighted every batch
  from the working-queue backlogs each CN reports.

Inter-CN traffic rides the two-sided path: a forwarded query or progress
report goes to a uniformly random MN, whose router relays it to the
destination CN. CNs never talk to each other directly.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .fabric import MSG_PROGRESS, MSG_QUERY, FabricClient, RoutedMessage

logger = logging.getLogger(__name__)

POLICIES = ("NoRouting", "BestFit", "Balanced", "Adaptive")
DEFAULT_BATCH = 1000
DEFAULT_SYNC_T = 1000

_QUERY_WIRE = struct.Struct("<II")  # query index, arrival CN
_PROGRESS_WIRE = struct.Struct("<IQ")  # cn_id, queue length


def update_limits(progress, b: int) -> np.ndarray:
    """Next-batch limits from reported backlogs; lower backlog, higher limit.

    omega_i = |CN| * (sigma - P_i) / sum_j (sigma - P_j) with sigma = sum(P);
    L_i = omega_i * b / |CN|. All-equal P (including all-zero) and the
    single-CN case degenerate to omega = 1.
    """
    p = np.asarray(progress, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0:
        raise ValueError("progress must be a non-empty vector")
    if (p < 0).any():
        raise ValueError("negative backlog")
    sigma = p.sum()
    spread = sigma - p
    denom = spread.sum()
    if denom == 0.0:
        omega = np.ones_like(p)
    else:
        omega = len(p) * spread / denom
    return omega * (b / len(p))


@dataclass
class BatchState:
    cn_count: int
    b: int = DEFAULT_BATCH
    t: int = DEFAULT_SYNC_T
    h: np.ndarray = field(init=False)
    limits: np.ndarray = field(init=False)
    r: int = 0
    epoch: int = 0

    def __post_init__(self):
        self.h = np.zeros(self.cn_count, dtype=np.int64)
        self.limits = np.full(self.cn_count, self.b / self.cn_count)

    def reset_batch(self) -> None:
        self.h[:] = 0
        self.r = 0
        self.epoch += 1

    def apply_progress(self, progress) -> None:
        self.limits = update_limits(progress, self.b)
        self.reset_batch()


def select_destination(local_cn: int, ranked, policy: str, state: BatchState) -> int:
    """Pick the processing CN for one query and record it in the histogram.

    ``ranked`` is the oracle's (distance, cn_id) list, ascending.
    """
    if policy == "NoRouting":
        dest = local_cn
    elif policy == "BestFit":
        dest = ranked[0][1]
    elif policy in ("Balanced", "Adaptive"):
        dest = None
        for _, cn in ranked:
            if state.h[cn] < state.limits[cn]:
                dest = cn
                break
        if dest is None:  # float rounding can exhaust every limit at once
            dest = ranked[0][1]
    else:
        raise ValueError(f"unknown policy {policy!r}")
    state.h[dest] += 1
    state.r += 1
    return dest


@dataclass
class ProgressReport:
    cn_id: int
    p: int

    def encode(self) -> bytes:
        return _PROGRESS_WIRE.pack(self.cn_id, self.p)

    @classmethod
    def decode(cls, payload: bytes) -> "ProgressReport":
        cn_id, p = _PROGRESS_WIRE.unpack(payload)
        return cls(cn_id, int(p))


def encode_query(query_idx: int, arrival_cn: int, vec32: np.ndarray) -> bytes:
    return _QUERY_WIRE.pack(query_idx, arrival_cn) + vec32.tobytes()


def decode_query(payload: bytes) -> tuple[int, int]:
    """Returns (query_idx, arrival_cn); the vector tail travels for byte
    accounting but receivers resolve the index against the shared stream."""
    return _QUERY_WIRE.unpack_from(payload, 0)


class CnRouter:
    """Routing state machine for one CN.

    The driver feeds it arrivals and tells it the working-queue length at
    batch boundaries; the router decides destinations, forwards remote ones
    through random MNs, and (Adaptive only) runs the limit update once the
    peer backlog reports are in.
    """

    def __init__(self, cn_id: int, cn_count: int, policy: str, oracle,
                 client: FabricClient, mn_count: int,
                 b: int = DEFAULT_BATCH, t: int = DEFAULT_SYNC_T, seed: int = 0):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
        self.cn_id = cn_id
        self.cn_count = cn_count
        self.policy = policy
        self.oracle = oracle
        self.client = client
        self.mn_count = mn_count
        self.state = BatchState(cn_count, b, t)
        self._mn_rng = np.random.default_rng(
            np.random.SeedSequence([seed, 0xF0, cn_id]))
        self.latest_progress = np.zeros(cn_count, dtype=np.int64)
        self.fresh_reports: set[int] = set()
        self.sync_polls = 0
        self.limit_trace: list[list[float]] = []
        self.routed = 0
        self.forwarded = 0

    # -- routing --

    def route(self, q64) -> int:
        ranked = self.oracle.rank(q64) if self.oracle is not None else [(0.0, self.cn_id)]
        dest = select_destination(self.cn_id, ranked, self.policy, self.state)
        self.routed += 1
        return dest

    def forward(self, dest: int, query_idx: int, arrival_cn: int, vec32) -> None:
        mn = int(self._mn_rng.integers(self.mn_count))
        msg = RoutedMessage(dest, MSG_QUERY, encode_query(query_idx, arrival_cn, vec32))
        self.client.send_via_mn(mn, msg)
        self.forwarded += 1

    def at_batch_boundary(self) -> bool:
        return self.state.r >= self.state.b

    def end_of_batch(self, queue_len: int) -> None:
        """Batch of b routed: broadcast our backlog, arm the sync wait."""
        if self.policy == "Balanced":
            self.state.reset_batch()
            return
        if self.policy != "Adaptive":
            self.state.reset_batch()
            return
        self.latest_progress[self.cn_id] = queue_len
        self.fresh_reports = {self.cn_id}
        self.sync_polls = 0
        report = ProgressReport(self.cn_id, queue_len).encode()
        for cn in range(self.cn_count):
            if cn == self.cn_id:
                continue
            mn = int(self._mn_rng.integers(self.mn_count))
            self.client.send_via_mn(mn, RoutedMessage(cn, MSG_PROGRESS, report))

    def note_report(self, report: ProgressReport) -> None:
        self.latest_progress[report.cn_id] = report.p
        self.fresh_reports.add(report.cn_id)

    def try_finish_sync(self, queue_len: int, poll_budget: int = 10) -> bool:
        """Complete the batch cycle once drained and informed (or timed out)."""
        if queue_len > self.state.t:
            return False
        missing = self.cn_count - len(self.fresh_reports)
        if missing:
            self.sync_polls += 1
            if self.sync_polls <= poll_budget:
                return False
            logger.debug("cn %d: %d progress reports missing after %d polls; "
                         "reusing previous values", self.cn_id, missing, self.sync_polls)
        self.state.apply_progress(self.latest_progress)
        self.limit_trace.append([float(x) for x in self.state.limits])
        self.fresh_reports = set()
        return True
