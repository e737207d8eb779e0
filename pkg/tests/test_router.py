import math

import numpy as np
import pytest

from disagg_hnsw.fabric import Fabric
from disagg_hnsw.router import (
    BatchState,
    CnRouter,
    ProgressReport,
    decode_query,
    encode_query,
    select_destination,
    update_limits,
)


def test_update_limits_worked_example():
    limits = update_limits([30, 10, 10, 10], 1000)
    expect = [500.0 / 3.0, 2500.0 / 9.0, 2500.0 / 9.0, 2500.0 / 9.0]
    for got, want in zip(limits, expect):
        assert got == pytest.approx(want, abs=1e-9)


def test_update_limits_conserves_budget():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        k = int(rng.integers(1, 9))
        progress = rng.integers(0, 1000, size=k)
        limits = update_limits(progress, 1000)
        assert abs(limits.sum() - 1000.0) <= 1e-6
        assert (limits >= 0).all()


def test_update_limits_degenerate_cases():
    # all-equal backlog (including all-zero) and the single-CN case
    assert update_limits([5, 5, 5], 300).tolist() == [100.0, 100.0, 100.0]
    assert update_limits([0, 0], 100).tolist() == [50.0, 50.0]
    assert update_limits([42], 100).tolist() == [100.0]


def test_update_limits_orders_by_backlog():
    limits = update_limits([100, 50, 10], 1000)
    assert limits[0] < limits[1] < limits[2]


def test_update_limits_validation():
    with pytest.raises(ValueError):
        update_limits([], 100)
    with pytest.raises(ValueError):
        update_limits([1, -2], 100)


def ranked_for(*cns):
    return [(float(i), cn) for i, cn in enumerate(cns)]


def test_select_destination_per_policy():
    state = BatchState(cn_count=3, b=9, t=9)
    assert select_destination(2, ranked_for(0, 1, 2), "NoRouting", state) == 2
    assert select_destination(2, ranked_for(1, 0, 2), "BestFit", state) == 1
    # Balanced walks the oracle order until a CN has room
    state = BatchState(cn_count=3, b=9, t=9)
    state.h[0] = 3  # quota b/|CN| = 3 exhausted
    assert select_destination(0, ranked_for(0, 2, 1), "Balanced", state) == 2
    with pytest.raises(ValueError):
        select_destination(0, ranked_for(0), "RoundRobin", state)


def test_select_destination_fallback_when_full():
    state = BatchState(cn_count=2, b=4, t=4)
    state.h[:] = [2, 2]
    assert select_destination(0, ranked_for(1, 0), "Balanced", state) == 1


def test_balanced_histogram_bound():
    rng = np.random.default_rng(4)
    k, b = 4, 1000
    state = BatchState(cn_count=k, b=b, t=b)
    for _ in range(b):
        order = rng.permutation(k)
        select_destination(int(order[0]), ranked_for(*order), "Balanced", state)
    assert state.h.sum() == b
    assert state.h.max() <= math.ceil(b / k)


def test_adaptive_honors_updated_limits():
    state = BatchState(cn_count=2, b=10, t=10)
    state.limits = update_limits([90, 10], 10)  # CN0 swamped
    counts = np.zeros(2, dtype=int)
    for _ in range(10):
        dest = select_destination(0, ranked_for(0, 1), "Adaptive", state)
        counts[dest] += 1
    # preferred CN0 only gets its shrunken limit, the spill goes to CN1
    assert counts[0] == math.ceil(state.limits[0])
    assert counts[1] == 10 - counts[0]


def test_wire_round_trips():
    vec = np.arange(4, dtype=np.float32)
    wire = encode_query(123, 2, vec)
    assert decode_query(wire) == (123, 2)
    assert len(wire) == 8 + 16  # index + arrival + vector bytes
    report = ProgressReport(3, 77)
    assert ProgressReport.decode(report.encode()) == report


class StubOracle:
    def __init__(self, order):
        self.order = order

    def rank(self, q):
        return [(float(i), cn) for i, cn in enumerate(self.order)]


def make_router(policy, cns=3, mns=2, b=6, seed=0, fabric=None):
    fab = fabric or Fabric(mn_count=mns, cn_count=cns, capacity_per_mn=1 << 16, seed=0)
    return (
        CnRouter(0, cns, policy, StubOracle(range(cns)), fab.client(0), mns, b=b, t=b,
                 seed=seed),
        fab,
    )


def test_router_batch_boundary():
    router, _ = make_router("Balanced", b=6)
    for _ in range(5):
        router.route(None)
        assert not router.at_batch_boundary()
    router.route(None)
    assert router.at_batch_boundary()
    router.end_of_batch(queue_len=0)
    assert not router.at_batch_boundary()
    assert router.state.epoch == 1


def test_adaptive_sync_waits_for_reports():
    router, fab = make_router("Adaptive", cns=3, b=3)
    for _ in range(3):
        router.route(None)
    router.end_of_batch(queue_len=4)
    # queue too long: cannot finish regardless of reports
    assert not router.try_finish_sync(queue_len=router.state.t + 1)
    # drained but peers silent: keep polling
    assert not router.try_finish_sync(queue_len=0)
    router.note_report(ProgressReport(1, 10))
    assert not router.try_finish_sync(queue_len=0)
    router.note_report(ProgressReport(2, 2))
    assert router.try_finish_sync(queue_len=0)
    expect = update_limits([4, 10, 2], 3)
    assert router.state.limits == pytest.approx(expect)
    assert router.limit_trace[-1] == pytest.approx(expect)


def test_adaptive_latest_report_wins():
    router, _ = make_router("Adaptive", cns=2, b=2)
    router.route(None), router.route(None)
    router.end_of_batch(queue_len=0)
    router.note_report(ProgressReport(1, 50))
    router.note_report(ProgressReport(1, 8))
    assert router.try_finish_sync(queue_len=0)
    assert router.state.limits == pytest.approx(update_limits([0, 8], 2))


def test_adaptive_poll_budget_reuses_stale():
    router, _ = make_router("Adaptive", cns=2, b=2)
    router.route(None), router.route(None)
    router.end_of_batch(queue_len=1)
    for _ in range(10):  # budget of 10 polls without CN1's report
        assert not router.try_finish_sync(queue_len=0, poll_budget=10)
    assert router.try_finish_sync(queue_len=0, poll_budget=10)
    # proceeded with the last known (zero) backlog for the silent peer
    assert router.state.limits == pytest.approx(update_limits([1, 0], 2))


def test_progress_broadcast_reaches_peers():
    fab = Fabric(mn_count=2, cn_count=3, capacity_per_mn=1 << 16, seed=0)
    router, _ = make_router("Adaptive", cns=3, b=3, fabric=fab)
    for _ in range(3):
        router.route(None)
    router.end_of_batch(queue_len=7)
    fab.pump_all_routers()
    got = set()
    for cn in (1, 2):
        msg = fab.client(cn).recv()
        assert msg is not None
        report = ProgressReport.decode(msg.payload)
        assert report == ProgressReport(0, 7)
        got.add(cn)
    assert got == {1, 2}


def test_forward_spreads_over_memory_nodes():
    fab = Fabric(mn_count=3, cn_count=2, capacity_per_mn=1 << 16, seed=0)
    router, _ = make_router("BestFit", cns=2, mns=3, b=10_000, fabric=fab)
    vec = np.zeros(4, dtype=np.float32)
    for i in range(9_999):
        router.forward(1, i, 0, vec)
    counts = np.array([len(a.inbox) for a in fab.arenas])
    assert counts.sum() == 9_999
    frac = counts / counts.sum()
    assert (frac > 0.25).all() and (frac < 0.42).all(), frac.tolist()


def test_unknown_policy_rejected():
    with pytest.raises(ValueError):
        make_router("Fastest")
