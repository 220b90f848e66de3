import pytest
from hypothesis import given, settings, strategies as st

from pipesim.cost_model import ProfileTable
from pipesim.errors import ConfigurationError
from pipesim.scheduler import (
    KvUsageMap,
    PendingRequest,
    PhaseDecision,
    SlidingWindow,
    check_switch,
    form_prefill_batch,
    future_points,
    schedule_prefill,
    should_switch_to_prefill,
    spatial_intensity,
    steal_work,
    temporal_intensity,
    update_usage,
)


def brute_force_usage(requests, points):
    """Per point, the KV a request holds after emitting fp tokens, if it is still predicted alive."""
    return {fp: sum(inp + fp for inp, pred in requests if fp <= pred) for fp in points}


def test_default_points():
    pts = future_points()
    assert pts[0] == 32 and pts[-1] == 1024 and len(pts) == 32
    with pytest.raises(ConfigurationError):
        future_points(0, 10)


def test_update_usage_hand_example():
    u = update_usage(100, 64, KvUsageMap((32, 64, 96)))
    assert u.as_dict() == {32: 132, 64: 164, 96: 0}


def test_update_usage_is_pure_and_short_requests_ignored():
    base = KvUsageMap((32, 64, 96))
    u = update_usage(10, 31, base)
    assert u.as_dict() == {32: 0, 64: 0, 96: 0}
    update_usage(10, 64, base)
    assert base.max_usage() == 0


@given(st.lists(st.tuples(st.integers(1, 2000), st.integers(1, 1200)), max_size=30))
def test_forecast_matches_brute_force_in_any_order(reqs):
    pts = future_points(32, 1024)
    fwd = KvUsageMap(pts)
    for inp, pred in reqs:
        fwd = update_usage(inp, pred, fwd)
    rev = KvUsageMap(pts)
    for inp, pred in reversed(reqs):
        rev.add(inp, pred)
    assert fwd == rev
    assert fwd.as_dict() == brute_force_usage(reqs, pts)


@given(st.lists(st.tuples(st.integers(1, 2000), st.integers(1, 1200)), max_size=30))
def test_vectorised_add_matches_scalar(reqs):
    a = KvUsageMap()
    b = KvUsageMap()
    for inp, pred in reqs:
        a.add(inp, pred)
    b.add_many([r[0] for r in reqs], [r[1] for r in reqs])
    assert a == b


def test_check_switch_examples():
    assert check_switch(KvUsageMap.from_dict({32: 900, 64: 1100}), 1000) is PhaseDecision.SwitchToDecode
    assert check_switch(KvUsageMap(), 1000) is PhaseDecision.RemainPrefill
    assert check_switch(KvUsageMap.from_dict({32: 1000, 64: 10}), 1000) is PhaseDecision.RemainPrefill
    with pytest.raises(ConfigurationError):
        check_switch(KvUsageMap(), 0)


def test_usage_map_validation():
    with pytest.raises(ConfigurationError):
        KvUsageMap((64, 32))
    with pytest.raises(ConfigurationError):
        KvUsageMap((32, 64), [1])
    with pytest.raises(ConfigurationError):
        KvUsageMap((32, 64), [1, -1])


def test_prefill_batch_budget():
    pending = [PendingRequest(1, 300, 10), PendingRequest(2, 300, 10)]
    assert [r.id for r in form_prefill_batch(pending, 512)] == [1]
    assert [r.id for r in form_prefill_batch([PendingRequest(9, 5000, 3)], 512)] == [9]
    assert [r.id for r in form_prefill_batch(pending, 600)] == [1, 2]


def test_triggering_batch_is_returned_with_switch():
    pending = [PendingRequest(1, 500, 64), PendingRequest(2, 500, 64)]
    batch, usage, decision = schedule_prefill(pending, KvUsageMap((32, 64)), 1000, token_budget=2048)
    assert [r.id for r in batch] == [1, 2]
    assert usage.as_dict() == {32: 1064, 64: 1128}
    assert decision is PhaseDecision.SwitchToDecode


def test_small_requests_never_switch():
    pending = [PendingRequest(i, 10, 40) for i in range(3)]
    usage = KvUsageMap()
    seen = []
    while pending:
        batch, usage, decision = schedule_prefill(pending, usage, 10**9, token_budget=10)
        assert decision is PhaseDecision.RemainPrefill
        seen += [r.id for r in batch]
        pending = pending[len(batch):]
    assert seen == [0, 1, 2]
    with pytest.raises(ConfigurationError):
        schedule_prefill([], usage, 10)


# -- work stealing ---------------------------------------------------------------

def test_stealing_walkthrough():
    window = SlidingWindow(4, [128, 128, 128, 128])
    d0 = steal_work(128, 48, window)
    assert (d0.average, d0.submit_count, d0.withheld) == (116, 80, 0)
    assert list(d0.window.recent_sizes) == [128, 128, 128, 80]
    d1 = steal_work(128, 8, d0.window)
    assert (d1.average, d1.withheld, d1.submit_count) == (114, 6, 114)
    # The pure function leaves its input window untouched.
    assert list(window.recent_sizes) == [128] * 4


def test_no_completions_is_a_fixed_point():
    window = SlidingWindow(3, [50, 50, 50])
    for _ in range(9):
        d = steal_work(50, 0, window)
        assert (d.submit_count, d.withheld, d.refilled) == (50, 0, 0)
        window = d.window


@given(st.lists(st.integers(0, 400), min_size=1, max_size=8), st.data(), st.booleans())
def test_steal_conservation(sizes, data, include_pool):
    window = SlidingWindow(len(sizes), sizes)
    returned = data.draw(st.sampled_from(sizes))
    finished = data.draw(st.integers(0, returned))
    pool = data.draw(st.integers(0, 300))
    d = steal_work(returned, finished, window, pool, include_pool=include_pool)
    assert d.submit_count - d.refilled + d.withheld + finished == returned
    assert d.refilled <= pool
    assert d.withheld == 0 or d.refilled == 0
    assert d.window.recent_sizes[-1] == d.submit_count


def test_pool_drains_when_batches_fall_below_average():
    window = SlidingWindow(2, [10, 10])
    d = steal_work(10, 6, window, pool_size=3)
    assert d.average == 7 and d.refilled == 3 and d.submit_count == 7


def _rotate(sizes, rounds, include_pool=True):
    W = len(sizes)
    window = SlidingWindow(W, sizes)
    sizes = list(sizes)
    pool = 0
    for _ in range(rounds):
        for i in range(W):
            d = steal_work(sizes[i], 0, window, pool, include_pool=include_pool)
            pool += d.withheld - d.refilled
            sizes[i] = d.submit_count
            window = d.window
    return sizes, pool


@settings(max_examples=300)
@given(st.lists(st.integers(0, 500), min_size=1, max_size=8))
def test_balance_within_w_rounds(sizes):
    out, pool = _rotate(sizes, len(sizes))
    assert max(out) - min(out) <= 1
    assert sum(out) + pool == sum(sizes)
    assert pool < len(sizes)


def test_steal_rejects_bad_counts():
    with pytest.raises(ConfigurationError):
        steal_work(5, 6, SlidingWindow(1, [5]))
    with pytest.raises(ConfigurationError):
        SlidingWindow(0)


# -- intensities -------------------------------------------------------------------

TABLE = ProfileTable((1, 2, 4, 8), (10.0, 20.0, 30.0, 40.0))


def test_spatial_intensity():
    assert spatial_intensity(8, TABLE) == 1.0
    assert spatial_intensity(2, TABLE) == 0.5
    assert spatial_intensity(3, TABLE) == pytest.approx(25 / 40)
    assert spatial_intensity(0, TABLE) == 0.0
    assert spatial_intensity(100, TABLE) == 1.0


def test_spatial_non_decreasing_over_grid():
    vals = [spatial_intensity(b, TABLE) for b in range(1, 12)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert all(0 < v <= 1 for v in vals)


def test_temporal_intensity_examples():
    assert temporal_intensity([0.3, 0.5], 0.5, 0.4) == 1.0
    # bubble = 4 - 2 = 2 s; total = (3 + 4) + 1 + 2 = 10 s.
    assert temporal_intensity([3.0, 4.0], 2.0, 1.0) == pytest.approx(0.8)
    with pytest.raises(ConfigurationError):
        temporal_intensity([], 1.0, 1.0)


def symbolic_temporal(prefills, step, per_batch):
    m, s = max(prefills), sum(prefills)
    bubble = max(0.0, m - step)
    return (s + per_batch) / (s + per_batch + bubble)


@given(st.lists(st.floats(0.01, 5.0), min_size=1, max_size=10), st.floats(0.01, 1.0), st.floats(0.01, 2.0))
def test_doubling_prefills_when_bubbled(prefills, step, per_batch):
    before = temporal_intensity(prefills, step, per_batch)
    after = temporal_intensity([2 * p for p in prefills], step, per_batch)
    assert before == pytest.approx(symbolic_temporal(prefills, step, per_batch))
    assert 0 < after <= 1 and 0 < before <= 1
    if max(prefills) > step:
        # The bubble grows by the longest prefill, which outpaces the total's relative growth
        # whenever the decode step or the per-batch step is non-zero.
        assert after < before


def test_switch_rule():
    assert should_switch_to_prefill(0.6, 0.9) is PhaseDecision.SwitchToPrefill
    assert should_switch_to_prefill(1.0, 1.0) is PhaseDecision.RemainDecode
    assert should_switch_to_prefill(0.7, 0.7) is PhaseDecision.RemainDecode
    assert should_switch_to_prefill(1.0, 0.2, decode_batches_empty=True) is PhaseDecision.SwitchToPrefill
    assert should_switch_to_prefill(0.1, 0.9, prefills_pending=False) is PhaseDecision.RemainDecode
