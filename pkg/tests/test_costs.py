import numpy as np
import pytest
from hypothesis import given, strategies as st

from cocasim.costs import (CostProfile, MetricsSink, RunMetrics, aggregate, cache_size,
                           calibrate_default_costs, expected_latency)
from cocasim.errors import ValidationError

ONE_LAYER = CostProfile(np.array([10.0, 30.0]), lookup_per_entry=0.0, lookup_per_layer=2.0)
X1 = np.ones((1, 1), bool)


def test_expected_latency_examples():
    assert expected_latency(X1, [0, 0], ONE_LAYER) == 42
    assert expected_latency(X1, [0, 1], ONE_LAYER) == 12
    assert expected_latency(X1, [0, 0.5], ONE_LAYER) == 27


def test_expected_latency_edge_only():
    cost = calibrate_default_costs(8)
    assert expected_latency(np.zeros((5, 8), bool), np.zeros(9), cost) == cost.edge_latency


def test_expected_latency_rejects_bad_probabilities():
    for p in ([0.2, 0.5], [0, 1.2], [0, -0.1], [0, 0.5, 1]):
        with pytest.raises(ValidationError):
            expected_latency(X1, p, ONE_LAYER)
    cost = calibrate_default_costs(2)
    with pytest.raises(ValidationError):
        expected_latency(np.ones((1, 2), bool), [0, 0.5, 0.2], cost)


@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.integers(0, 3), st.floats(0, 0.5))
def test_expected_latency_monotone(raw, k, bump):
    cost = calibrate_default_costs(4)
    x = np.ones((3, 4), bool)
    p = np.concatenate([[0.0], np.sort(raw)])
    base = expected_latency(x, p, cost)
    q = p.copy()
    q[k + 1:] = np.minimum(q[k + 1:] + bump, 1.0)
    q = np.maximum.accumulate(q)
    assert expected_latency(x, q, cost) <= base + 1e-12
    heavier = CostProfile(cost.block_times, cost.lookup_per_entry + bump, cost.lookup_per_layer)
    assert expected_latency(x, p, heavier) >= base - 1e-12


def test_cache_size():
    x = np.zeros((10, 5), bool)
    assert cache_size(x, 256) == 0
    x[:4, :2] = True
    assert cache_size(x, 64 * 4) == 2048
    assert cache_size(np.ones((10, 5), bool), 64 * 4) == 10 * 5 * 64 * 4
    assert cache_size(x, np.full((10, 5), 8)) == 64


def test_aggregate_examples():
    m = RunMetrics(frames=10, total_latency_ms=200.0, correct=9)
    single = aggregate([m])
    assert single.average_latency_ms == 20 and single.overall_accuracy == 0.9
    assert aggregate([(20, 1.0), (40, 1.0)], [5, 5]).average_latency_ms == 30
    assert aggregate([(20, 1.0), (40, 0.5)], [100, 300]).average_latency_ms == 35
    assert aggregate([(20, 1.0), (40, 0.5)], [100, 300]).overall_accuracy == pytest.approx(0.625)
    with pytest.raises(ValidationError):
        aggregate([])
    with pytest.raises(ValidationError):
        aggregate([(1, 1)], [1, 2])


def test_calibration_reference_point():
    cost = calibrate_default_costs(34, reference_classes=50)
    full = np.ones((50, 34), bool)
    assert cost.edge_latency == pytest.approx(100)
    assert cost.lookup_costs(full).sum() / cost.edge_latency == pytest.approx(0.5622, abs=1e-6)
    assert cost.lookup_costs(full)[-1] == 0


def test_calibration_single_layer_and_linearity():
    cost = calibrate_default_costs(1, reference_classes=50)
    assert cost.lookup_costs(np.ones((50, 1), bool))[0] == pytest.approx(56.22)
    c34 = calibrate_default_costs(34)
    full = c34.lookup_costs(np.ones((50, 34), bool))[:-1] - c34.lookup_per_layer
    half = c34.lookup_costs(np.ones((25, 34), bool))[:-1] - c34.lookup_per_layer
    assert half == pytest.approx(full / 2)
    with pytest.raises(ValidationError):
        calibrate_default_costs(0)


def test_cost_profile_helpers():
    cost = CostProfile([10.0, 20.0, 30.0], 1.0, 2.0)
    assert cost.saved_time().tolist() == [50, 30, 0]
    x = np.array([[True, False], [True, False]])
    assert cost.lookup_costs(x).tolist() == [4, 0, 0]
    assert cost.exit_latencies(x).tolist() == [14, 34, 64]
    with pytest.raises(ValidationError):
        CostProfile([10.0], 0, 0)
    with pytest.raises(ValidationError):
        CostProfile([10.0, -1.0], 0, 0)


def test_run_metrics_merge():
    a = RunMetrics(10, 100.0, 9, 4, 4, np.array([4, 0, 6]), 512)
    b = RunMetrics(30, 900.0, 24, 0, 0, np.array([0, 0, 30]), 0)
    m = a.merge(b)
    assert m.frames == 40 and m.average_latency_ms == 25 and m.overall_accuracy == 33 / 40
    assert m.hit_ratio == 0.1 and m.hit_accuracy == 1.0
    assert m.per_layer_hit_ratio.tolist() == [0.1, 0, 0.9]
    assert RunMetrics().average_latency_ms == 0 and RunMetrics().hit_accuracy == 0


def test_metrics_sink_threads():
    from concurrent.futures import ThreadPoolExecutor
    sink = MetricsSink()
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda k: sink.append({"k": k}), range(1000)))
    assert len(sink) == 1000 and sorted(r["k"] for r in sink.rows()) == list(range(1000))
