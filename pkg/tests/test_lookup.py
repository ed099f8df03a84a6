import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cocasim import lookup
from cocasim.cachemath import AccumulatorState
from cocasim.workload import GroundTruth, emit_samples

BACKENDS = sorted(lookup.available_backends())


def reference_walk(vectors, entries, allocation, alpha, theta):
    """Frame-by-frame walk through the scalar accumulator API."""
    n_classes, n_layers = allocation.shape
    exits, preds = [], []
    for v in vectors:
        acc = AccumulatorState(n_classes, alpha)
        exit_slot, pred = n_layers, -1
        for j in range(n_layers):
            cls = np.nonzero(allocation[:, j])[0]
            if cls.size == 0:
                continue
            acc.step(j, cls, entries[cls, j] @ v[j])
            d = acc.decide(j, cls, theta)
            if d.hit:
                exit_slot, pred = j, d.cls
                break
        exits.append(exit_slot)
        preds.append(pred)
    return np.array(exits), np.array(preds)


def case(seed, n_frames=80, n_classes=12, n_layers=6, dim=24, density=0.5):
    rng = np.random.default_rng(seed)
    gt = GroundTruth.generate(n_classes, n_layers, dim, rng)
    labels = rng.integers(0, n_classes, n_frames)
    vectors = emit_samples(gt, labels, rng)
    allocation = rng.random((n_classes, n_layers)) < density
    return vectors, gt.centroids[:, :n_layers].copy(), allocation


@pytest.mark.parametrize("backend", BACKENDS)
@settings(max_examples=30)
@given(seed=st.integers(0, 10_000), density=st.floats(0.05, 1.0), theta=st.sampled_from([0.004, 0.012, 0.05]))
def test_backend_matches_reference(backend, seed, density, theta):
    vectors, entries, allocation = case(seed, density=density)
    ptr, cls, rows = lookup.pack_cache(entries, allocation)
    exit_slot, pred, score = lookup.walk_frames(vectors, ptr, cls, rows, 12, 0.5, theta, backend=backend)
    ref_exit, ref_pred = reference_walk(vectors, entries, allocation, 0.5, theta)
    assert np.array_equal(exit_slot, ref_exit)
    assert np.array_equal(pred, ref_pred)
    assert np.all(np.isnan(score) == (pred < 0))
    assert np.all(score[pred >= 0] > theta)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")
def test_backends_agree_on_scores():
    vectors, entries, allocation = case(3, n_frames=500, n_classes=40, n_layers=10, dim=64)
    ptr, cls, rows = lookup.pack_cache(entries, allocation)
    a = lookup.walk_frames(vectors, ptr, cls, rows, 40, 0.5, 0.012, backend="python")
    b = lookup.walk_frames(vectors, ptr, cls, rows, 40, 0.5, 0.012, backend="cython")
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.allclose(a[2], b[2], equal_nan=True, rtol=1e-12)


def test_pack_cache_layout():
    entries = np.arange(3 * 2 * 2, dtype=float).reshape(3, 2, 2)
    alloc = np.array([[True, False], [False, True], [True, True]])
    ptr, cls, rows = lookup.pack_cache(entries, alloc)
    assert ptr.tolist() == [0, 2, 4] and cls.tolist() == [0, 2, 1, 2]
    assert np.array_equal(rows, entries[[0, 2, 1, 2], [0, 0, 1, 1]])
    ptr, cls, rows = lookup.pack_cache(entries, np.zeros((3, 2), bool))
    assert ptr.tolist() == [0, 0, 0] and rows.shape == (0, 2)


def test_pure_python_switch():
    env = dict(os.environ, COCASIM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import cocasim; print(cocasim.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
