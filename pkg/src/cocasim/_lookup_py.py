"""Pure numpy lookup walk (fallback when the compiled kernel is unavailable).

Vectorised across frames: every layer is one matrix product over the frames
that are still running. Semantics match ``_lookup.pyx`` exactly.
"""
import numpy as np


def walk_frames(vectors, layer_ptr, entry_class, entries, n_classes, alpha, theta):
    """Run cached early-exit lookups for a block of frames.

    Parameters
    ----------
    vectors : float64 (F, L+1, d)
    layer_ptr : int64 (L+1,)
        CSR offsets; entries of cache layer ``j`` are rows
        ``layer_ptr[j]:layer_ptr[j+1]`` of ``entries``.
    entry_class : int64 (nnz,)
        Class of each entry, ascending within a layer.
    entries : float64 (nnz, d)

    Returns
    -------
    exit_slot : int64 (F,)  0-based slot, ``L`` when no cache hit
    pred : int64 (F,)       hit class or -1
    score : float64 (F,)    discriminative score at the hit, NaN otherwise
    """
    n_frames = vectors.shape[0]
    n_layers = layer_ptr.shape[0] - 1
    exit_slot = np.full(n_frames, n_layers, dtype=np.int64)
    pred = np.full(n_frames, -1, dtype=np.int64)
    score = np.full(n_frames, np.nan)
    acc = np.zeros((n_frames, n_classes))
    live = np.arange(n_frames)
    for j in range(n_layers):
        lo, hi = int(layer_ptr[j]), int(layer_ptr[j + 1])
        if lo == hi or live.size == 0:
            continue
        cls = entry_class[lo:hi]
        sims = vectors[live, j, :] @ entries[lo:hi].T
        a = sims + alpha * acc[np.ix_(live, cls)]
        acc[np.ix_(live, cls)] = a
        if hi - lo < 2:
            continue
        rows = np.arange(live.size)
        top = np.argmax(a, axis=1)
        first = a[rows, top]
        rest = a.copy()
        rest[rows, top] = -np.inf
        second = rest.max(axis=1)
        valid = second > 0.0
        d = np.full(live.size, -np.inf)
        d[valid] = (first[valid] - second[valid]) / second[valid]
        hit = d > theta
        if hit.any():
            done = live[hit]
            exit_slot[done] = j
            pred[done] = cls[top[hit]]
            score[done] = d[hit]
            live = live[~hit]
    return exit_slot, pred, score
