# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled lookup walk.

Layer-major: per layer, the similarities of all still-running frames come
from one matrix product; accumulation, top-two search and the exit test run
in C without the GIL.
"""
import numpy as np

from libc.math cimport INFINITY


def walk_frames(const double[:, :, ::1] vectors, const long long[::1] layer_ptr,
                const long long[::1] entry_class, const double[:, ::1] entries,
                Py_ssize_t n_classes, double alpha, double theta):
    cdef Py_ssize_t n_frames = vectors.shape[0]
    cdef Py_ssize_t n_layers = layer_ptr.shape[0] - 1
    exit_np = np.full(n_frames, n_layers, dtype=np.int64)
    pred_np = np.full(n_frames, -1, dtype=np.int64)
    score_np = np.full(n_frames, np.nan)
    acc_np = np.zeros((n_frames, max(n_classes, 1)))
    live_np = np.arange(n_frames, dtype=np.int64)
    vec_np = np.asarray(vectors)
    ent_np = np.asarray(entries)
    cdef long long[::1] exit_slot = exit_np
    cdef long long[::1] pred = pred_np
    cdef double[::1] score = score_np
    cdef double[:, ::1] acc = acc_np
    cdef long long[::1] live = live_np
    cdef double[:, ::1] sims
    cdef Py_ssize_t n_live = n_frames
    cdef Py_ssize_t k, kept, f, j, r, c, lo, hi, best_c
    cdef double a, best, second, d
    for j in range(n_layers):
        lo = layer_ptr[j]
        hi = layer_ptr[j + 1]
        if lo == hi or n_live == 0:
            continue
        # similarities of the running frames come from one BLAS product
        sims = np.ascontiguousarray(vec_np[live_np[:n_live], j, :] @ ent_np[lo:hi].T)
        with nogil:
            kept = 0
            for k in range(n_live):
                f = live[k]
                best = -INFINITY
                second = -INFINITY
                best_c = -1
                for r in range(lo, hi):
                    c = entry_class[r]
                    a = sims[k, r - lo] + alpha * acc[f, c]
                    acc[f, c] = a
                    if a > best:
                        second = best
                        best = a
                        best_c = c
                    elif a > second:
                        second = a
                if hi - lo >= 2 and second > 0.0:
                    d = (best - second) / second
                    if d > theta:
                        exit_slot[f] = j
                        pred[f] = best_c
                        score[f] = d
                        continue
                live[kept] = f
                kept += 1
            n_live = kept
    return exit_np, pred_np, score_np
