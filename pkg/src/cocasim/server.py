"""Server side: global cache table, global updates and cache allocation."""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import lookup
from .client import UploadPayload
from .errors import ValidationError

SCORE_DECAY = 0.20
COVERAGE_TARGET = 0.95
GCU_DECAY = 0.99
POLICIES = ("ACA", "LRU", "FIFO", "RAND", "FixedAll", "EdgeOnly")
_DEGENERATE_NORM = 1e-6


class GlobalCacheTable:
    """I x L grid of optional unit entries plus global class frequencies."""

    def __init__(self, entries, present, freq):
        self.entries = np.array(entries, dtype=np.float64)
        self.present = np.array(present, dtype=bool)
        self.freq = np.array(freq, dtype=np.int64)

    @property
    def n_classes(self):
        return self.entries.shape[0]

    @property
    def n_layers(self):
        return self.entries.shape[1]

    @property
    def dim(self):
        return self.entries.shape[2]

    @property
    def entry_bytes(self):
        return self.dim * 4

    def copy(self):
        return GlobalCacheTable(self.entries, self.present, self.freq)


def init_global_cache(vectors, labels, n_classes) -> GlobalCacheTable:
    """Class means of calibration vectors (cache layers only), normalised.

    ``vectors`` is (N, L+1, d) or (N, L, d). Classes without samples, and
    means too short to normalise, stay absent.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_layers = vectors.shape[1] - 1 if vectors.ndim == 3 else 0
    dim = vectors.shape[2]
    sums = np.zeros((n_classes, n_layers, dim))
    np.add.at(sums, labels, vectors[:, :n_layers, :])
    counts = np.bincount(labels, minlength=n_classes)
    norms = np.linalg.norm(sums, axis=2)
    mean_norms = norms / np.maximum(counts, 1)[:, None]
    present = (counts[:, None] > 0) & (mean_norms >= _DEGENERATE_NORM)
    entries = np.zeros_like(sums)
    entries[present] = sums[present] / norms[present][:, None]
    return GlobalCacheTable(entries, present, counts)


def gcu_apply(table: GlobalCacheTable, payload: UploadPayload, gamma=GCU_DECAY, update_entries=True):
    """Merge one client's upload into the global table in place.

    Entry weights use the class frequencies from before this upload; the
    frequencies are then increased by the client's round counts.
    """
    phi = np.asarray(payload.phi, dtype=np.int64)
    if update_entries:
        for i, j in payload.touched_entries():
            total = table.freq[i] + phi[i]
            u = payload.vectors[i, j]
            if not table.present[i, j]:
                table.entries[i, j] = u
                table.present[i, j] = True
                continue
            if total == 0:
                continue
            merged = (gamma * table.freq[i] / total) * table.entries[i, j] + (phi[i] / total) * u
            norm = np.linalg.norm(merged)
            if norm < _DEGENERATE_NORM:
                continue
            table.entries[i, j] = merged / norm
    table.freq += phi


def class_scores(freq, tau, frames_per_round, decay=SCORE_DECAY) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.int64)
    return np.asarray(freq, dtype=np.float64) * decay ** (tau // frames_per_round)


def hot_spot_classes(scores, coverage=COVERAGE_TARGET) -> List[int]:
    """Shortest descending-score prefix whose sum reaches ``coverage`` of the total."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    target = scores.sum() * coverage
    chosen, acc = [], 0.0
    for i in order:
        chosen.append(int(i))
        acc += scores[i]
        if acc >= target:
            break
    return chosen


@dataclass
class Allocation:
    matrix: np.ndarray             # (I, L) bool
    hot_classes: List[int]
    layers: List[int]              # in selection order
    bytes_counted: int = 0

    def nbytes(self, entry_bytes):
        return int(self.matrix.sum()) * entry_bytes


def aca_allocate(freq, tau, hit_ratio, saved_time, budget, frames_per_round, entry_bytes,
                 present=None, score_decay=SCORE_DECAY, coverage=COVERAGE_TARGET) -> Allocation:
    """Adaptive cache allocation: hot-spot classes times greedily chosen layers."""
    freq = np.asarray(freq)
    n_classes = freq.size
    r = np.array(hit_ratio, dtype=np.float64)
    saved = np.asarray(saved_time, dtype=np.float64)
    n_layers = r.size - 1
    if present is None:
        present = np.ones((n_classes, n_layers), dtype=bool)
    matrix = np.zeros((n_classes, n_layers), dtype=bool)
    if budget < 0:
        raise ValidationError("budget must be non-negative")
    scores = class_scores(freq, tau, frames_per_round, score_decay)
    if scores.sum() <= 0:
        return Allocation(matrix, [], [], 0)
    hot = hot_spot_classes(scores, coverage)
    hot_idx = np.array(sorted(hot), dtype=np.int64)
    eligible = np.ones(n_layers, dtype=bool)
    spent = 0
    layers = []
    while True:
        zeta = np.where(eligible, saved[:n_layers] * r[:n_layers], 0.0)
        b = int(np.argmax(zeta))
        if zeta[b] <= 0:
            break
        cells = present[hot_idx, b]
        spent += int(cells.sum()) * entry_bytes
        if spent >= budget:
            break
        matrix[hot_idx[cells], b] = True
        eligible[b] = False
        layers.append(b)
        r[b:n_layers] = np.maximum(r[b:n_layers] - r[b], 0.0)
    return Allocation(matrix, hot, layers, spent)


class ReplacementCache:
    """Fixed-layer local cache whose class set follows LRU, FIFO or RAND."""

    def __init__(self, policy, capacity, n_classes, n_layers, fixed_layers, rng=None, present=None):
        if policy not in ("LRU", "FIFO", "RAND"):
            raise ValidationError(f"not a replacement policy: {policy}")
        self.policy = policy
        self.capacity = int(capacity)
        self.n_classes, self.n_layers = n_classes, n_layers
        self.fixed_layers = sorted(int(j) for j in fixed_layers)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.present = present
        self._slots: "OrderedDict[int, None]" = OrderedDict()

    @property
    def classes(self) -> List[int]:
        return list(self._slots)

    def observe(self, cls) -> bool:
        """Record an access; True when the cached class set changed."""
        if self.capacity <= 0 or not self.fixed_layers:
            return False
        if cls in self._slots:
            if self.policy == "LRU":
                self._slots.move_to_end(cls)
            return False
        if len(self._slots) >= self.capacity:
            if self.policy == "RAND":
                victim = sorted(self._slots)[int(self.rng.integers(len(self._slots)))]
                del self._slots[victim]
            else:
                self._slots.popitem(last=False)
        self._slots[cls] = None
        return True

    def allocation(self) -> np.ndarray:
        return baseline_allocate("FixedAll", self.n_classes, self.n_layers, self.fixed_layers,
                                 classes=self.classes, present=self.present)


def baseline_allocate(policy, n_classes, n_layers, fixed_layers=(), classes=None,
                      present=None) -> np.ndarray:
    """Allocation for the non-adaptive policies.

    EdgeOnly is empty; FixedAll holds ``classes`` (all classes by default)
    in every fixed layer. LRU/FIFO/RAND contents come from a
    ``ReplacementCache`` and are laid out the same way.
    """
    x = np.zeros((n_classes, n_layers), dtype=bool)
    if policy == "EdgeOnly":
        return x
    if policy not in POLICIES or policy == "ACA":
        raise ValidationError(f"unknown baseline policy {policy!r}")
    rows = np.arange(n_classes) if classes is None else np.asarray(sorted(classes), dtype=np.int64)
    for j in fixed_layers:
        x[rows, j] = True
    if present is not None:
        x &= present
    return x


def profile_hit_ratio(table: GlobalCacheTable, vectors, theta, alpha=0.5, layers=None) -> np.ndarray:
    """Cumulative fraction of probe frames resolved by each slot.

    Probes run against the full table with ``layers`` (default: all)
    activated; slot ``L`` is always 1.
    """
    allocation = table.present.copy()
    if layers is not None:
        mask = np.zeros(table.n_layers, dtype=bool)
        mask[list(layers)] = True
        allocation &= mask[None, :]
    ptr, cls, rows = lookup.pack_cache(table.entries, allocation)
    exit_slot, _, _ = lookup.walk_frames(vectors, ptr, cls, rows, table.n_classes, alpha, theta)
    counts = np.bincount(exit_slot, minlength=table.n_layers + 1)
    return np.cumsum(counts) / max(len(exit_slot), 1)


def select_fixed_layers(profile, saved_time, count) -> List[int]:
    """Layers with the highest expected benefit, picked as ACA's layer stage does."""
    r = np.array(profile, dtype=np.float64)
    saved = np.asarray(saved_time, dtype=np.float64)
    n_layers = r.size - 1
    eligible = np.ones(n_layers, dtype=bool)
    chosen = []
    while len(chosen) < count:
        zeta = np.where(eligible, saved[:n_layers] * r[:n_layers], -np.inf)
        b = int(np.argmax(zeta))
        if not np.isfinite(zeta[b]) or zeta[b] <= 0:
            break
        chosen.append(b)
        eligible[b] = False
        r[b:n_layers] = np.maximum(r[b:n_layers] - r[b], 0.0)
    if len(chosen) < count:
        base = np.asarray(profile)[:n_layers] * saved[:n_layers]
        for b in np.lexsort((np.arange(n_layers), -base)):
            if len(chosen) >= count:
                break
            if int(b) not in chosen:
                chosen.append(int(b))
    return sorted(chosen)


def spaced_layers(n_layers, fraction) -> List[int]:
    """Evenly spaced cache layers covering ``fraction`` of all layers (at least one)."""
    n = max(1, int(round(fraction * n_layers)))
    n = min(n, n_layers)
    return sorted({int((k + 0.5) * n_layers / n) for k in range(n)})


_SNAPSHOT_MAGIC = b"CCSNAP01"


def export_snapshot(table: GlobalCacheTable, path):
    """Write present entries as (class, layer, d float64) records.

    Layout (little-endian): magic ``CCSNAP01``; uint32 I, L, d, n_records;
    int64 frequency[I]; then n_records of int32 class, int32 layer, float64[d].
    """
    cls, layer = np.nonzero(table.present)
    rec = np.zeros(cls.size, dtype=[("cls", "<i4"), ("layer", "<i4"), ("vec", "<f8", (table.dim,))])
    rec["cls"], rec["layer"] = cls, layer
    rec["vec"] = table.entries[cls, layer]
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<4I", table.n_classes, table.n_layers, table.dim, cls.size))
        fh.write(table.freq.astype("<i8").tobytes())
        fh.write(rec.tobytes())


def read_snapshot(path) -> GlobalCacheTable:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _SNAPSHOT_MAGIC:
        raise ValidationError("not a cache snapshot")
    n_classes, n_layers, dim, n = struct.unpack_from("<4I", data, 8)
    off = 8 + 16
    freq = np.frombuffer(data, dtype="<i8", count=n_classes, offset=off)
    off += 8 * n_classes
    dt = np.dtype([("cls", "<i4"), ("layer", "<i4"), ("vec", "<f8", (dim,))])
    rec = np.frombuffer(data, dtype=dt, count=n, offset=off)
    entries = np.zeros((n_classes, n_layers, dim))
    present = np.zeros((n_classes, n_layers), dtype=bool)
    entries[rec["cls"], rec["layer"]] = rec["vec"]
    present[rec["cls"], rec["layer"]] = True
    return GlobalCacheTable(entries, present, freq)


def pooled_hit_ratio(ratios: Sequence[np.ndarray]) -> Optional[np.ndarray]:
    if not ratios:
        return None
    return np.mean(np.stack(ratios), axis=0)
