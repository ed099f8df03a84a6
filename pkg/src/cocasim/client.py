"""Client-side inference loop and status collection.

Indices are 0-based: class ``i`` in ``[0, I)``, slot ``j`` in ``[0, L]``
where slots ``0..L-1`` are cache layers and slot ``L`` is the final block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import lookup
from .costs import CostProfile, RunMetrics
from .workload import GroundTruth, StreamSample, final_probs, top_two_gap

NONE, HIT_SAMPLE, MISS_SAMPLE = "none", "hit_sample", "miss_sample"


@dataclass(frozen=True)
class ClientConfig:
    theta: float = 0.012
    hit_margin: float = 0.1        # hit samples need D above this to be collected
    miss_margin: float = 0.25      # miss samples need prob1 - prob2 above this
    alpha: float = 0.5
    beta: float = 0.95
    temperature: float = 0.05
    ema: float = 0.05
    label_oracle: str = "predicted"


@dataclass
class InferenceOutcome:
    predicted: int
    exit_slot: int
    latency: float
    hit: bool
    collected: str = NONE
    score: float = math.nan
    true_label: int = -1


@dataclass
class UploadPayload:
    client_id: int
    touched: np.ndarray            # (I, L) bool
    vectors: np.ndarray            # (I, L, d), unit rows where touched
    phi: np.ndarray                # (I,)
    hit_ratio: np.ndarray          # (L+1,)
    saved_time: np.ndarray         # (L+1,)

    def touched_entries(self):
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.touched))]


class LocalCache:
    """Entries a client holds for one round plus derived lookup tables."""

    def __init__(self, entries, allocation, cost: CostProfile):
        self.entries = entries
        self.allocation = np.asarray(allocation, dtype=bool)
        self.cost = cost
        self.activated = self.allocation.any(axis=0)
        self.exit_latency = cost.exit_latencies(self.allocation)
        self._packed = None

    @classmethod
    def empty(cls, n_classes, n_layers, dim, cost):
        return cls(np.zeros((n_classes, n_layers, dim)), np.zeros((n_classes, n_layers), bool), cost)

    def with_allocation(self, allocation):
        return LocalCache(self.entries, allocation, self.cost)

    @property
    def is_empty(self):
        return not self.activated.any()

    def walk(self, vectors, n_classes, alpha, theta):
        n = vectors.shape[0]
        n_layers = self.allocation.shape[1]
        if self.is_empty or not math.isfinite(theta):
            return (np.full(n, n_layers, dtype=np.int64), np.full(n, -1, dtype=np.int64),
                    np.full(n, np.nan))
        if self._packed is None:
            self._packed = lookup.pack_cache(self.entries, self.allocation)
        ptr, cls, rows = self._packed
        return lookup.walk_frames(vectors, ptr, cls, rows, n_classes, alpha, theta)

    def latency_table(self, theta):
        # an infinite threshold can never hit, so lookups are skipped entirely
        if not math.isfinite(theta):
            return self.cost.exit_latencies(np.zeros_like(self.allocation))
        return self.exit_latency


class ClientState:
    def __init__(self, client_id, n_classes, n_layers, dim, cost: CostProfile,
                 config: ClientConfig = ClientConfig(), hit_prior=None):
        self.client_id = client_id
        self.n_classes, self.n_layers, self.dim = n_classes, n_layers, dim
        self.config = config
        self.frame_count = 0
        self._last_seen = np.zeros(n_classes, dtype=np.int64)
        self.phi = np.zeros(n_classes, dtype=np.int64)
        self.update = np.zeros((n_classes, n_layers, dim))
        self.touched = np.zeros((n_classes, n_layers), dtype=bool)
        if hit_prior is None:
            hit_prior = np.full(n_layers + 1, 1.0 / (n_layers + 1))
        self.hit_ratio = np.array(hit_prior, dtype=np.float64)
        self.saved_time = cost.saved_time()
        self.allocation = np.zeros((n_classes, n_layers), dtype=bool)
        self.round_counter = 0

    @property
    def tau(self) -> np.ndarray:
        """Frames since each class was last observed."""
        return self.frame_count - self._last_seen

    def observe(self, cls):
        self.frame_count += 1
        self._last_seen[cls] = self.frame_count
        self.phi[cls] += 1


def _collect_kind(hit, score, gap, cfg: ClientConfig):
    if hit:
        return HIT_SAMPLE if score > cfg.hit_margin else NONE
    return MISS_SAMPLE if gap > cfg.miss_margin else NONE


def infer_frame(sample: StreamSample, state: ClientState, cache: LocalCache, gt: GroundTruth,
                cfg: Optional[ClientConfig] = None) -> InferenceOutcome:
    """Cached early-exit inference of one frame; updates tau and phi."""
    cfg = cfg or state.config
    vecs = sample.layer_vectors[None]
    exit_slot, pred, score = cache.walk(vecs, state.n_classes, cfg.alpha, cfg.theta)
    out = _resolve(state, cache, vecs, np.array([sample.true_label]), exit_slot, pred, score, gt, cfg, 0)
    _bookkeep(state, out, cfg)
    return out


def _resolve(state, cache, vectors, labels, exit_slot, pred, score, gt, cfg, f):
    latency = float(cache.latency_table(cfg.theta)[exit_slot[f]])
    hit = bool(pred[f] >= 0)
    if hit:
        predicted, d, gap = int(pred[f]), float(score[f]), 0.0
    else:
        probs = final_probs(vectors[f, -1], gt, cfg.temperature)
        predicted, d, gap = int(np.argmax(probs)), math.nan, float(top_two_gap(probs))
    return InferenceOutcome(predicted, int(exit_slot[f]), latency, hit,
                            _collect_kind(hit, d, gap, cfg), d, int(labels[f]))


def _bookkeep(state, out, cfg):
    cls = out.true_label if cfg.label_oracle == "true" else out.predicted
    state.observe(cls)


def collect_update(state: ClientState, outcome: InferenceOutcome, sample_vectors, beta=None):
    """Fold a selected frame's layer vectors into the update table (unnormalised)."""
    if outcome.collected == NONE:
        return
    beta = state.config.beta if beta is None else beta
    i = outcome.true_label if state.config.label_oracle == "true" else outcome.predicted
    stop = outcome.exit_slot + 1 if outcome.collected == HIT_SAMPLE else state.n_layers
    stop = min(stop, state.n_layers)
    v = np.asarray(sample_vectors)[:stop]
    state.update[i, :stop] = v + beta * state.update[i, :stop]
    state.touched[i, :stop] = True


def update_hit_stats(state: ClientState, outcome: InferenceOutcome, activated=None, ema=None):
    """EMA of "resolved at or before slot j".

    A frame leaving at slot e is resolved at every slot >= e; it was observed
    unresolved at the activated layers before e. Layers without a cache say
    nothing about hits they could have had and keep their estimate.
    """
    lam = state.config.ema if ema is None else ema
    r = state.hit_ratio
    e = outcome.exit_slot
    r[e:] += lam * (1.0 - r[e:])
    if activated is None:
        activated = np.ones(state.n_layers, dtype=bool)
    before = np.nonzero(np.asarray(activated)[:e])[0]
    r[before] *= 1.0 - lam


def finalize_round(state: ClientState) -> UploadPayload:
    """Snapshot the round's collection for upload and reset per-round state."""
    touched = state.touched.copy()
    vectors = np.zeros_like(state.update)
    if touched.any():
        u = state.update[touched]
        vectors[touched] = u / np.linalg.norm(u, axis=1, keepdims=True)
    payload = UploadPayload(state.client_id, touched, vectors, state.phi.copy(),
                            state.hit_ratio.copy(), state.saved_time.copy())
    state.phi[:] = 0
    state.update[:] = 0.0
    state.touched[:] = False
    state.round_counter += 1
    return payload


@dataclass
class BlockResult:
    metrics: RunMetrics
    outcomes: List[InferenceOutcome] = field(default_factory=list)


def process_block(state: ClientState, cache: LocalCache, vectors, labels, gt: GroundTruth,
                  replacement=None, keep_outcomes=False) -> BlockResult:
    """Run a round's frames through lookup, selection and statistics.

    The cache is fixed for the whole round. A ``replacement`` policy only
    records the observed classes; its new contents are delivered with the
    next round's allocation.
    """
    cfg = state.config
    metrics = RunMetrics(exit_counts=np.zeros(state.n_layers + 1, dtype=np.int64),
                         cache_bytes_used=0)
    outcomes = []
    exit_slot, pred, score = cache.walk(vectors, state.n_classes, cfg.alpha, cfg.theta)
    for f in range(len(labels)):
        out = _resolve(state, cache, vectors, labels, exit_slot, pred, score, gt, cfg, f)
        _bookkeep(state, out, cfg)
        collect_update(state, out, vectors[f])
        update_hit_stats(state, out, cache.activated)
        _tally(metrics, out, cache)
        if keep_outcomes:
            outcomes.append(out)
        if replacement is not None:
            replacement.observe(out.predicted)
    state.allocation = cache.allocation.copy()
    return BlockResult(metrics, outcomes)


def _tally(m: RunMetrics, out: InferenceOutcome, cache: LocalCache):
    m.frames += 1
    m.total_latency_ms += out.latency
    correct = out.predicted == out.true_label
    m.correct += correct
    if out.hit:
        m.hits += 1
        m.hit_correct += correct
    m.exit_counts[out.exit_slot] += 1
    m.collected_hit += out.collected == HIT_SAMPLE
    m.collected_miss += out.collected == MISS_SAMPLE
    entry_bytes = cache.entries.shape[-1] * 4
    m.cache_bytes_used = max(m.cache_bytes_used, int(cache.allocation.sum()) * entry_bytes)
