"""Latency cost model, cache sizing and run metrics.

Times are ms-equivalents on a virtual clock. A frame pays the block compute
time of every block it traverses plus the lookup time of every activated
cache layer it reaches.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import ValidationError

ENTRY_COMPONENT_BYTES = 4
LOOKUP_FRACTION = 0.5622


@dataclass(frozen=True)
class CostProfile:
    block_times: np.ndarray        # (L+1,)
    lookup_per_entry: float
    lookup_per_layer: float

    def __post_init__(self):
        bt = np.asarray(self.block_times, dtype=np.float64)
        if bt.ndim != 1 or bt.size < 2:
            raise ValidationError("need block times for L >= 1 layers plus the final block")
        if np.any(bt < 0) or self.lookup_per_entry < 0 or self.lookup_per_layer < 0:
            raise ValidationError("costs must be non-negative")
        object.__setattr__(self, "block_times", bt)

    @property
    def n_layers(self):
        return self.block_times.size - 1

    @property
    def edge_latency(self) -> float:
        return float(sum(self.block_times.tolist()))

    def saved_time(self) -> np.ndarray:
        """Compute time avoided by exiting at each slot (zero at the final one)."""
        bt = self.block_times.tolist()
        return np.array([sum(bt[j + 1:]) for j in range(len(bt))])

    def lookup_costs(self, allocation) -> np.ndarray:
        """Per-slot lookup time C_j for an (I, L) allocation; C_{L+1} = 0."""
        counts = np.asarray(allocation, dtype=bool).sum(axis=0)
        c = np.where(counts > 0, self.lookup_per_layer + self.lookup_per_entry * counts, 0.0)
        return np.append(c, 0.0)

    def exit_latencies(self, allocation) -> np.ndarray:
        """Latency of a frame for each exit slot under ``allocation``."""
        lookups = self.lookup_costs(allocation).tolist()
        out, t = [], 0.0
        for lam, c in zip(self.block_times.tolist(), lookups):
            t += lam
            t += c
            out.append(t)
        return np.array(out)


def calibrate_default_costs(n_layers, reference_classes=50, total_compute=100.0,
                            lookup_fraction=LOOKUP_FRACTION, fixed_share=0.3) -> CostProfile:
    """Uniform block times summing to ``total_compute``.

    Lookup coefficients are chosen so that all layers holding
    ``reference_classes`` entries cost ``lookup_fraction`` of the compute,
    ``fixed_share`` of it as per-layer overhead and the rest per entry.
    """
    if n_layers < 1:
        raise ValidationError("need at least one cache layer")
    budget = lookup_fraction * total_compute
    blocks = np.full(n_layers + 1, total_compute / (n_layers + 1))
    per_layer = fixed_share * budget / n_layers
    per_entry = (1.0 - fixed_share) * budget / (n_layers * reference_classes)
    return CostProfile(blocks, per_entry, per_layer)


def cache_size(allocation, entry_bytes) -> int:
    """Bytes held by an allocation; ``entry_bytes`` is a scalar or an (I, L) grid."""
    x = np.asarray(allocation, dtype=bool)
    m = np.broadcast_to(np.asarray(entry_bytes), x.shape)
    return int(np.sum(m[x]))


def expected_latency(allocation, hit_before, cost: CostProfile) -> float:
    """Expected per-frame latency given P_j = P(hit before slot j)."""
    p = np.asarray(hit_before, dtype=np.float64)
    if p.shape != cost.block_times.shape:
        raise ValidationError("need one probability per slot")
    if np.any(p < 0) or np.any(p > 1) or p[0] != 0 or np.any(np.diff(p) < 0):
        raise ValidationError("hit-before probabilities must be non-decreasing in [0, 1] with P_1 = 0")
    step = cost.block_times + cost.lookup_costs(allocation)
    # summed in slot order, like edge_latency, so the no-cache case matches it exactly
    return float(sum(((1.0 - p) * step).tolist()))


@dataclass
class RunMetrics:
    frames: int = 0
    total_latency_ms: float = 0.0
    correct: int = 0
    hits: int = 0
    hit_correct: int = 0
    exit_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cache_bytes_used: int = 0
    collected_hit: int = 0
    collected_miss: int = 0

    @property
    def average_latency_ms(self) -> float:
        return self.total_latency_ms / self.frames if self.frames else 0.0

    @property
    def overall_accuracy(self) -> float:
        return self.correct / self.frames if self.frames else 0.0

    @property
    def hit_ratio(self) -> float:
        return self.hits / self.frames if self.frames else 0.0

    @property
    def hit_accuracy(self) -> float:
        return self.hit_correct / self.hits if self.hits else 0.0

    @property
    def per_layer_hit_ratio(self) -> np.ndarray:
        if not self.frames:
            return np.zeros_like(self.exit_counts, dtype=np.float64)
        return self.exit_counts / self.frames

    def merge(self, other: "RunMetrics") -> "RunMetrics":
        n = max(self.exit_counts.size, other.exit_counts.size)
        exits = np.zeros(n, dtype=np.int64)
        exits[: self.exit_counts.size] += self.exit_counts
        exits[: other.exit_counts.size] += other.exit_counts
        return RunMetrics(
            self.frames + other.frames,
            self.total_latency_ms + other.total_latency_ms,
            self.correct + other.correct,
            self.hits + other.hits,
            self.hit_correct + other.hit_correct,
            exits,
            max(self.cache_bytes_used, other.cache_bytes_used),
            self.collected_hit + other.collected_hit,
            self.collected_miss + other.collected_miss,
        )


@dataclass(frozen=True)
class Summary:
    average_latency_ms: float
    overall_accuracy: float
    frames: int


def aggregate(per_client: Sequence, frame_counts: Sequence[int] = None) -> Summary:
    """Frame-weighted mean latency and accuracy across clients.

    ``per_client`` holds RunMetrics, or (latency, accuracy) pairs when
    ``frame_counts`` is given.
    """
    if not per_client:
        raise ValidationError("nothing to aggregate")
    if frame_counts is None:
        frame_counts = [m.frames for m in per_client]
        pairs = [(m.average_latency_ms, m.overall_accuracy) for m in per_client]
    else:
        pairs = [(m.average_latency_ms, m.overall_accuracy) if isinstance(m, RunMetrics) else tuple(m)
                 for m in per_client]
    if len(frame_counts) != len(pairs):
        raise ValidationError("metrics and frame counts differ in length")
    n = float(sum(frame_counts))
    if n <= 0:
        raise ValidationError("no frames to aggregate")
    lat = sum(k * t for k, (t, _) in zip(frame_counts, pairs)) / n
    acc = sum(k * a for k, (_, a) in zip(frame_counts, pairs)) / n
    return Summary(lat, acc, int(n))


class MetricsSink:
    """Append-only record buffer; appends are serialized."""

    def __init__(self):
        self._rows: List[dict] = []
        self._lock = threading.Lock()

    def append(self, row: dict):
        with self._lock:
            self._rows.append(dict(row))

    def rows(self) -> List[dict]:
        with self._lock:
            return list(self._rows)

    def __len__(self):
        return len(self._rows)
