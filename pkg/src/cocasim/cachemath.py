"""Semantic-cache lookup math.

Cosine similarity against cached class centroids, cross-layer accumulation
with decay ``alpha``, the relative top-two margin (discriminative score) and
the hit decision against threshold ``theta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError

DEFAULT_ALPHA = 0.5
DEFAULT_THETA = 0.012


def cosine_similarity(v, e) -> float:
    """Dot product of two unit vectors (their cosine)."""
    v = np.asarray(v, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if v.shape != e.shape:
        raise ConfigError(f"dimension mismatch: {v.shape} vs {e.shape}")
    return float(np.dot(v, e))


def accumulate(c: float, prev: float, alpha: float = DEFAULT_ALPHA) -> float:
    return c + alpha * prev


def discriminative_score(values: Sequence[float]) -> Optional[float]:
    """Relative margin ``(A_a - A_b) / A_b`` of the two largest accumulators.

    Returns None when fewer than two classes are present or the runner-up is
    not positive; callers treat None as a forced miss.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.size < 2:
        return None
    top2 = np.partition(a, a.size - 2)[-2:]
    second, first = float(top2[0]), float(top2[1])
    if second <= 0.0:
        return None
    return (first - second) / second


@dataclass(frozen=True)
class HitDecision:
    hit: bool
    cls: Optional[int] = None
    layer: Optional[int] = None
    score: Optional[float] = None

    @classmethod
    def miss(cls, score=None):
        return cls(False, None, None, score)


def hit_test(score: Optional[float], theta: float, values=None, classes=None,
             layer: Optional[int] = None) -> HitDecision:
    """Hit iff ``score`` is defined and strictly above ``theta``.

    When ``values`` is given the hit carries the argmax class; ties go to the
    lowest class index (``classes`` must then be ascending).
    """
    if theta <= 0:
        raise ConfigError("theta must be positive")
    if score is None or not score > theta:
        return HitDecision.miss(score)
    cls = None
    if values is not None:
        k = int(np.argmax(np.asarray(values)))
        cls = int(classes[k]) if classes is not None else k
    return HitDecision(True, cls, layer, score)


class AccumulatorState:
    """Per-frame accumulators over the classes held by the local cache.

    Only activated layers advance the recurrence; a class that has no entry
    at some activated layer keeps its value unchanged across that layer.
    """

    def __init__(self, n_classes: int, alpha: float = DEFAULT_ALPHA):
        self.alpha = alpha
        self.values = np.zeros(n_classes)
        self.last_active_layer: Optional[int] = None

    def reset(self):
        self.values[:] = 0.0
        self.last_active_layer = None

    def step(self, layer: int, classes, sims) -> np.ndarray:
        classes = np.asarray(classes, dtype=np.int64)
        acc = np.asarray(sims, dtype=np.float64) + self.alpha * self.values[classes]
        self.values[classes] = acc
        self.last_active_layer = layer
        return acc

    def decide(self, layer: int, classes, theta: float) -> HitDecision:
        classes = np.asarray(classes, dtype=np.int64)
        acc = self.values[classes]
        return hit_test(discriminative_score(acc), theta, acc, classes, layer)

