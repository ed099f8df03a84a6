"""Synthetic labelled feature streams.

Each class owns one centroid per layer slot (``L`` cache layers plus the
final classifier slot). Centroids share a per-slot mean direction whose
weight fades with depth, so shallow slots are nearly indistinguishable and
deep slots are well separated. Frames are noisy copies of their class
centroid; labels arrive in same-class batches for temporal locality.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ValidationError

UNIFORM = "uniform"
LONGTAIL = "longtail"
DIRICHLET = "dirichlet"
PRODUCT = "product"


def normalize(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=axis, keepdims=True)


def _unit_vectors(rng, shape):
    return normalize(rng.standard_normal(shape))


def _directions(rng, n_classes, slots, dim):
    """Shared and per-class directions for every slot.

    When ``dim`` allows, the class directions are orthonormal and orthogonal
    to the shared one, which makes all centroid pairs equally similar.
    Otherwise they are independent random unit vectors.
    """
    if n_classes + 1 > dim:
        return _unit_vectors(rng, (slots, dim)), _unit_vectors(rng, (n_classes, slots, dim))
    q, _ = np.linalg.qr(rng.standard_normal((slots, dim, n_classes + 1)))
    q = q.transpose(0, 2, 1)                       # (slots, I+1, d)
    return q[:, 0], q[:, 1:].transpose(1, 0, 2)


@dataclass
class GroundTruth:
    centroids: np.ndarray          # (I, L+1, d), unit rows
    noise: np.ndarray              # (L+1,), strictly decreasing
    drift_rate: float = 0.0
    difficulty: float = 0.0

    @property
    def n_classes(self):
        return self.centroids.shape[0]

    @property
    def n_slots(self):
        return self.centroids.shape[1]

    @property
    def dim(self):
        return self.centroids.shape[2]

    @classmethod
    def generate(cls, n_classes, n_layers, dim, rng, separation=(0.006, 0.3),
                 noise=(0.3, 0.2), drift_rate=0.0, difficulty=0.4):
        """Random world with ``n_layers`` cache layers plus the final slot.

        ``separation`` gives ``1 - cos`` between class centroids at the first
        and last slot (geometric in between). ``noise`` is the noise-to-signal norm ratio at the
        first and last slot (linear in between).
        """
        if n_classes < 2 or n_layers < 1 or dim < 2:
            raise ValidationError("need >= 2 classes, >= 1 layer, dim >= 2")
        slots = n_layers + 1
        sep = np.geomspace(separation[0], separation[1], slots)
        if np.any(sep <= 0) or np.any(sep > 1):
            raise ValidationError("separation must lie in (0, 1]")
        sigma = np.linspace(noise[0], noise[1], slots)
        if slots > 1 and not np.all(np.diff(sigma) < 0):
            raise ValidationError("noise schedule must be strictly decreasing")
        shared = np.sqrt((1.0 - sep) / sep)
        mean_dir, own = _directions(rng, n_classes, slots, dim)
        centroids = normalize(shared[None, :, None] * mean_dir[None] + own)
        return cls(centroids, sigma, float(drift_rate), float(difficulty))


@dataclass
class ClassDistribution:
    probs: np.ndarray
    source: str = UNIFORM
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError("class probabilities must form a simplex")
        self.probs = p

    @property
    def n_classes(self):
        return self.probs.size


def build_uniform(n_classes) -> ClassDistribution:
    return ClassDistribution(np.full(n_classes, 1.0 / n_classes), UNIFORM)


def build_longtail(n_classes, rho) -> ClassDistribution:
    """Exponentially decaying class frequencies with head/tail ratio ``rho``."""
    if rho < 1:
        raise ValidationError("imbalance ratio rho must be >= 1")
    if n_classes < 2:
        raise ValidationError("need at least two classes")
    w = float(rho) ** (-np.arange(n_classes) / (n_classes - 1))
    return ClassDistribution(w / w.sum(), LONGTAIL, {"rho": float(rho)})


def build_noniid(n_classes, p, rng) -> ClassDistribution:
    """Symmetric Dirichlet draw with concentration ``1/p``; ``p == 0`` is IID."""
    if p < 0:
        raise ValidationError("non-IID level p must be >= 0")
    if p == 0:
        return build_uniform(n_classes)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        raw = rng.dirichlet(np.full(n_classes, 1.0 / p))
    # concentrations too large for floating point are the IID limit
    if not np.all(np.isfinite(raw)):
        return build_uniform(n_classes)
    if raw.sum() <= 0:
        # underflow at tiny concentration; the limit puts all mass on one class
        raw = np.zeros(n_classes)
        raw[rng.integers(n_classes)] = 1.0
    return ClassDistribution(raw / raw.sum(), DIRICHLET, {"p": float(p)})


def combine(a: ClassDistribution, b: ClassDistribution) -> ClassDistribution:
    w = a.probs * b.probs
    if w.sum() <= 0:
        raise ValidationError("distributions have disjoint support")
    return ClassDistribution(w / w.sum(), PRODUCT, {**a.params, **b.params})


def next_batch(dist: ClassDistribution, batch_len, rng) -> np.ndarray:
    if batch_len < 1:
        raise ValidationError("batch_len must be >= 1")
    c = rng.choice(dist.n_classes, p=dist.probs)
    return np.full(batch_len, c, dtype=np.int64)


class LabelStream:
    """Endless label sequence made of same-class batches.

    Batches may straddle ``take`` calls, so a round boundary does not cut
    temporal locality.
    """

    def __init__(self, dist: ClassDistribution, batch_len, rng):
        self.dist = dist
        self.batch_len = int(batch_len)
        self.rng = rng
        self._pending = np.empty(0, dtype=np.int64)

    def take(self, n) -> np.ndarray:
        parts = [self._pending]
        have = self._pending.size
        while have < n:
            b = next_batch(self.dist, self.batch_len, self.rng)
            parts.append(b)
            have += b.size
        labels = np.concatenate(parts)
        self._pending = labels[n:]
        return labels[:n]


@dataclass
class StreamSample:
    true_label: int
    layer_vectors: np.ndarray      # (L+1, d)
    frame_index: int = 0
    difficulty: float = 1.0


def _noisy(centroids, sigma, scale, eta):
    dim = centroids.shape[-1]
    amp = scale[..., None, None] * sigma[:, None] / np.sqrt(dim)
    v = normalize(centroids + amp * eta)
    return np.where(amp == 0.0, centroids, v)


def emit_samples(gt: GroundTruth, labels, rng) -> np.ndarray:
    """Layer vectors for a block of frames, shape (F, L+1, d)."""
    labels = np.asarray(labels, dtype=np.int64)
    eta = rng.standard_normal((labels.size, gt.n_slots, gt.dim))
    scale = np.exp(gt.difficulty * rng.standard_normal(labels.size))
    return _noisy(gt.centroids[labels], gt.noise, scale, eta)


def emit_sample(gt: GroundTruth, label, rng, frame_index=0) -> StreamSample:
    if not 0 <= label < gt.n_classes:
        raise ValidationError(f"label {label} out of range")
    eta = rng.standard_normal((gt.n_slots, gt.dim))
    scale = float(np.exp(gt.difficulty * rng.standard_normal()))
    vecs = _noisy(gt.centroids[label], gt.noise, np.asarray(scale), eta)
    return StreamSample(int(label), vecs, frame_index, scale)


def apply_drift(gt: GroundTruth, rng) -> GroundTruth:
    """Nudge every centroid by ``drift_rate`` along a fresh random direction."""
    if gt.drift_rate < 0:
        raise ValidationError("drift rate must be >= 0")
    if gt.drift_rate == 0:
        return gt
    w = _unit_vectors(rng, gt.centroids.shape)
    return replace(gt, centroids=normalize(gt.centroids + gt.drift_rate * w))


def final_probs(final_vectors, gt: GroundTruth, temperature=0.05) -> np.ndarray:
    """Softmax over cosine similarity to the final-slot centroids."""
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    logits = np.asarray(final_vectors) @ gt.centroids[:, -1, :].T / temperature
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=-1, keepdims=True)


def final_classify(sample: StreamSample, gt: GroundTruth, temperature=0.05) -> np.ndarray:
    return final_probs(sample.layer_vectors[-1], gt, temperature)


def top_two_gap(probs) -> np.ndarray:
    p = np.asarray(probs)
    if p.shape[-1] < 2:
        return np.ones(p.shape[:-1])
    top2 = np.partition(p, p.shape[-1] - 2, axis=-1)[..., -2:]
    return top2[..., 1] - top2[..., 0]


def make_distribution(n_classes, kind=UNIFORM, rho=1.0, p=0.0, rng: Optional[np.random.Generator] = None):
    """Client distribution from scenario settings (``kind`` may combine with '+')."""
    parts = []
    for k in kind.split("+"):
        k = k.strip().lower()
        if k == UNIFORM:
            parts.append(build_uniform(n_classes))
        elif k == LONGTAIL:
            parts.append(build_longtail(n_classes, rho))
        elif k in ("noniid", DIRICHLET):
            parts.append(build_noniid(n_classes, p, rng))
        else:
            raise ValidationError(f"unknown distribution {k!r}")
    dist = parts[0]
    for other in parts[1:]:
        dist = combine(dist, other)
    return dist
