"""Synthetic Gaussian-cluster data on the unit sphere, with a Bayes-oracle score."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .embeddings import AnchorSet, EmbeddingSet
from .zeroshot import accuracy, zero_shot_predict


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic clusters with unit within-class std.

    Centers share one norm and have minimum pairwise distance exactly
    ``center_separation``. ``offset`` adds a common component of that norm,
    orthogonal to the class directions, which narrows the spread of cosine
    similarities the way real image/text embeddings cluster in a cone.
    Anchors are the centers plus ``N(0, anchor_noise**2)`` noise; features
    and anchors are L2-normalized at the end.
    """

    k: int = 10
    d: int = 32
    n_per_class: int = 100
    center_separation: float = 6.0
    anchor_noise: float = 0.0
    seed: int = 0
    offset: float = 20.0

    def __post_init__(self):
        if not self.center_separation > 0:
            raise ValueError("center_separation must be > 0")
        if min(self.k, self.d, self.n_per_class) < 1:
            raise ValueError("k, d and n_per_class must be >= 1")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")
        if self.anchor_noise < 0:
            raise ValueError("anchor_noise must be >= 0")


@dataclass
class SyntheticData:
    features: EmbeddingSet
    anchors: AnchorSet
    labels: np.ndarray
    bayes_accuracy: float
    centers: np.ndarray  # un-normalized generative means

    def __iter__(self):
        # (features, anchors, labels, bayes_accuracy) unpacking
        return iter((self.features, self.anchors, self.labels, self.bayes_accuracy))


def _min_pairwise(x: np.ndarray) -> float:
    if x.shape[0] < 2:
        return np.inf
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(max(d2.min(), 0.0)))


def place_centers(k: int, d: int, separation: float, rng: np.random.Generator,
                  attempts: int = 32, offset: float = 0.0) -> np.ndarray:
    """Equal-norm centers whose closest pair is exactly ``separation`` apart.

    With ``offset > 0`` the class directions live in the last ``d - 1``
    coordinates and every center gets ``offset`` in coordinate 0.
    """
    free = d - 1 if offset > 0 else d
    if free < 1:
        raise ValueError("an offset needs d >= 2")
    best, best_gap = None, -1.0
    for _ in range(attempts):
        u = rng.standard_normal((k, free))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        gap = _min_pairwise(u)
        if gap > best_gap:
            best, best_gap = u, gap
    if k > 1 and best_gap < 1e-6:
        raise ValueError(f"cannot place {k} centers at separation {separation} in {d} dimensions")
    spread = best * (separation if k == 1 else separation / best_gap)
    if offset == 0:
        return spread
    return np.hstack([np.full((k, 1), offset), spread])


def bayes_predict(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Maximum-likelihood class under the true model (equal priors, identity covariance)."""
    d2 = np.sum(x * x, axis=1)[:, None] - 2.0 * x @ centers.T + np.sum(centers * centers, axis=1)
    return np.argmin(d2, axis=1)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    centers = place_centers(spec.k, spec.d, spec.center_separation, rng, offset=spec.offset)
    labels = np.repeat(np.arange(spec.k), spec.n_per_class)
    raw = centers[labels] + rng.standard_normal((labels.size, spec.d))
    bayes = float(np.mean(bayes_predict(raw, centers) == labels))
    noisy = centers + spec.anchor_noise * rng.standard_normal(centers.shape)
    return SyntheticData(EmbeddingSet.from_array(raw), AnchorSet.from_array(noisy), labels, bayes, centers)


def tune_anchor_noise(spec: SyntheticSpec, target: tuple[float, float] = (0.80, 0.90),
                      max_steps: int = 40) -> tuple[SyntheticSpec, SyntheticData, float]:
    """Bisect ``anchor_noise`` until zero-shot accuracy lands inside ``target``.

    The same seed is reused at every step, so features and labels stay fixed
    and zero-shot accuracy changes only through the anchor perturbation.
    Returns the tuned spec, its data and the achieved zero-shot accuracy.
    """
    lo_acc, hi_acc = target

    def evaluate(noise):
        s = replace(spec, anchor_noise=noise)
        data = generate_synthetic(s)
        return s, data, accuracy(zero_shot_predict(data.features, data.anchors), data.labels)

    lo, hi = 0.0, max(spec.center_separation, 1.0)
    s, data, acc = evaluate(hi)
    while acc > lo_acc:
        hi *= 2.0
        s, data, acc = evaluate(hi)
        if hi > 1e6:
            raise RuntimeError("could not degrade zero-shot accuracy into the target range")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        s, data, acc = evaluate(mid)
        if lo_acc <= acc <= hi_acc:
            return s, data, acc
        if acc > hi_acc:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"zero-shot accuracy {acc:.3f} not in {target} after {max_steps} steps")
