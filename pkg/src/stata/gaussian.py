"""Diagonal Gaussian class models regularized toward a fixed text anchor.

Each class k carries a mean ``mu[k]`` and a diagonal covariance ``sigma[k]``.
The anchor keeps ``mu_prime = t_k`` and one shared diagonal ``sigma_prime``
and is never updated. Updates are convex combinations, weighted by
``beta[k]``, of the assignment-weighted sample statistics and anchor terms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

VARIANCE_FLOOR = 1e-12
EMPTY_MASS = 1e-30

# Above this many N*K*d elements, squared residuals are expanded into matrix
# products instead of materialized.
_DIRECT_LIMIT = 4_000_000

BetaMode = Literal["hard", "soft"]


@dataclass
class GaussianBank:
    mu: np.ndarray     # (K, d)
    sigma: np.ndarray  # (K, d) diagonal covariances

    def copy(self) -> "GaussianBank":
        return GaussianBank(self.mu.copy(), self.sigma.copy())

    @property
    def k(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class AnchorDistribution:
    mu_prime: np.ndarray     # (K, d), the text embeddings
    sigma_prime: np.ndarray  # (d,), shared by all classes

    def __post_init__(self):
        for arr in (self.mu_prime, self.sigma_prime):
            if arr.flags.writeable and arr.flags.owndata:
                arr.setflags(write=False)

    def as_bank(self) -> GaussianBank:
        k = self.mu_prime.shape[0]
        return GaussianBank(np.array(self.mu_prime, dtype=np.float64),
                            np.tile(self.sigma_prime, (k, 1)))


@dataclass(frozen=True)
class AnchorConfig:
    """``alpha`` weights the anchor KL term; ``alpha=1`` is the published default."""

    alpha: float = 1.0
    beta_mode: BetaMode = "hard"
    variance_floor: float = VARIANCE_FLOOR

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta_mode not in ("hard", "soft"):
            raise ValueError(f"beta_mode must be 'hard' or 'soft', got {self.beta_mode!r}")
        if not self.variance_floor > 0:
            raise ValueError(f"variance_floor must be > 0, got {self.variance_floor}")


def _direct(n: int, k: int, d: int) -> bool:
    return n * k * d <= _DIRECT_LIMIT


def init_anchor(features, anchors, yhat, variance_floor: float = VARIANCE_FLOOR) -> AnchorDistribution:
    """Build the anchor from text embeddings and zero-shot predictions.

    The shared covariance is the zero-shot-weighted second moment of the
    features about every class anchor::

        sigma'[j] = sum_ik yhat[i,k] (f[i,j] - t[k,j])**2 / sum_ik yhat[i,k]
    """
    f = np.asarray(features, dtype=np.float64)
    t = np.asarray(anchors, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if f.shape[1] != t.shape[1] or yhat.shape != (f.shape[0], t.shape[0]):
        raise ValueError(f"shape mismatch: features {f.shape}, anchors {t.shape}, yhat {yhat.shape}")
    total = yhat.sum()
    if _direct(*yhat.shape, f.shape[1]):
        diff = f[:, None, :] - t[None, :, :]
        num = np.einsum("ik,ikj->j", yhat, diff * diff)
    else:
        center = f.mean(axis=0)
        fc, tc = f - center, t - center
        mass = yhat.sum(axis=0)
        num = (yhat.sum(axis=1) @ (fc * fc)
               - 2.0 * np.einsum("ij,ij->j", fc, yhat @ tc)
               + mass @ (tc * tc))
    sigma_prime = np.maximum(num / total, variance_floor)
    mu_prime = np.array(t, dtype=np.float64)
    return AnchorDistribution(mu_prime, sigma_prime)


def _sq_mahalanobis(f: np.ndarray, mu: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """``out[i,k] = sum_j (f[i,j] - mu[k,j])**2 * precision[k,j]``."""
    n, d = f.shape
    k = mu.shape[0]
    if _direct(n, k, d):
        diff = f[:, None, :] - mu[None, :, :]
        return np.einsum("ikj,kj->ik", diff * diff, precision)
    center = f.mean(axis=0)
    fc = f - center
    mc = mu - center
    out = (fc * fc) @ precision.T
    out -= 2.0 * (fc @ (mc * precision).T)
    out += np.sum(mc * mc * precision, axis=1)
    return out


def log_likelihoods(features, bank: GaussianBank) -> np.ndarray:
    """Per-class diagonal Gaussian log-densities, up to the shared ``-(d/2) log 2pi``."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[1] != bank.mu.shape[1] or bank.mu.shape != bank.sigma.shape:
        raise ValueError(f"shape mismatch: features {f.shape}, mu {bank.mu.shape}, sigma {bank.sigma.shape}")
    out = _sq_mahalanobis(f, bank.mu, 1.0 / bank.sigma)
    out += np.sum(np.log(bank.sigma), axis=1)
    out *= -0.5
    return out


def kl_anchor_term(bank: GaussianBank, anchor: AnchorDistribution) -> float:
    """Sum over classes of KL(anchor_k || class_k) for diagonal Gaussians."""
    sigma = bank.sigma
    sp = anchor.sigma_prime[None, :]
    diff = anchor.mu_prime - bank.mu
    terms = diff * diff / sigma + sp / sigma + np.log(sigma) - np.log(sp) - 1.0
    value = 0.5 * float(terms.sum())
    if not np.isfinite(value):
        raise FloatingPointError("non-finite value in anchor KL term")
    return value


def hard_counts(z: np.ndarray) -> np.ndarray:
    k = z.shape[1]
    return np.bincount(np.argmax(z, axis=1), minlength=k).astype(np.float64)


def beta_from_mass(mass: np.ndarray, alpha: float) -> np.ndarray:
    denom = mass + alpha
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(denom > 0, mass / denom, 0.0)
    return beta


def compute_beta(z: np.ndarray, alpha: float = 1.0, mode: BetaMode = "hard") -> np.ndarray:
    """Per-class shrinkage weight ``m_k / (m_k + alpha)``.

    ``m_k`` is the soft mass ``sum_i z[i,k]`` in soft mode, or the number of
    rows whose argmax is k in hard mode. A class with no mass and
    ``alpha=0`` gets weight 0.
    """
    if mode == "soft":
        mass = z.sum(axis=0)
    elif mode == "hard":
        mass = hard_counts(z)
    else:
        raise ValueError(f"unknown beta mode {mode!r}")
    return beta_from_mass(mass, alpha)


def weighted_residuals(features, z: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """``out[k,j] = sum_i z[i,k] (f[i,j] - mu[k,j])**2``."""
    f = np.asarray(features, dtype=np.float64)
    n, d = f.shape
    if _direct(n, mu.shape[0], d):
        diff = f[:, None, :] - mu[None, :, :]
        return np.einsum("ik,ikj->kj", z, diff * diff)
    center = f.mean(axis=0)
    fc = f - center
    mc = mu - center
    out = z.T @ (fc * fc)
    out -= 2.0 * mc * (z.T @ fc)
    out += z.sum(axis=0)[:, None] * (mc * mc)
    return np.maximum(out, 0.0)


def sample_means(features, z: np.ndarray, anchor: AnchorDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Return the soft class masses and the weighted means ``v``.

    Classes whose mass is below ``EMPTY_MASS`` fall back to the anchor mean.
    """
    f = np.asarray(features, dtype=np.float64)
    mass = z.sum(axis=0)
    sums = z.T @ f
    empty = mass <= EMPTY_MASS
    v = sums / np.where(empty, 1.0, mass)[:, None]
    v[empty] = anchor.mu_prime[empty]
    return mass, v


def combine(v: np.ndarray, t_stat: np.ndarray, beta: np.ndarray, anchor: AnchorDistribution,
            variance_floor: float = VARIANCE_FLOOR) -> GaussianBank:
    """Shrink sample statistics toward the anchor.

    ``mu = beta v + (1-beta) mu'`` and
    ``sigma = beta T + (1-beta) (sigma' + (mu' - mu)**2)``, floored.
    """
    b = beta[:, None]
    mu = b * v + (1.0 - b) * anchor.mu_prime
    gap = anchor.mu_prime - mu
    sigma = b * t_stat + (1.0 - b) * (anchor.sigma_prime[None, :] + gap * gap)
    np.maximum(sigma, variance_floor, out=sigma)
    if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
        raise FloatingPointError("non-finite class parameters after update")
    return GaussianBank(mu, sigma)


def update_parameters(features, z: np.ndarray, anchor: AnchorDistribution, beta: np.ndarray,
                      variance_floor: float = VARIANCE_FLOOR) -> GaussianBank:
    """Closed-form class update for fixed assignments.

    The mean is updated first; the covariance residuals ``T`` are then taken
    about the new mean. Empty classes use the anchor values for ``v`` and ``T``.
    """
    f = np.asarray(features, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if z.shape != (f.shape[0], anchor.mu_prime.shape[0]) or beta.shape != (z.shape[1],):
        raise ValueError(f"shape mismatch: features {f.shape}, z {z.shape}, beta {beta.shape}")
    mass, v = sample_means(f, z, anchor)
    b = beta[:, None]
    mu = b * v + (1.0 - b) * anchor.mu_prime
    empty = mass <= EMPTY_MASS
    t_stat = weighted_residuals(f, z, mu) / np.where(empty, 1.0, mass)[:, None]
    t_stat[empty] = anchor.sigma_prime
    return combine(v, t_stat, beta, anchor, variance_floor)
