"""Batch transductive solver.

Alternates decoupled assignment updates (a concave-convex step on the
Laplacian term) with closed-form anchored Gaussian updates.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Literal

import numpy as np
from scipy import sparse

from .gaussian import (
    AnchorConfig,
    AnchorDistribution,
    GaussianBank,
    compute_beta,
    init_anchor,
    kl_anchor_term,
    log_likelihoods,
    update_parameters,
)
from .zeroshot import DEFAULT_TAU, zero_shot_predict

log = logging.getLogger(__name__)

YHAT_CLAMP = 1e-30
AffinityMode = Literal["knn", "full", "none"]

# Exact float64 top-k search below this many rows; float32 candidate search
# with float64 re-ranking above it.
_EXACT_KNN_ROWS = 4096
_KNN_CANDIDATE_SLACK = 8


@dataclass
class AffinityGraph:
    """Sparse or dense weight matrix ``w[i,j] = f_i . f_j`` without self-edges."""

    matrix: sparse.csr_matrix | np.ndarray
    mode: str
    k: int | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def propagate(self, z: np.ndarray) -> np.ndarray:
        """Return ``sum_j w[i,j] z[j]`` for every row i."""
        return np.asarray(self.matrix @ z)

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if isinstance(self.matrix, np.ndarray):
            cols = np.array([j for j in range(self.n) if j != i], dtype=np.int64)
            return cols, self.matrix[i, cols]
        row = self.matrix.getrow(i)
        return row.indices.copy(), row.data.copy()


def _topk_rows(block: np.ndarray, k: int) -> np.ndarray:
    """Column indices of the k largest entries per row; ties go to the lower index."""
    order = np.argsort(-block, axis=1, kind="stable")
    return order[:, :k]


def build_affinity(features, mode: AffinityMode = "knn", k: int = 3, chunk: int = 1024) -> AffinityGraph:
    """Build the Laplacian affinity graph.

    ``full`` keeps every pair i != j. ``knn`` keeps, per row, the ``k`` largest
    inner products (self excluded, ties to the lower index); the result is not
    symmetrized. ``none`` has no edges.
    """
    f = np.asarray(features, dtype=np.float64)
    n = f.shape[0]
    if mode == "none":
        return AffinityGraph(sparse.csr_matrix((n, n)), "none")
    if mode == "full":
        w = f @ f.T
        np.fill_diagonal(w, 0.0)
        return AffinityGraph(w, "full")
    if mode != "knn":
        raise ValueError(f"unknown affinity mode {mode!r}")
    if k < 1:
        raise ValueError(f"knn requires k >= 1, got {k}")
    if k >= n:
        raise ValueError(f"knn requires k < N (k={k}, N={n})")

    cols = np.empty((n, k), dtype=np.int64)
    weights = np.empty((n, k), dtype=np.float64)
    exact = n <= _EXACT_KNN_ROWS
    m = min(n - 1, k + _KNN_CANDIDATE_SLACK)
    f32 = None if exact else f.astype(np.float32)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        rows = np.arange(start, stop)
        if exact:
            block = f[start:stop] @ f.T
            block[rows - start, rows] = -np.inf
            pick = _topk_rows(block, k)
            cols[start:stop] = pick
            weights[start:stop] = np.take_along_axis(block, pick, axis=1)
            continue
        block = f32[start:stop] @ f32.T
        block[rows - start, rows] = -np.inf
        cand = np.argpartition(-block, m - 1, axis=1)[:, :m]
        cand.sort(axis=1)
        exact_w = np.einsum("id,imd->im", f[start:stop], f[cand])
        exact_w[cand == rows[:, None]] = -np.inf
        pick = _topk_rows(exact_w, k)
        cols[start:stop] = np.take_along_axis(cand, pick, axis=1)
        weights[start:stop] = np.take_along_axis(exact_w, pick, axis=1)
    indptr = np.arange(0, n * k + 1, k)
    w = sparse.csr_matrix((weights.ravel(), cols.ravel(), indptr), shape=(n, n))
    return AffinityGraph(w, "knn", k)

_TINY = np.finfo(np.float64).tiny


def z_update_sweep(z: np.ndarray, log_yhat: np.ndarray, loglik: np.ndarray,
                   graph: AffinityGraph) -> np.ndarray:
    """One Jacobi sweep of the assignment fixed point.

    ``z_new[i] ∝ yhat[i] * exp(loglik[i] + sum_j w[i,j] z[j])`` where every
    row reads the previous iterate. ``log_yhat`` is ``log(max(yhat, 1e-30))``.
    """
    a = graph.propagate(z)
    a += loglik
    a += log_yhat
    a -= a.max(axis=1, keepdims=True)
    np.exp(a, out=a)
    a /= a.sum(axis=1, keepdims=True)
    # subnormal entries make every later matmul over z crawl; they carry no mass
    a[a < _TINY] = 0.0
    if not np.isfinite(a).all():
        raise FloatingPointError("non-finite assignment after z update")
    return a


def clamped_log(yhat: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(yhat, YHAT_CLAMP))


def assignment_kl(z: np.ndarray, yhat: np.ndarray) -> float:
    """``sum_i KL(z_i || yhat_i)`` with ``0 log 0 = 0``."""
    pos = z > 0
    if np.any(pos & (yhat <= 0)):
        i, k = np.argwhere(pos & (yhat <= 0))[0]
        raise FloatingPointError(f"infinite KL: yhat[{i},{k}] = 0 while z[{i},{k}] > 0")
    zp = z[pos]
    return float(np.sum(zp * (np.log(zp) - np.log(yhat[pos]))))


def laplacian_term(z: np.ndarray, graph: AffinityGraph) -> float:
    """``-1/2 sum_i z_i . (W z)_i``, i.e. every symmetric edge counted once.

    This is the potential whose gradient is the propagation term used by
    :func:`z_update_sweep`, so the sweep is a majorize-minimize step for it.
    """
    return -0.5 * float(np.sum(z * graph.propagate(z)))


def objective_value(z, features, bank: GaussianBank, anchor: AnchorDistribution, yhat,
                    graph: AffinityGraph, alpha: float, loglik: np.ndarray | None = None) -> float:
    """Total objective: data fit + Laplacian + text KL + weighted anchor KL."""
    z = np.asarray(z, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if loglik is None:
        loglik = log_likelihoods(features, bank)
    fit = -float(np.sum(z * loglik))
    return fit + laplacian_term(z, graph) + assignment_kl(z, yhat) + alpha * kl_anchor_term(bank, anchor)


@dataclass(frozen=True)
class SolverConfig:
    """Defaults: 10 outer iterations of 3 z sweeps, stop when z moves < 1e-4."""

    outer_iters: int = 10
    inner_z_iters: int = 3
    z_tolerance: float = 1e-4
    affinity: AffinityMode = "knn"
    knn: int = 3
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    tau: float = DEFAULT_TAU
    record_trace: bool = False

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_z_iters < 1:
            raise ValueError("outer_iters and inner_z_iters must be >= 1")
        if self.z_tolerance < 0:
            raise ValueError("z_tolerance must be >= 0")
        if self.affinity not in ("knn", "full", "none"):
            raise ValueError(f"unknown affinity mode {self.affinity!r}")
        if self.knn < 1:
            raise ValueError("knn must be >= 1")

    def with_anchor(self, **kw) -> "SolverConfig":
        return replace(self, anchor=replace(self.anchor, **kw))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveResult:
    z: np.ndarray
    bank: GaussianBank
    objective_trace: list = field(default_factory=list)
    iterations_run: int = 0
    yhat: np.ndarray | None = None
    anchor: AnchorDistribution | None = None

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.z, axis=1)


def graph_for(features, cfg: SolverConfig) -> AffinityGraph:
    """Affinity graph for ``cfg``; kNN degree is capped at N-1 for small inputs."""
    n = np.asarray(features).shape[0]
    if cfg.affinity == "knn":
        k = min(cfg.knn, n - 1)
        if k < 1:
            return build_affinity(features, "none")
        return build_affinity(features, "knn", k)
    return build_affinity(features, cfg.affinity)


def solve(features, anchors, cfg: SolverConfig | None = None) -> SolveResult:
    """Run the full transductive procedure on one batch.

    z starts at the zero-shot prediction and the class models at the anchor.
    Each outer iteration runs ``inner_z_iters`` z sweeps against fixed
    likelihoods, then one closed-form parameter update.
    """
    cfg = cfg or SolverConfig()
    f = np.asarray(features, dtype=np.float64)
    t = np.asarray(anchors, dtype=np.float64)
    acfg = cfg.anchor

    yhat = zero_shot_predict(f, t, cfg.tau)
    anchor = init_anchor(f, t, yhat, acfg.variance_floor)
    bank = anchor.as_bank()
    graph = graph_for(f, cfg)
    log_yhat = clamped_log(yhat)
    z = yhat.copy()

    trace: list[float] = []

    def record(loglik=None):
        if cfg.record_trace:
            trace.append(objective_value(z, f, bank, anchor, yhat, graph, acfg.alpha, loglik))

    record()
    it = 0
    for it in range(1, cfg.outer_iters + 1):
        z_start = z
        loglik = log_likelihoods(f, bank)
        for _ in range(cfg.inner_z_iters):
            z = z_update_sweep(z, log_yhat, loglik, graph)
            record(loglik)
        beta = compute_beta(z, acfg.alpha, acfg.beta_mode)
        bank = update_parameters(f, z, anchor, beta, acfg.variance_floor)
        record()
        change = float(np.max(np.abs(z - z_start)))
        log.debug("outer iteration %d: max |dz| = %.3g", it, change)
        if change < cfg.z_tolerance:
            break
    return SolveResult(z, bank, trace, it, yhat, anchor)
