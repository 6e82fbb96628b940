"""Streaming adaptation with running class statistics.

Each batch is predicted against the current class models first, then its
assignments are folded into per-class running sums:

* ``Z[k]``  accumulated soft mass,
* ``N[k]``  accumulated hard (argmax) counts,
* ``v[k]``  mass-weighted running mean,
* ``T[k]``  mass-weighted running squared residual about the mean that was
  current when each batch arrived.

The class models are then recomputed from the accumulated statistics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import (
    EMPTY_MASS,
    AnchorDistribution,
    GaussianBank,
    beta_from_mass,
    combine,
    hard_counts,
    init_anchor,
    log_likelihoods,
    weighted_residuals,
)
from .solver import SolverConfig, clamped_log, graph_for, z_update_sweep
from .zeroshot import zero_shot_predict


@dataclass
class StreamState:
    v: np.ndarray        # (K, d)
    T: np.ndarray        # (K, d)
    Z: np.ndarray        # (K,)
    Ncount: np.ndarray   # (K,)
    bank: GaussianBank
    anchor: AnchorDistribution
    anchors: np.ndarray  # text embeddings, shared with the caller
    steps: int = 0

    def nbytes(self) -> int:
        """Bytes held by the per-stream statistics and class models."""
        return sum(a.nbytes for a in (self.v, self.T, self.Z, self.Ncount, self.bank.mu, self.bank.sigma))

    def beta(self, cfg: SolverConfig) -> np.ndarray:
        mass = self.Z if cfg.anchor.beta_mode == "soft" else self.Ncount
        return beta_from_mass(mass, cfg.anchor.alpha)


def stream_init(anchors, first_batch, cfg: SolverConfig | None = None) -> StreamState:
    """Start a stream; the anchor covariance is estimated once, from ``first_batch``."""
    cfg = cfg or SolverConfig()
    t = np.asarray(anchors, dtype=np.float64)
    f = np.asarray(first_batch, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("the first batch must contain at least one sample")
    yhat = zero_shot_predict(f, t, cfg.tau)
    anchor = init_anchor(f, t, yhat, cfg.anchor.variance_floor)
    k, d = t.shape
    return StreamState(
        v=np.array(anchor.mu_prime),
        T=np.tile(anchor.sigma_prime, (k, 1)),
        Z=np.zeros(k),
        Ncount=np.zeros(k),
        bank=anchor.as_bank(),
        anchor=anchor,
        anchors=t,
    )


def predict_batch(state: StreamState, batch, cfg: SolverConfig, bank: GaussianBank | None = None) -> np.ndarray:
    """z sweeps for one batch against ``bank`` (default: the state's current models)."""
    f = np.asarray(batch, dtype=np.float64)
    yhat = zero_shot_predict(f, state.anchors, cfg.tau)
    graph = graph_for(f, cfg)
    log_yhat = clamped_log(yhat)
    loglik = log_likelihoods(f, bank or state.bank)
    z = yhat
    for _ in range(cfg.inner_z_iters):
        z = z_update_sweep(z, log_yhat, loglik, graph)
    return z


def _folded(state: StreamState, f: np.ndarray, z: np.ndarray):
    mass = z.sum(axis=0)
    z_new = state.Z + mass
    live = z_new > EMPTY_MASS
    safe = np.where(live, z_new, 1.0)[:, None]
    v = np.where(live[:, None], (state.Z[:, None] * state.v + z.T @ f) / safe, state.v)
    resid = weighted_residuals(f, z, state.bank.mu)
    T = np.where(live[:, None], (state.Z[:, None] * state.T + resid) / safe, state.T)
    return v, T, z_new, state.Ncount + hard_counts(z)


def fold_batch(state: StreamState, batch, z: np.ndarray) -> None:
    """Accumulate one batch's assignments into ``v``, ``T``, ``Z`` and ``N``.

    The class models are left untouched; call :func:`refresh_parameters`
    afterwards. Residuals for ``T`` use the current ``state.bank.mu``.
    """
    f = np.asarray(batch, dtype=np.float64)
    state.v, state.T, state.Z, state.Ncount = _folded(state, f, np.asarray(z, dtype=np.float64))


def refresh_parameters(state: StreamState, cfg: SolverConfig) -> None:
    state.bank = combine(state.v, state.T, state.beta(cfg), state.anchor, cfg.anchor.variance_floor)


def stream_step(state: StreamState, batch, cfg: SolverConfig | None = None,
                refine_iters: int = 1) -> np.ndarray:
    """Predict one batch, then adapt the state to it.

    Predictions use only the state left by the previous batches. With
    ``refine_iters > 1`` the batch is re-predicted against provisionally
    updated models before committing; the default is a single pass.
    """
    cfg = cfg or SolverConfig()
    f = np.asarray(batch, dtype=np.float64)
    k = state.Z.shape[0]
    if f.ndim != 2 or f.shape[0] == 0:
        return np.empty((0, k))
    if f.shape[1] != state.anchors.shape[1]:
        raise ValueError(f"batch dimension {f.shape[1]} does not match stream dimension {state.anchors.shape[1]}")
    z = predict_batch(state, f, cfg)
    for _ in range(refine_iters - 1):
        v, T, Z, N = _folded(state, f, z)
        mass = Z if cfg.anchor.beta_mode == "soft" else N
        provisional = combine(v, T, beta_from_mass(mass, cfg.anchor.alpha), state.anchor,
                              cfg.anchor.variance_floor)
        z = predict_batch(state, f, cfg, provisional)
    fold_batch(state, f, z)
    refresh_parameters(state, cfg)
    state.steps += 1
    return z


def run_stream(anchors, features, boundaries, cfg: SolverConfig | None = None,
               refine_iters: int = 1) -> np.ndarray:
    """Process ``features[boundaries[b]:boundaries[b+1]]`` in order; return all z rows."""
    cfg = cfg or SolverConfig()
    f = np.asarray(features, dtype=np.float64)
    out = []
    state = None
    for lo, hi in zip(boundaries[:-1], boundaries[1:]):
        if hi <= lo:
            continue
        batch = f[lo:hi]
        if state is None:
            state = stream_init(anchors, batch, cfg)
        out.append(stream_step(state, batch, cfg, refine_iters))
    k = np.asarray(anchors).shape[0]
    return np.vstack(out) if out else np.empty((0, k))
