"""Text-driven zero-shot predictions: a temperature-scaled softmax over cosine logits."""
from __future__ import annotations

import math

import numpy as np

DEFAULT_TAU = 100.0


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    out = logits - logits.max(axis=1, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)
    out[out < np.finfo(out.dtype).tiny] = 0.0
    return out


def zero_shot_predict(features, anchors, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Return the N x K matrix ``softmax_k(tau * f_i . t_k)``.

    ``tau`` defaults to CLIP's logit scale. Pass ``tau=1`` for embeddings
    that were exported with the scale already applied.
    """
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive and finite, got {tau}")
    f = np.asarray(features, dtype=np.float64)
    t = np.asarray(anchors, dtype=np.float64)
    if f.shape[1] != t.shape[1]:
        raise ValueError(f"dimension mismatch: features d={f.shape[1]}, anchors d={t.shape[1]}")
    logits = f @ t.T
    logits *= tau
    return softmax_rows(logits)


def predicted_classes(z: np.ndarray) -> np.ndarray:
    """Row argmax; ties go to the lowest class index."""
    return np.argmax(z, axis=1)


def accuracy(pred: np.ndarray, labels) -> float:
    """Fraction of rows of ``pred`` whose argmax equals the label."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.ndim != 2 or pred.shape[0] != labels.shape[0]:
        raise ValueError(f"shape mismatch: predictions {pred.shape}, labels {labels.shape}")
    if labels.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return float(np.mean(predicted_classes(pred) == labels))


zero_shot_accuracy = accuracy
