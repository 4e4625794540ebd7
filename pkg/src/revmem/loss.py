"""Additive-angular-margin softmax for embedding training.

Embeddings and class weight columns are L2-normalized internally; the true
class logit is scale * cos(theta + margin), all others scale * cos(theta),
followed by softmax cross-entropy averaged over the batch. Where
theta + margin would pass pi (non-monotone region), the guarded form
cos(theta) - margin * sin(margin) is used instead; the guard can be turned
off via `monotonic_guard`.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

_SIN_FLOOR = 1e-12  # keeps the margin chain rule finite for aligned pairs


def aam_softmax_loss(embeddings: np.ndarray, labels: np.ndarray, weights: np.ndarray,
                     margin: float = 0.2, scale: float = 32.0,
                     monotonic_guard: bool = True):
    """Returns (loss, dL/dembeddings, dL/dweights)."""
    if embeddings.ndim != 2:
        raise ShapeError(f"embeddings must be (n, d), got {embeddings.shape}")
    if weights.ndim != 2 or weights.shape[0] != embeddings.shape[1]:
        raise ShapeError(
            f"weights must be (d={embeddings.shape[1]}, K), got {weights.shape}"
        )
    if not 0.0 <= margin < math.pi / 2:
        raise ValueError(f"margin must lie in [0, pi/2), got {margin}")
    n, d = embeddings.shape
    k = weights.shape[1]
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels must be ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")

    e_norm = np.linalg.norm(embeddings, axis=1, keepdims=True)
    w_norm = np.linalg.norm(weights, axis=0, keepdims=True)
    e = embeddings / e_norm
    w = weights / w_norm
    cos = e @ w  # (n, K)

    cos_m, sin_m = math.cos(margin), math.sin(margin)
    rows = np.arange(n)
    cos_y = cos[rows, labels]
    sin_y = np.sqrt(np.maximum(1.0 - cos_y**2, _SIN_FLOOR))
    phi = cos_y * cos_m - sin_y * sin_m
    if monotonic_guard:
        in_range = cos_y > math.cos(math.pi - margin)
        phi = np.where(in_range, phi, cos_y - margin * sin_m)
    else:
        in_range = np.ones(n, dtype=bool)

    logits = scale * cos
    logits[rows, labels] = scale * phi

    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    loss = float(-(shifted[rows, labels] - np.log(expv.sum(axis=1))).mean())

    # backward: softmax CE -> logits -> cosines -> normalized vectors -> raw
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= scale / n

    dcos = dlogits.copy()
    dphi_dcos = np.where(in_range, cos_m + sin_m * cos_y / sin_y, 1.0)
    dcos[rows, labels] *= dphi_dcos

    de = dcos @ w.T
    dw = e.T @ dcos
    demb = (de - e * (de * e).sum(axis=1, keepdims=True)) / e_norm
    dweights = (dw - w * (dw * w).sum(axis=0, keepdims=True)) / w_norm
    return loss, demb, dweights
