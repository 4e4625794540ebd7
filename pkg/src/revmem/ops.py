"""Dense rank-4 tensor primitives with hand-written vector-Jacobian products.

Tensors are plain numpy arrays laid out ``(batch, channel, frequency, time)``
in row-major order; the scalar width (float32 vs float64) is whatever dtype
the caller passes through. Every op is a pure function of its inputs, and
each differentiable op has a companion ``*_vjp`` that maps the output
cotangent back to input/parameter cotangents. The VJPs are checked against
central finite differences in the test suite.

Convolutions are cross-correlations (no kernel flip). Output spatial sizes
follow the usual floor rule ``(d + 2*pad - k)//stride + 1``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError

# Keeps the std-pool gradient finite when a (channel, frequency) slice is
# constant over time.
GSP_VAR_EPS = 1e-10


def _require_4d(x: np.ndarray, name: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (n, c, f, t), got shape {x.shape}")


def _conv_out_size(d: int, k: int, stride: int, pad: int) -> int:
    span = d + 2 * pad - k
    if span < 0:
        raise ConfigError(
            f"kernel {k} with pad {pad} does not fit spatial extent {d}"
        )
    return span // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Sliding (kh, kw) patches of x: (n, c, fo, to, kh, kw)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _check_conv_args(x, w, stride, pad):
    _require_4d(x, "input")
    if w.ndim != 4:
        raise ShapeError(f"kernel must be rank-4, got shape {w.shape}")
    if stride < 1 or int(stride) != stride:
        raise ConfigError(f"stride must be a positive integer, got {stride}")
    if pad < 0 or int(pad) != pad:
        raise ConfigError(f"pad must be non-negative, got {pad}")
    kh, kw = w.shape[2], w.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"kernel sides must be odd, got {kh}x{kw}")


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate x (n, c_in, f, t) with w (c_out, c_in, kh, kw)."""
    _check_conv_args(x, w, stride, pad)
    if x.shape[1] != w.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but kernel expects {w.shape[1]}"
        )
    kh, kw = w.shape[2], w.shape[3]
    _conv_out_size(x.shape[2], kh, stride, pad)
    _conv_out_size(x.shape[3], kw, stride, pad)
    win = _windows(x, kh, kw, stride, pad)
    return np.einsum("ncftij,ocij->noft", win, w, optimize=True)


def conv2d_vjp(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride: int = 1, pad: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Cotangents (dL/dx, dL/dw) of conv2d given dL/dy."""
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride, pad)
    gw = np.einsum("ncftij,noft->ocij", win, gy, optimize=True)

    n, _, f, t = x.shape
    fo, to = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, x.shape[1], f + 2 * pad, t + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = np.einsum("noft,oc->ncft", gy, w[:, :, i, j], optimize=True)
            gxp[:, :, i : i + stride * fo : stride, j : j + stride * to : stride] += patch
    gx = gxp[:, :, pad : pad + f, pad : pad + t] if pad else gxp
    return gx, gw


def depthwise_conv2d(
    x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 1
) -> np.ndarray:
    """Per-channel convolution; w has shape (c, 1, kh, kw), one filter per channel."""
    _check_conv_args(x, w, stride, pad)
    if w.shape[1] != 1:
        raise ShapeError(f"depthwise kernel must be (c, 1, kh, kw), got {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but depthwise kernel has {w.shape[0]}"
        )
    kh, kw = w.shape[2], w.shape[3]
    _conv_out_size(x.shape[2], kh, stride, pad)
    _conv_out_size(x.shape[3], kw, stride, pad)
    win = _windows(x, kh, kw, stride, pad)
    return np.einsum("ncftij,cij->ncft", win, w[:, 0], optimize=True)


def depthwise_conv2d_vjp(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray, stride: int = 1, pad: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    kh, kw = w.shape[2], w.shape[3]
    win = _windows(x, kh, kw, stride, pad)
    gw = np.einsum("ncftij,ncft->cij", win, gy, optimize=True)[:, None]

    n, c, f, t = x.shape
    fo, to = gy.shape[2], gy.shape[3]
    gxp = np.zeros((n, c, f + 2 * pad, t + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * fo : stride, j : j + stride * to : stride] += (
                gy * w[:, 0, i, j][None, :, None, None]
            )
    gx = gxp[:, :, pad : pad + f, pad : pad + t] if pad else gxp
    return gx, gw


def batchnorm2d(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Training-mode batch norm over (batch, frequency, time) per channel.

    Returns (y, mean, var) where mean/var are the per-channel batch statistics
    actually used, so callers can capture and later replay them (pass `stats`)
    for deterministic recomputation.
    """
    _require_4d(x, "input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}"
        )
    if stats is None:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count == 1 and eps == 0.0:
            raise ConfigError("batch norm over a single element with eps=0 is degenerate")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))  # biased
    else:
        mean, var = stats
    inv = 1.0 / np.sqrt(var + eps)
    y = gamma[None, :, None, None] * (x - mean[None, :, None, None]) * inv[
        None, :, None, None
    ] + beta[None, :, None, None]
    return y, mean, var


def batchnorm2d_vjp(
    x: np.ndarray,
    gamma: np.ndarray,
    gy: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    eps: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cotangents (dL/dx, dL/dgamma, dL/dbeta) treating mean/var as batch stats of x."""
    count = x.shape[0] * x.shape[2] * x.shape[3]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    dgamma = np.einsum("ncft,ncft->c", gy, xhat, optimize=True)
    dbeta = gy.sum(axis=(0, 2, 3))
    g = gamma[None, :, None, None] * inv[None, :, None, None]
    gx = g * (
        gy
        - dbeta[None, :, None, None] / count
        - xhat * dgamma[None, :, None, None] / count
    )
    return gx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_vjp(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return gy * (x > 0)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map on flat vectors: (n, d_in) @ (d_in, d_out) + (d_out,)."""
    if x.ndim != 2:
        raise ShapeError(f"linear input must be (n, d_in), got shape {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear expects d_in={w.shape[0]}, got {x.shape[1]}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias must have shape ({w.shape[1]},), got {b.shape}")
    return x @ w + b


def linear_vjp(
    x: np.ndarray, w: np.ndarray, gy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return gy @ w.T, x.T @ gy, gy.sum(axis=0)


def channel_split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split evenly into the first and second half of the channel axis."""
    _require_4d(x, "input")
    c = x.shape[1]
    if c % 2:
        raise ConfigError(f"channel_split requires an even channel count, got {c}")
    h = c // 2
    return np.ascontiguousarray(x[:, :h]), np.ascontiguousarray(x[:, h:])


def channel_concat(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    _require_4d(x1, "first input")
    _require_4d(x2, "second input")
    if x1.shape[0] != x2.shape[0] or x1.shape[2:] != x2.shape[2:]:
        raise ShapeError(
            f"channel_concat needs matching (n, f, t), got {x1.shape} vs {x2.shape}"
        )
    return np.concatenate([x1, x2], axis=1)


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Invertible downsampling: (n, c, f, t) -> (n, r*r*c, f/r, t/r).

    Output channel c*r*r + i*r + j holds input row offset i and column
    offset j, so the map is a fixed bijection on elements.
    """
    _require_4d(x, "input")
    if r < 2 or int(r) != r:
        raise ConfigError(f"ratio must be an integer >= 2, got {r}")
    n, c, f, t = x.shape
    if f % r or t % r:
        raise ConfigError(
            f"spatial dims ({f}, {t}) must be divisible by ratio {r}"
        )
    fo, to = f // r, t // r
    y = x.reshape(n, c, fo, r, to, r)
    y = y.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(y.reshape(n, c * r * r, fo, to))


def pixel_shuffle(y: np.ndarray, r: int) -> np.ndarray:
    """Exact inverse of pixel_unshuffle."""
    _require_4d(y, "input")
    if r < 2 or int(r) != r:
        raise ConfigError(f"ratio must be an integer >= 2, got {r}")
    n, c, fo, to = y.shape
    if c % (r * r):
        raise ConfigError(f"channel count {c} must be divisible by r^2 = {r * r}")
    ci = c // (r * r)
    x = y.reshape(n, ci, r, r, fo, to)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(x.reshape(n, ci, fo * r, to * r))


def global_stat_pool(x: np.ndarray) -> np.ndarray:
    """Per (channel, frequency) mean and std over time: (n, c, f, t) -> (n, 2*c*f).

    First half of the output is the means, second half the biased standard
    deviations, both flattened row-major over (c, f).
    """
    _require_4d(x, "input")
    n, c, f, _ = x.shape
    mean = x.mean(axis=3)
    var = x.var(axis=3)  # biased
    std = np.sqrt(var + GSP_VAR_EPS)
    return np.concatenate([mean.reshape(n, c * f), std.reshape(n, c * f)], axis=1)


def global_stat_pool_vjp(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    n, c, f, t = x.shape
    gmean = gy[:, : c * f].reshape(n, c, f)
    gstd = gy[:, c * f :].reshape(n, c, f)
    mean = x.mean(axis=3)
    std = np.sqrt(x.var(axis=3) + GSP_VAR_EPS)
    gx = gmean[..., None] / t
    gx = gx + gstd[..., None] * (x - mean[..., None]) / (t * std[..., None])
    return gx
