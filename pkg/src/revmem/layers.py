"""Layer objects: parameters, primitives, residual branches, reversible blocks.

Execution protocol (used by the engine):

* ``forward(x, tape=None, replay=False)`` computes the layer output. When
  ``tape`` is a list, the layer appends whatever its backward needs (stored
  mode). With ``tape=None`` nothing is retained beyond per-layer batch-norm
  statistics (reversible mode). ``replay=True`` makes batch norms reuse the
  statistics captured on the step's first forward instead of recomputing
  them, and suppresses running-stat updates.
* ``backward(gy, entry)`` consumes one tape entry, accumulates parameter
  gradients, and returns the input cotangent.
* ``plan_cached(in_shape)`` / ``plan_stats(in_shape)`` report how many
  elements the layer would cache (stored mode) and how many batch-stat
  scalars it captures, so ledgers can be computed without running tensors.

Reversible layers additionally expose ``inverse`` and ``rev_backward``;
``rev_backward`` reconstructs the block inputs from its outputs and runs the
coupled chain rule, so no forward activation of the block is ever read.
"""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError, StateError


class Param:
    """A learnable tensor with an additive gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0

    @property
    def size(self) -> int:
        return int(self.value.size)

    @property
    def nbytes(self) -> int:
        return int(self.value.nbytes)


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _shape_elems(shape) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


class Layer:
    reversible = False

    def params(self) -> list[Param]:
        return []

    def out_shape(self, shape):
        return shape

    def forward(self, x, tape=None, replay=False):
        raise NotImplementedError

    def backward(self, gy, entry):
        raise NotImplementedError

    def backward_from_input(self, gy, x):
        """Backward given only the cached input (reversible-mode path)."""
        return self.backward(gy, x)

    def plan_cached(self, in_shape) -> int:
        return 0

    def plan_stats(self, in_shape) -> int:
        return 0

    def stat_nbytes(self) -> int:
        return 0


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k, stride=1, pad=None, *, rng, dtype):
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.w = Param(he_uniform(rng, (c_out, c_in, k, k), c_in * k * k, dtype))

    def params(self):
        return [self.w]

    def out_shape(self, shape):
        n, c, f, t = shape
        if c != self.c_in:
            raise ShapeError(f"conv expects {self.c_in} channels, got {c}")
        fo = (f + 2 * self.pad - self.k) // self.stride + 1
        to = (t + 2 * self.pad - self.k) // self.stride + 1
        return (n, self.c_out, fo, to)

    def forward(self, x, tape=None, replay=False):
        if tape is not None:
            tape.append(x)
        return ops.conv2d(x, self.w.value, self.stride, self.pad)

    def backward(self, gy, x):
        gx, gw = ops.conv2d_vjp(x, self.w.value, gy, self.stride, self.pad)
        self.w.grad += gw
        return gx

    def plan_cached(self, in_shape):
        return _shape_elems(in_shape)


class DepthwiseConv2d(Layer):
    def __init__(self, c, k=3, stride=1, pad=None, *, rng, dtype):
        self.c, self.k = c, k
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.w = Param(he_uniform(rng, (c, 1, k, k), k * k, dtype))

    def params(self):
        return [self.w]

    def out_shape(self, shape):
        n, c, f, t = shape
        if c != self.c:
            raise ShapeError(f"depthwise conv expects {self.c} channels, got {c}")
        fo = (f + 2 * self.pad - self.k) // self.stride + 1
        to = (t + 2 * self.pad - self.k) // self.stride + 1
        return (n, c, fo, to)

    def forward(self, x, tape=None, replay=False):
        if tape is not None:
            tape.append(x)
        return ops.depthwise_conv2d(x, self.w.value, self.stride, self.pad)

    def backward(self, gy, x):
        gx, gw = ops.depthwise_conv2d_vjp(x, self.w.value, gy, self.stride, self.pad)
        self.w.grad += gw
        return gx

    def plan_cached(self, in_shape):
        return _shape_elems(in_shape)


class BatchNorm2d(Layer):
    """Training-mode batch norm with capture/replay of batch statistics.

    The statistics used on the step's forward pass are kept on the layer so
    that reversible recomputation replays exactly them; running statistics
    are updated only on capture forwards, never on replays.
    """

    def __init__(self, c, eps=1e-5, momentum=0.1, *, dtype):
        self.c = c
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(np.ones(c, dtype))
        self.beta = Param(np.zeros(c, dtype))
        self.running_mean = np.zeros(c, dtype)
        self.running_var = np.ones(c, dtype)
        self.saved_stats = None

    def params(self):
        return [self.gamma, self.beta]

    def out_shape(self, shape):
        if shape[1] != self.c:
            raise ShapeError(f"batch norm expects {self.c} channels, got {shape[1]}")
        return shape

    def forward(self, x, tape=None, replay=False):
        if replay:
            if self.saved_stats is None:
                raise StateError("batch norm replay requested but no captured statistics")
            y, _, _ = ops.batchnorm2d(
                x, self.gamma.value, self.beta.value, self.eps, stats=self.saved_stats
            )
        else:
            y, mean, var = ops.batchnorm2d(x, self.gamma.value, self.beta.value, self.eps)
            self.saved_stats = (mean, var)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        if tape is not None:
            tape.append(x)
        return y

    def backward(self, gy, x):
        if self.saved_stats is None:
            raise StateError("batch norm backward requires captured statistics")
        mean, var = self.saved_stats
        gx, dgamma, dbeta = ops.batchnorm2d_vjp(x, self.gamma.value, gy, mean, var, self.eps)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return gx

    def plan_cached(self, in_shape):
        return _shape_elems(in_shape)

    def plan_stats(self, in_shape):
        return 2 * self.c

    def stat_nbytes(self):
        if self.saved_stats is None:
            return 0
        mean, var = self.saved_stats
        return int(mean.nbytes + var.nbytes)


class ReLU(Layer):
    def forward(self, x, tape=None, replay=False):
        if tape is not None:
            tape.append(x)
        return ops.relu(x)

    def backward(self, gy, x):
        return ops.relu_vjp(x, gy)

    def plan_cached(self, in_shape):
        return _shape_elems(in_shape)


class GlobalStatPool(Layer):
    def out_shape(self, shape):
        n, c, f, t = shape
        return (n, 2 * c * f)

    def forward(self, x, tape=None, replay=False):
        if tape is not None:
            tape.append(x)
        return ops.global_stat_pool(x)

    def backward(self, gy, x):
        return ops.global_stat_pool_vjp(x, gy)

    def plan_cached(self, in_shape):
        return _shape_elems(in_shape)


class Linear(Layer):
    def __init__(self, d_in, d_out, *, rng, dtype):
        self.d_in, self.d_out = d_in, d_out
        self.w = Param(he_uniform(rng, (d_in, d_out), d_in, dtype))
        self.b = Param(np.zeros(d_out, dtype))

    def params(self):
        return [self.w, self.b]

    def out_shape(self, shape):
        n, d = shape
        if d != self.d_in:
            raise ShapeError(f"linear expects width {self.d_in}, got {d}")
        return (n, self.d_out)

    def forward(self, x, tape=None, replay=False):
        if tape is not None:
            tape.append(x)
        return ops.linear(x, self.w.value, self.b.value)

    def backward(self, gy, x):
        gx, gw, gb = ops.linear_vjp(x, self.w.value, gy)
        self.w.grad += gw
        self.b.grad += gb
        return gx

    def plan_cached(self, in_shape):
        return _shape_elems(in_shape)


class Sequential(Layer):
    """A flat chain of primitive layers; tape entries are one per sub-layer."""

    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        return [p for l in self.layers for p in l.params()]

    def out_shape(self, shape):
        for l in self.layers:
            shape = l.out_shape(shape)
        return shape

    def forward(self, x, tape=None, replay=False):
        for l in self.layers:
            x = l.forward(x, tape=tape, replay=replay)
        return x

    def backward(self, gy, entries):
        for l, e in zip(reversed(self.layers), reversed(entries)):
            gy = l.backward(gy, e)
        return gy

    def plan_cached(self, in_shape):
        total = 0
        for l in self.layers:
            total += l.plan_cached(in_shape)
            in_shape = l.out_shape(in_shape)
        return total

    def plan_stats(self, in_shape):
        total = 0
        for l in self.layers:
            total += l.plan_stats(in_shape)
            in_shape = l.out_shape(in_shape)
        return total

    def stat_nbytes(self):
        return sum(l.stat_nbytes() for l in self.layers)


RESIDUAL_KINDS = ("basic", "bottleneck", "df_bottleneck")


def make_residual_fn(kind, width, *, rng, dtype, stride=1, c_in=None):
    """Residual branch for one stream of `width` channels.

    basic:          conv3x3 -> BN -> ReLU -> conv3x3
    bottleneck:     conv1x1 (w/4) -> BN -> ReLU -> conv3x3 -> conv1x1 (w)
    df_bottleneck:  conv1x1 (4w) -> BN -> ReLU -> dwconv3x3 -> conv1x1 (w)

    `stride` applies to the first conv (downsampling blocks); `c_in` lets the
    first conv take a different input width than the branch output.
    """
    c_in = width if c_in is None else c_in
    if kind == "basic":
        return Sequential([
            Conv2d(c_in, width, 3, stride=stride, rng=rng, dtype=dtype),
            BatchNorm2d(width, dtype=dtype),
            ReLU(),
            Conv2d(width, width, 3, rng=rng, dtype=dtype),
        ])
    if kind == "bottleneck":
        if width % 4:
            raise ConfigError(f"bottleneck width {width} must be divisible by 4")
        mid = width // 4
        return Sequential([
            Conv2d(c_in, mid, 1, stride=stride, rng=rng, dtype=dtype),
            BatchNorm2d(mid, dtype=dtype),
            ReLU(),
            Conv2d(mid, mid, 3, rng=rng, dtype=dtype),
            Conv2d(mid, width, 1, rng=rng, dtype=dtype),
        ])
    if kind == "df_bottleneck":
        mid = 4 * width
        return Sequential([
            Conv2d(c_in, mid, 1, stride=stride, rng=rng, dtype=dtype),
            BatchNorm2d(mid, dtype=dtype),
            ReLU(),
            DepthwiseConv2d(mid, 3, rng=rng, dtype=dtype),
            Conv2d(mid, width, 1, rng=rng, dtype=dtype),
        ])
    raise ConfigError(f"unknown residual kind {kind!r}")


class ResidualBlock(Layer):
    """Non-reversible y = skip(x) + branch(x).

    The skip is the identity when shapes are preserved, otherwise a bare
    1x1 projection conv (stride-matched).
    """

    def __init__(self, kind, c_in, c_out, *, rng, dtype, stride=1):
        self.kind = kind
        self.stride = stride
        self.branch = make_residual_fn(kind, c_out, rng=rng, dtype=dtype,
                                       stride=stride, c_in=c_in)
        if c_in != c_out or stride != 1:
            self.proj = Conv2d(c_in, c_out, 1, stride=stride, pad=0, rng=rng, dtype=dtype)
        else:
            self.proj = None

    def params(self):
        ps = self.branch.params()
        if self.proj is not None:
            ps = ps + self.proj.params()
        return ps

    def out_shape(self, shape):
        return self.branch.out_shape(shape)

    def forward(self, x, tape=None, replay=False):
        sub = [] if tape is not None else None
        y = self.branch.forward(x, tape=sub, replay=replay)
        skip = x if self.proj is None else self.proj.forward(x)
        if tape is not None:
            tape.append((x, sub))
        return y + skip

    def backward(self, gy, entry):
        x, sub = entry
        gx = self.branch.backward(gy, sub)
        if self.proj is None:
            gx = gx + gy
        else:
            gx = gx + self.proj.backward(gy, x)
        return gx

    def backward_from_input(self, gy, x):
        # checkpoint style: rebuild the branch tape from the cached input
        sub = []
        self.branch.forward(x, tape=sub, replay=True)
        return self.backward(gy, (x, sub))

    def plan_cached(self, in_shape):
        # the projection input is the same tensor as the branch's first entry
        return self.branch.plan_cached(in_shape)

    def plan_stats(self, in_shape):
        return self.branch.plan_stats(in_shape)

    def stat_nbytes(self):
        return self.branch.stat_nbytes()


class RevBlock(Layer):
    """Additive-coupling block: y1 = x1 + F(x2); y2 = x2 + G(y1).

    Inputs split evenly on the channel axis (fixed first/second half). The
    block is exactly invertible, so its backward can reconstruct (x1, x2)
    from (y1, y2) and needs no cached activations.
    """

    reversible = True

    def __init__(self, kind, half_width, *, rng, dtype):
        self.kind = kind
        self.half_width = half_width
        self.f = make_residual_fn(kind, half_width, rng=rng, dtype=dtype)
        self.g = make_residual_fn(kind, half_width, rng=rng, dtype=dtype)

    def params(self):
        return self.f.params() + self.g.params()

    def out_shape(self, shape):
        if shape[1] != 2 * self.half_width:
            raise ShapeError(
                f"reversible block expects {2 * self.half_width} channels, got {shape[1]}"
            )
        return shape

    # -- pair-level core -------------------------------------------------

    def couple(self, x1, x2, tape_f=None, tape_g=None, replay=False):
        if x1.shape != x2.shape:
            raise ShapeError(f"stream shapes differ: {x1.shape} vs {x2.shape}")
        y1 = x1 + self.f.forward(x2, tape=tape_f, replay=replay)
        y2 = x2 + self.g.forward(y1, tape=tape_g, replay=replay)
        return y1, y2

    def invert(self, y1, y2):
        z1 = y1
        x2 = y2 - self.g.forward(z1, replay=True)
        x1 = z1 - self.f.forward(x2, replay=True)
        return x1, x2

    def rev_backward_pair(self, y1, y2, gy1, gy2):
        """Reconstruct inputs and backpropagate without stored activations."""
        z1 = y1
        g_tape = []
        x2 = y2 - self.g.forward(z1, tape=g_tape, replay=True)
        f_tape = []
        x1 = z1 - self.f.forward(x2, tape=f_tape, replay=True)
        gz1 = gy1 + self.g.backward(gy2, g_tape)
        gx2 = gy2 + self.f.backward(gz1, f_tape)
        return x1, x2, gz1, gx2

    # -- full-tensor layer interface -------------------------------------

    def forward(self, x, tape=None, replay=False):
        x1, x2 = ops.channel_split(x)
        if tape is None:
            y1, y2 = self.couple(x1, x2, replay=replay)
        else:
            f_tape, g_tape = [], []
            y1, y2 = self.couple(x1, x2, f_tape, g_tape, replay=replay)
            tape.append((f_tape, g_tape))
        return ops.channel_concat(y1, y2)

    def backward(self, gy, entry):
        f_tape, g_tape = entry
        gy1, gy2 = ops.channel_split(gy)
        gz1 = gy1 + self.g.backward(gy2, g_tape)
        gx2 = gy2 + self.f.backward(gz1, f_tape)
        return ops.channel_concat(gz1, gx2)

    def inverse(self, y):
        y1, y2 = ops.channel_split(y)
        x1, x2 = self.invert(y1, y2)
        return ops.channel_concat(x1, x2)

    def rev_backward(self, y, gy):
        y1, y2 = ops.channel_split(y)
        gy1, gy2 = ops.channel_split(gy)
        x1, x2, gx1, gx2 = self.rev_backward_pair(y1, y2, gy1, gy2)
        return ops.channel_concat(x1, x2), ops.channel_concat(gx1, gx2)

    def plan_cached(self, in_shape):
        n, c, f, t = in_shape
        half = (n, c // 2, f, t)
        return self.f.plan_cached(half) + self.g.plan_cached(half)

    def plan_stats(self, in_shape):
        n, c, f, t = in_shape
        half = (n, c // 2, f, t)
        return self.f.plan_stats(half) + self.g.plan_stats(half)

    def stat_nbytes(self):
        return self.f.stat_nbytes() + self.g.stat_nbytes()


class RevDownsample(Layer):
    """Invertible downsampling by tensor rearrangement (nothing cached)."""

    reversible = True

    def __init__(self, r=2):
        self.r = r

    def out_shape(self, shape):
        n, c, f, t = shape
        if f % self.r or t % self.r:
            raise ConfigError(
                f"spatial dims ({f}, {t}) not divisible by ratio {self.r}"
            )
        return (n, c * self.r * self.r, f // self.r, t // self.r)

    def forward(self, x, tape=None, replay=False):
        if tape is not None:
            tape.append(None)
        return ops.pixel_unshuffle(x, self.r)

    def backward(self, gy, entry=None):
        return ops.pixel_shuffle(gy, self.r)

    def backward_from_input(self, gy, x):
        return ops.pixel_shuffle(gy, self.r)

    def inverse(self, y):
        return ops.pixel_shuffle(y, self.r)

    def rev_backward(self, y, gy):
        return ops.pixel_shuffle(y, self.r), ops.pixel_shuffle(gy, self.r)
