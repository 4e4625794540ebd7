"""Declarative network builder and the named-architecture registry.

A NetworkSpec is an ordered stage list over a small grammar:

    conv(c, k, stride)        plain conv + batch norm + ReLU (non-reversible)
    res(kind, c, repeat)      residual blocks, identity/projection skip
    ds(kind, c)               stride-2 downsampling residual block
    rev_res(kind, c_half, n)  reversible coupling blocks on 2*c_half channels
    rev_ds(r, c_out)          invertible rearrangement downsampling
    pooling()                 statistics pooling over time
    fc(d_in, d_out)           embedding projection

Inputs are (n, 1, 80, T) feature maps. `build` validates the stage list
(channel bookkeeping, divisibility, the fc width rule) and instantiates
parameters; `param_count` computes the same number analytically without
building anything, which the tests cross-check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import Network
from .errors import ConfigError
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalStatPool,
    Linear,
    ReLU,
    ResidualBlock,
    RevBlock,
    RevDownsample,
    RESIDUAL_KINDS,
)

INPUT_CHANNELS = 1
INPUT_FREQ = 80
DEFAULT_EMBEDDING_DIM = 256


@dataclass(frozen=True)
class Conv:
    c: int
    k: int = 3
    stride: int = 1


@dataclass(frozen=True)
class Res:
    kind: str
    c: int
    repeat: int = 1


@dataclass(frozen=True)
class Ds:
    kind: str
    c: int


@dataclass(frozen=True)
class RevRes:
    kind: str
    c_half: int
    repeat: int


@dataclass(frozen=True)
class RevDs:
    r: int
    c_out: int


@dataclass(frozen=True)
class Pooling:
    pass


@dataclass(frozen=True)
class Fc:
    d_in: int
    d_out: int


@dataclass
class NetworkSpec:
    name: str
    stages: list = field(default_factory=list)
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    def param_count(self) -> int:
        return _analytic_params(self)


def _branch_params(kind: str, width: int, c_in: int) -> int:
    """Parameter count of one residual branch (mirrors layers.make_residual_fn)."""
    if kind == "basic":
        return c_in * width * 9 + 2 * width + width * width * 9
    if kind == "bottleneck":
        mid = width // 4
        return c_in * mid + 2 * mid + mid * mid * 9 + mid * width
    if kind == "df_bottleneck":
        mid = 4 * width
        return c_in * mid + 2 * mid + mid * 9 + mid * width
    raise ConfigError(f"unknown residual kind {kind!r}")


def _analytic_params(spec: NetworkSpec) -> int:
    total = 0
    c = INPUT_CHANNELS
    for stage in spec.stages:
        if isinstance(stage, Conv):
            total += c * stage.c * stage.k * stage.k + 2 * stage.c
            c = stage.c
        elif isinstance(stage, Res):
            for i in range(stage.repeat):
                total += _branch_params(stage.kind, stage.c, c)
                if c != stage.c:
                    total += c * stage.c  # projection
                c = stage.c
        elif isinstance(stage, Ds):
            total += _branch_params(stage.kind, stage.c, c) + c * stage.c
            c = stage.c
        elif isinstance(stage, RevRes):
            total += stage.repeat * 2 * _branch_params(stage.kind, stage.c_half, stage.c_half)
            c = 2 * stage.c_half
        elif isinstance(stage, RevDs):
            c = stage.c_out
        elif isinstance(stage, Fc):
            total += stage.d_in * stage.d_out + stage.d_out
        elif not isinstance(stage, Pooling):
            raise ConfigError(f"unknown stage {stage!r}")
    return total


def build(spec_or_name, dtype=np.float32, seed: int = 0) -> Network:
    """Instantiate a Network from a spec or a registry name.

    Conv/linear weights are He-uniform (fan-in); batch-norm affine starts at
    gamma=1, beta=0; biases at zero. Raises ConfigError naming the failing
    stage on any invariant violation.
    """
    if isinstance(spec_or_name, str):
        spec = registry_spec(spec_or_name)
    else:
        spec = spec_or_name
    rng = np.random.default_rng(seed)
    dtype = np.dtype(dtype)

    layers = []
    c, f = INPUT_CHANNELS, INPUT_FREQ
    pooled = False
    for si, stage in enumerate(spec.stages):
        where = f"stage {si} ({type(stage).__name__.lower()})"
        if isinstance(stage, Conv):
            layers.append(Conv2d(c, stage.c, stage.k, stride=stage.stride, rng=rng, dtype=dtype))
            layers.append(BatchNorm2d(stage.c, dtype=dtype))
            layers.append(ReLU())
            f = (f + 2 * (stage.k // 2) - stage.k) // stage.stride + 1
            c = stage.c
        elif isinstance(stage, Res):
            if stage.kind not in RESIDUAL_KINDS:
                raise ConfigError(f"{where}: unknown kind {stage.kind!r}")
            for _ in range(stage.repeat):
                layers.append(ResidualBlock(stage.kind, c, stage.c, rng=rng, dtype=dtype))
                c = stage.c
        elif isinstance(stage, Ds):
            if stage.kind not in RESIDUAL_KINDS:
                raise ConfigError(f"{where}: unknown kind {stage.kind!r}")
            layers.append(ResidualBlock(stage.kind, c, stage.c, rng=rng, dtype=dtype, stride=2))
            # stride-2 first conv: 3x3/pad-1 and 1x1/pad-0 agree on floor((f-1)/2)+1
            f = (f - 1) // 2 + 1
            c = stage.c
        elif isinstance(stage, RevRes):
            if stage.kind not in RESIDUAL_KINDS:
                raise ConfigError(f"{where}: unknown kind {stage.kind!r}")
            if c != 2 * stage.c_half:
                raise ConfigError(
                    f"{where}: reversible stage needs {2 * stage.c_half} input "
                    f"channels, network has {c}"
                )
            if c % 2:
                raise ConfigError(f"{where}: odd channel count {c}")
            for _ in range(stage.repeat):
                layers.append(RevBlock(stage.kind, stage.c_half, rng=rng, dtype=dtype))
        elif isinstance(stage, RevDs):
            if stage.c_out != stage.r * stage.r * c:
                raise ConfigError(
                    f"{where}: output channels {stage.c_out} must be "
                    f"r^2 * {c} = {stage.r * stage.r * c}"
                )
            if f % stage.r:
                raise ConfigError(f"{where}: frequency {f} not divisible by {stage.r}")
            layers.append(RevDownsample(stage.r))
            f //= stage.r
            c = stage.c_out
        elif isinstance(stage, Pooling):
            layers.append(GlobalStatPool())
            pooled = True
        elif isinstance(stage, Fc):
            if not pooled:
                raise ConfigError(f"{where}: fc requires a pooling stage first")
            expected = 2 * c * f
            if stage.d_in != expected:
                raise ConfigError(
                    f"{where}: fc width {stage.d_in} != 2*c*f = 2*{c}*{f} = {expected}"
                )
            layers.append(Linear(stage.d_in, stage.d_out, rng=rng, dtype=dtype))
        else:
            raise ConfigError(f"{where}: unknown stage type")

    net = Network(layers, name=spec.name, input_spec=(INPUT_CHANNELS, INPUT_FREQ),
                  embedding_dim=spec.embedding_dim, dtype=dtype, spec=spec)
    return net


# -- named architectures ----------------------------------------------------

def _resnet(name, kind, blocks, base=32):
    e = 1 if kind == "basic" else 4
    widths = [base, base * 2, base * 4, base * 8]
    stages = [Conv(base), Res(kind, e * widths[0], blocks[0])]
    for i in (1, 2, 3):
        stages.append(Ds(kind, e * widths[i]))
        stages.append(Res(kind, e * widths[i], blocks[i] - 1))
    stages += [Pooling(), Fc(2 * e * widths[3] * 10, DEFAULT_EMBEDDING_DIM)]
    return NetworkSpec(name, stages)


def _df_resnet(name, blocks, base=32):
    widths = [base, base * 2, base * 4, base * 8]
    stages = [Conv(base), Res("df_bottleneck", widths[0], blocks[0])]
    for i in (1, 2, 3):
        stages.append(Conv(widths[i], 3, 2))
        stages.append(Res("df_bottleneck", widths[i], blocks[i]))
    stages += [Pooling(), Fc(2 * widths[3] * 10, DEFAULT_EMBEDDING_DIM)]
    return NetworkSpec(name, stages)


def _revnet_type1(name, kind, channels, blocks):
    e = 1 if kind == "basic" else 4
    w = [e * c for c in channels]
    stages = [Conv(48), Res(kind, w[0], 1), RevRes(kind, w[0] // 2, blocks[0])]
    for i in (1, 2, 3):
        stages.append(Ds(kind, w[i]))
        stages.append(RevRes(kind, w[i] // 2, blocks[i]))
    stages += [Pooling(), Fc(2 * w[3] * 10, DEFAULT_EMBEDDING_DIM)]
    return NetworkSpec(name, stages)


def _revnet_type2_basic(name, channels, blocks):
    w = channels
    stages = [Conv(w[0]), RevRes("basic", w[0] // 2, blocks[0])]
    for i in (1, 2, 3):
        stages.append(Conv(w[i] // 4, 3, 1))
        stages.append(RevDs(2, w[i]))
        stages.append(RevRes("basic", w[i] // 2, blocks[i]))
    stages += [Pooling(), Fc(2 * w[3] * 10, DEFAULT_EMBEDDING_DIM)]
    return NetworkSpec(name, stages)


def _revnet_type2_bottleneck(name, channels, blocks):
    # Fully-reversible downsampling variant of the wide bottleneck stack:
    # block widths are 4x the nominal channels, so the stage entries are a
    # 1x1 channel expansion after the stem, then 1x1/1x1/3x3 reducers ahead
    # of each rearrangement.
    w = [4 * c for c in channels]
    stages = [Conv(48), Conv(w[0], 1, 1), RevRes("bottleneck", w[0] // 2, blocks[0])]
    reducer_k = {1: 1, 2: 1, 3: 3}
    for i in (1, 2, 3):
        stages.append(Conv(w[i] // 4, reducer_k[i], 1))
        stages.append(RevDs(2, w[i]))
        stages.append(RevRes("bottleneck", w[i] // 2, blocks[i]))
    stages += [Pooling(), Fc(2 * w[3] * 10, DEFAULT_EMBEDDING_DIM)]
    return NetworkSpec(name, stages)


def _df_revnet_type1(name, blocks, channels=(48, 96, 192, 384)):
    w = channels
    stages = [Conv(48), Conv(48), RevRes("df_bottleneck", w[0] // 2, blocks[0])]
    for i in (1, 2, 3):
        stages.append(Conv(w[i], 3, 2))
        stages.append(RevRes("df_bottleneck", w[i] // 2, blocks[i]))
    stages += [Pooling(), Fc(2 * w[3] * 10, DEFAULT_EMBEDDING_DIM)]
    return NetworkSpec(name, stages)


def _df_revnet_type2(name, blocks, channels=(48, 96, 192, 384)):
    w = channels
    stages = [Conv(48), RevRes("df_bottleneck", w[0] // 2, blocks[0])]
    for i in (1, 2, 3):
        stages.append(Conv(w[i] // 4, 3, 1))
        stages.append(RevDs(2, w[i]))
        stages.append(RevRes("df_bottleneck", w[i] // 2, blocks[i]))
    stages += [Pooling(), Fc(2 * w[3] * 10, DEFAULT_EMBEDDING_DIM)]
    return NetworkSpec(name, stages)


_REGISTRY_BUILDERS = {
    # plain residual baselines
    "ResNet34": lambda: _resnet("ResNet34", "basic", [3, 4, 6, 3]),
    "ResNet101": lambda: _resnet("ResNet101", "bottleneck", [3, 4, 23, 3]),
    "ResNet152": lambda: _resnet("ResNet152", "bottleneck", [3, 8, 36, 3]),
    # depthwise-bottleneck baselines
    "DF-ResNet56": lambda: _df_resnet("DF-ResNet56", [3, 3, 8, 3]),
    "DF-ResNet110": lambda: _df_resnet("DF-ResNet110", [3, 3, 26, 3]),
    "DF-ResNet179": lambda: _df_resnet("DF-ResNet179", [3, 8, 44, 3]),
    "DF-ResNet233": lambda: _df_resnet("DF-ResNet233", [3, 8, 62, 3]),
    # partially reversible (strided downsampling kept, inputs cached)
    "RevNet46": lambda: _revnet_type1("RevNet46", "basic", [48, 96, 192, 300], [1, 2, 4, 2]),
    "RevNet126": lambda: _revnet_type1("RevNet126", "basic", [48, 96, 192, 384], [2, 3, 22, 2]),
    "RevNet140": lambda: _revnet_type1("RevNet140", "bottleneck", [48, 96, 192, 300], [2, 3, 14, 2]),
    "RevNet178": lambda: _revnet_type1("RevNet178", "basic", [48, 96, 192, 384], [3, 8, 32, 3]),
    "RevNet230": lambda: _revnet_type1("RevNet230", "bottleneck", [48, 96, 192, 300], [3, 8, 26, 3]),
    # fully reversible downsampling
    "RevNet57": lambda: _revnet_type2_basic("RevNet57", [48, 96, 192, 300], [2, 3, 5, 3]),
    "RevNet137": lambda: _revnet_type2_basic("RevNet137", [48, 96, 192, 384], [3, 4, 23, 3]),
    "RevNet197": lambda: _revnet_type2_basic("RevNet197", [48, 96, 192, 384], [3, 8, 34, 3]),
    "RevNet155": lambda: _revnet_type2_bottleneck("RevNet155", [48, 96, 192, 300], [3, 4, 15, 3]),
    "RevNet245": lambda: _revnet_type2_bottleneck("RevNet245", [48, 96, 192, 300], [3, 8, 26, 3]),
    # depthwise-bottleneck reversible variants
    "DF-RevNet66": lambda: _df_revnet_type1("DF-RevNet66", [2, 2, 4, 2]),
    "DF-RevNet126": lambda: _df_revnet_type1("DF-RevNet126", [3, 3, 15, 3]),
    "DF-RevNet258": lambda: _df_revnet_type1("DF-RevNet258", [3, 8, 32, 3]),
    "DF-RevNet354": lambda: _df_revnet_type1("DF-RevNet354", [3, 8, 48, 3]),
    "DF-RevNet89": lambda: _df_revnet_type2("DF-RevNet89", [3, 3, 6, 2]),
    "DF-RevNet149": lambda: _df_revnet_type2("DF-RevNet149", [3, 3, 15, 3]),
    "DF-RevNet281": lambda: _df_revnet_type2("DF-RevNet281", [3, 8, 32, 3]),
    "DF-RevNet377": lambda: _df_revnet_type2("DF-RevNet377", [3, 8, 48, 3]),
}

REGISTRY_NAMES = tuple(_REGISTRY_BUILDERS)


def registry_spec(name: str) -> NetworkSpec:
    if name not in _REGISTRY_BUILDERS:
        raise ConfigError(
            f"unknown network {name!r}; known: {', '.join(REGISTRY_NAMES)}"
        )
    return _REGISTRY_BUILDERS[name]()


def toy_spec(stage_blocks, width: int, kind: str = "basic", net_type: str = "type2",
             embedding_dim: int = 32) -> NetworkSpec:
    """A desk-scale miniature following the full stage grammar.

    type2 keeps the width constant across stages (conv reducer + invertible
    rearrangement between stages); type1 doubles the width via strided
    downsampling blocks. fc width depends only on the width and the number
    of downsamplings, never on stage_blocks.
    """
    if width % 2 or width < 4:
        raise ConfigError(f"toy width must be even and >= 4, got {width}")
    if kind not in RESIDUAL_KINDS:
        raise ConfigError(f"unknown residual kind {kind!r}")
    n_stages = len(stage_blocks)
    if n_stages < 1:
        raise ConfigError("need at least one stage")

    if net_type == "type2":
        if n_stages > 1 and width % 4:
            raise ConfigError(
                f"multi-stage type2 toys need width divisible by 4, got {width}"
            )
        stages = [Conv(width), RevRes(kind, width // 2, stage_blocks[0])]
        for b in stage_blocks[1:]:
            stages.append(Conv(width // 4, 3, 1))
            stages.append(RevDs(2, width))
            stages.append(RevRes(kind, width // 2, b))
        f_final = INPUT_FREQ // (2 ** (n_stages - 1))
        stages += [Pooling(), Fc(2 * width * f_final, embedding_dim)]
        return NetworkSpec(f"toy-{kind}-t2-w{width}", stages, embedding_dim)

    if net_type == "type1":
        stages = [Conv(width), RevRes(kind, width // 2, stage_blocks[0])]
        c = width
        for b in stage_blocks[1:]:
            c *= 2
            stages.append(Ds(kind, c))
            stages.append(RevRes(kind, c // 2, b))
        f_final = INPUT_FREQ // (2 ** (n_stages - 1))
        stages += [Pooling(), Fc(2 * c * f_final, embedding_dim)]
        return NetworkSpec(f"toy-{kind}-t1-w{width}", stages, embedding_dim)

    raise ConfigError(f"unknown net_type {net_type!r}")


# -- JSON round trip --------------------------------------------------------

_STAGE_FIELDS = {
    "conv": (Conv, ("c", "k", "stride")),
    "res": (Res, ("kind", "c", "repeat")),
    "ds": (Ds, ("kind", "c")),
    "rev_res": (RevRes, ("kind", "c_half", "repeat")),
    "rev_ds": (RevDs, ("r", "c_out")),
    "pooling": (Pooling, ()),
    "fc": (Fc, ("d_in", "d_out")),
}

_STAGE_OPS = {cls: op for op, (cls, _) in _STAGE_FIELDS.items()}


def spec_to_json(spec: NetworkSpec) -> str:
    stages = []
    for stage in spec.stages:
        op = _STAGE_OPS[type(stage)]
        entry = {"op": op}
        for name in _STAGE_FIELDS[op][1]:
            entry[name] = getattr(stage, name)
        stages.append(entry)
    doc = {"name": spec.name, "stages": stages, "embedding_dim": spec.embedding_dim}
    return json.dumps(doc, indent=2)


def spec_from_json(text: str) -> NetworkSpec:
    doc = json.loads(text)
    allowed_top = {"name", "stages", "embedding_dim"}
    extra = set(doc) - allowed_top
    if extra:
        raise ConfigError(f"unknown keys in network document: {sorted(extra)}")
    stages = []
    for i, entry in enumerate(doc.get("stages", [])):
        op = entry.get("op")
        if op not in _STAGE_FIELDS:
            raise ConfigError(f"stage {i}: unknown op {op!r}")
        cls, fields = _STAGE_FIELDS[op]
        extra = set(entry) - {"op", *fields}
        if extra:
            raise ConfigError(f"stage {i}: unknown keys {sorted(extra)}")
        kwargs = {name: entry[name] for name in fields if name in entry}
        stages.append(cls(**kwargs))
    return NetworkSpec(
        name=doc.get("name", "unnamed"),
        stages=stages,
        embedding_dim=doc.get("embedding_dim", DEFAULT_EMBEDDING_DIM),
    )
