"""Command-line front end for desk-scale experiments.

    revmem gradcheck  [--seed N] [--out PATH] [--inject-vjp-fault OP]
    revmem train      [--net NAME | --spec FILE] [--mode M] [--optim NAME]
                      [--batch N] [--steps N] [--seed N] [--f64] [--out PATH]
    revmem memreport  [--net NAME | --spec FILE] [--mode M] [--optim NAME]
                      [--batch N] [--sweep-depths 4,8,16] [--out PATH]
    revmem quantbench [--elements N] [--blocks 2048,...] [--seed N] [--out PATH]
    revmem eer        (--scores FILE | --emb FILE) [--out PATH]

Exit codes: 0 success, 1 check or validation failure, 2 configuration error.
Every reported number is a deterministic function of the config and seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np

from . import gradcheck as gc
from .eer import cosine_scores, eer_from_scores, read_score_file
from .engine import ledger_plan, run_backward, run_forward
from .errors import ConfigError, RevmemError
from .layers import Param
from .loss import aam_softmax_loss
from .optim import make_optimizer
from .quant import (
    default_map,
    dequantize_blockwise,
    nearest_codes_exhaustive,
    quantize_blockwise,
)
from .synth import SynthDataset
from .zoo import RevRes, build, registry_spec, spec_from_json, toy_spec


@dataclass
class RunConfig:
    command: str
    net: str | None = None
    spec_path: str | None = None
    mode: str = "reversible"
    optim: str = "adamw"
    lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    margin: float = 0.2
    scale: float = 32.0
    batch: int = 6
    steps: int = 200
    seed: int = 0
    f64: bool = False
    out: str | None = None
    frames: int = 8
    classes: int = 3
    block_size: int = 2048
    elements: int = 1_000_000
    blocks: tuple = (2048,)
    sweep_depths: tuple = ()
    scores: str | None = None
    emb: str | None = None
    inject_vjp_fault: str | None = None

    @property
    def dtype(self):
        return np.float64 if self.f64 else np.float32


def _load_spec(cfg: RunConfig):
    if cfg.net and cfg.spec_path:
        raise ConfigError("--net and --spec are mutually exclusive")
    if cfg.spec_path:
        with open(cfg.spec_path) as fh:
            return spec_from_json(fh.read())
    if cfg.net:
        return registry_spec(cfg.net)
    return None


def _write(cfg: RunConfig, text: str):
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gradcheck(cfg: RunConfig) -> int:
    results = gc.run_all_checks(seed=cfg.seed, fault_op=cfg.inject_vjp_fault)
    lines = ["check,max_error,tolerance,status"]
    lines += [r.row() for r in results]
    _write(cfg, "\n".join(lines) + "\n")
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"gradcheck failed: {r.name} (max error {r.max_error:.3e} > {r.tol:.0e})",
              file=sys.stderr)
    return 1 if failed else 0


def _default_lr(optim: str) -> float:
    return 0.02 if optim.startswith("sgd") else 1e-3


def _train_setup(cfg: RunConfig):
    spec = _load_spec(cfg)
    if spec is None:
        spec = toy_spec([2, 2], 16, "df_bottleneck")
    net = build(spec, dtype=cfg.dtype, seed=cfg.seed)
    data = SynthDataset(cfg.classes, frames=cfg.frames, seed=cfg.seed, dtype=cfg.dtype)
    rng = np.random.default_rng(cfg.seed + 1)
    head = Param(rng.normal(0, 0.1, (net.embedding_dim, cfg.classes)).astype(cfg.dtype))
    lr = cfg.lr if cfg.lr is not None else _default_lr(cfg.optim)
    opt = make_optimizer(cfg.optim, net.params() + [head], lr,
                         momentum=cfg.momentum, beta1=cfg.beta1, beta2=cfg.beta2,
                         eps=cfg.eps, weight_decay=cfg.weight_decay,
                         block_size=cfg.block_size)
    return net, data, head, opt


def _train_step(net, head, x, labels, mode, margin, scale):
    emb, store, ledger = run_forward(net, x, mode)
    loss, demb, dhead = aam_softmax_loss(emb, labels, head.value, margin, scale)
    run_backward(net, store, demb.astype(emb.dtype), mode)
    head.grad += dhead.astype(head.value.dtype)
    return loss, emb, ledger


def cmd_train(cfg: RunConfig) -> int:
    net, data, head, opt = _train_setup(cfg)
    rows = ["step,loss,activation_bytes,total_bytes"]
    emb = None
    labels = None
    for step in range(cfg.steps + 1):
        x, labels = data.batch(cfg.batch)
        loss, emb, ledger = _train_step(net, head, x, labels, cfg.mode,
                                        cfg.margin, cfg.scale)
        rows.append(f"{step},{loss:.9e},{ledger.activations},{ledger.total()}")
        if not np.isfinite(loss):
            _write(cfg, "\n".join(rows) + "\n")
            print(f"training diverged at step {step}", file=sys.stderr)
            return 1
        if step == cfg.steps:
            opt.zero_grad()
            break
        opt.step()
        opt.zero_grad()
    _write(cfg, "\n".join(rows) + "\n")
    if cfg.out:
        emb_path = cfg.out.rsplit(".", 1)[0] + "_embeddings.csv"
        with open(emb_path, "w") as fh:
            for lab, vec in zip(labels, emb):
                fh.write(str(int(lab)) + "," + ",".join(f"{v:.8e}" for v in vec) + "\n")
    return 0


def cmd_memreport(cfg: RunConfig) -> int:
    spec = _load_spec(cfg)
    if spec is None:
        raise ConfigError("memreport needs --net or --spec")
    if cfg.sweep_depths:
        rows = ["depth,mode,activations,weights,gradients,optimizer_states,workspace,total"]
        for depth in cfg.sweep_depths:
            deep = type(spec)(
                name=f"{spec.name}-d{depth}",
                stages=[RevRes(s.kind, s.c_half, depth) if isinstance(s, RevRes) else s
                        for s in spec.stages],
                embedding_dim=spec.embedding_dim,
            )
            net = build(deep, dtype=cfg.dtype, seed=cfg.seed)
            led = ledger_plan(net, cfg.batch, cfg.frames, cfg.mode, cfg.optim,
                              cfg.block_size)
            rows.append(f"{depth},{cfg.mode},{led.activations},{led.weights},"
                        f"{led.gradients},{led.optimizer_states},{led.workspace},"
                        f"{led.total()}")
        _write(cfg, "\n".join(rows) + "\n")
        return 0
    net = build(spec, dtype=cfg.dtype, seed=cfg.seed)
    led = ledger_plan(net, cfg.batch, cfg.frames, cfg.mode, cfg.optim, cfg.block_size)
    _write(cfg, led.to_csv())
    return 0


_DISTRIBUTIONS = ("gaussian", "heavy_tailed", "sparse")


def _draw(dist: str, rng, n: int) -> np.ndarray:
    if dist == "gaussian":
        return rng.normal(size=n).astype(np.float32)
    if dist == "heavy_tailed":
        return rng.standard_t(3, size=n).astype(np.float32)
    if dist == "sparse":
        x = rng.normal(size=n).astype(np.float32)
        x[rng.random(n) < 0.99] = 0.0
        return x
    raise ConfigError(f"unknown distribution {dist!r}")


def cmd_quantbench(cfg: RunConfig) -> int:
    qmap = default_map()
    rng = np.random.default_rng(cfg.seed)
    rows = ["distribution,block_size,elements,agreement,max_error,error_bound,"
            "mean_error,state_bytes,dense_bytes,bytes_ratio"]
    all_agree = True
    for dist in _DISTRIBUTIONS:
        data = _draw(dist, rng, cfg.elements)
        for block in cfg.blocks:
            state = quantize_blockwise(data, qmap, block)
            ref_codes = nearest_codes_exhaustive(data, qmap, block)
            agreement = float((state.codes == ref_codes).mean())
            all_agree &= agreement == 1.0
            back = dequantize_blockwise(state, qmap, dtype=np.float64)
            err = np.abs(back - data.astype(np.float64))
            lengths = np.diff(np.append(np.arange(0, data.size, block), data.size))
            bound = float((np.repeat(state.absmax.astype(np.float64), lengths)
                           * qmap.max_adjacent_gap() / 2).max()) if data.size else 0.0
            dense = data.size * 4
            rows.append(f"{dist},{block},{data.size},{agreement:.6f},"
                        f"{err.max():.6e},{bound:.6e},{err.mean():.6e},"
                        f"{state.nbytes},{dense},{state.nbytes / dense:.6f}")
    _write(cfg, "\n".join(rows) + "\n")
    if not all_agree:
        print("quantbench: binary-search codes disagree with exhaustive oracle",
              file=sys.stderr)
        return 1
    return 0


def _read_embeddings_csv(path):
    labels, vecs = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) < 2:
                continue
            labels.append(int(parts[0]))
            vecs.append([float(v) for v in parts[1:]])
    if not vecs:
        raise ConfigError(f"no embeddings found in {path}")
    return np.asarray(vecs), np.asarray(labels)


def cmd_eer(cfg: RunConfig) -> int:
    if bool(cfg.scores) == bool(cfg.emb):
        raise ConfigError("eer needs exactly one of --scores or --emb")
    if cfg.scores:
        pos, neg = read_score_file(cfg.scores)
    else:
        embeddings, labels = _read_embeddings_csv(cfg.emb)
        pos, neg = cosine_scores(embeddings, labels)
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("need at least one target and one nontarget trial")
    value = eer_from_scores(pos, neg)
    print(f"eer {value:.9f}")
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(f"metric,value\neer,{value:.9f}\n")
    return 0


def _parse_int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="revmem",
                                description="Reversible-network training and "
                                            "8-bit optimizer-state experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, train_opts=False):
        sp.add_argument("--net", help="registry network name")
        sp.add_argument("--spec", dest="spec_path", help="network JSON file")
        sp.add_argument("--mode", choices=["stored", "reversible"], default="reversible")
        sp.add_argument("--optim", default="adamw",
                        choices=["sgd", "sgd8", "adam", "adamw", "adam8"])
        sp.add_argument("--batch", type=int, default=6)
        sp.add_argument("--steps", type=int, default=200)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--f64", action="store_true", help="64-bit scalars")
        sp.add_argument("--out", help="output CSV path (default stdout)")
        sp.add_argument("--frames", type=int, default=8)
        if train_opts:
            sp.add_argument("--lr", type=float, default=None)
            sp.add_argument("--momentum", type=float, default=0.9)
            sp.add_argument("--beta1", type=float, default=0.9)
            sp.add_argument("--beta2", type=float, default=0.999)
            sp.add_argument("--eps", type=float, default=1e-8)
            sp.add_argument("--weight-decay", type=float, default=0.05)
            sp.add_argument("--margin", type=float, default=0.2)
            sp.add_argument("--scale", type=float, default=32.0)
            sp.add_argument("--classes", type=int, default=3)
            sp.add_argument("--block", dest="block_size", type=int, default=2048)

    sp = sub.add_parser("gradcheck", help="finite-difference and equivalence checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="output CSV path (default stdout)")
    sp.add_argument("--inject-vjp-fault", metavar="OP",
                    help="corrupt the named op's VJP (testing hook)")

    sp = sub.add_parser("train", help="toy training on synthetic speakers")
    common(sp, train_opts=True)

    sp = sub.add_parser("memreport", help="analytic memory ledger")
    common(sp)
    sp.add_argument("--sweep-depths", type=str, default="",
                    help="comma list; rebuild with every reversible stage at "
                         "this depth and emit bytes per depth")

    sp = sub.add_parser("quantbench", help="codec agreement and error report")
    sp.add_argument("--elements", type=int, default=1_000_000)
    sp.add_argument("--blocks", type=str, default="2048")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="output CSV path (default stdout)")

    sp = sub.add_parser("eer", help="equal error rate from scores or embeddings")
    sp.add_argument("--scores", help="score file: 'target|nontarget <score>' lines")
    sp.add_argument("--emb", help="embeddings CSV: label,v0,v1,...")
    sp.add_argument("--out", help="output CSV path (default stdout)")

    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig(command=args.command)
    for name in vars(args):
        if name == "command":
            continue
        value = getattr(args, name)
        if name == "blocks":
            value = _parse_int_list(value)
        if name == "sweep_depths":
            value = _parse_int_list(value) if value else ()
        setattr(cfg, name, value)
    return cfg


_COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "memreport": cmd_memreport,
    "quantbench": cmd_quantbench,
    "eer": cmd_eer,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return _COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except RevmemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
