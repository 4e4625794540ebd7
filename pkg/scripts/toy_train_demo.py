#!/usr/bin/env python3
"""Train the default toy embedding net in both modes and score the result.

Demonstrates the full loop: reversible training with an 8-bit optimizer,
loss logging, and equal-error-rate evaluation of the final embeddings.
"""

import argparse
import sys
from pathlib import Path

from revmem.cli import main as revmem_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="train_out", type=Path)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--optim", default="adam8")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)

    rc = 0
    for mode in ("reversible", "stored"):
        log = args.outdir / f"train_{mode}.csv"
        rc |= revmem_main(["train", "--mode", mode, "--optim", args.optim,
                           "--steps", str(args.steps), "--seed", str(args.seed),
                           "--out", str(log)])
        print(f"wrote {log}")

    emb = args.outdir / "train_reversible_embeddings.csv"
    rc |= revmem_main(["eer", "--emb", str(emb),
                       "--out", str(args.outdir / "eer.csv")])
    return rc


if __name__ == "__main__":
    sys.exit(main())
