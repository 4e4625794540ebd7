#!/usr/bin/env python3
"""Cached-activation bytes vs reversible-stage depth, both execution modes.

Writes one CSV per mode (bytes-vs-depth curves) plus a per-network ledger
breakdown for the named registry architectures.
"""

import argparse
import sys
from pathlib import Path

from revmem.cli import main as revmem_main
from revmem.zoo import spec_to_json, toy_spec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--outdir", default="sweep_out", type=Path)
    ap.add_argument("--width", type=int, default=8)
    ap.add_argument("--depths", default="4,8,16,32")
    ap.add_argument("--nets", default="ResNet34,RevNet46,RevNet57,DF-RevNet89")
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)

    spec_path = args.outdir / "toy_type2.json"
    spec_path.write_text(spec_to_json(toy_spec([2, 2], args.width, "df_bottleneck")))

    rc = 0
    for mode in ("stored", "reversible"):
        out = args.outdir / f"depth_sweep_{mode}.csv"
        rc |= revmem_main(["memreport", "--spec", str(spec_path), "--mode", mode,
                           "--sweep-depths", args.depths, "--out", str(out)])
        print(f"wrote {out}")

    for name in args.nets.split(","):
        for mode in ("stored", "reversible"):
            out = args.outdir / f"ledger_{name}_{mode}.csv"
            rc |= revmem_main(["memreport", "--net", name, "--mode", mode,
                               "--batch", "64", "--frames", "200",
                               "--optim", "sgd", "--out", str(out)])
            print(f"wrote {out}")
    return rc


if __name__ == "__main__":
    sys.exit(main())
