#!/usr/bin/env python3
"""Codec report: oracle agreement, roundtrip error, and state-byte ratios."""

import argparse
import sys

from revmem.cli import main as revmem_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="quantbench.csv")
    ap.add_argument("--elements", type=int, default=1_000_000)
    ap.add_argument("--blocks", default="1,7,2048,5000")
    args = ap.parse_args()
    rc = revmem_main(["quantbench", "--elements", str(args.elements),
                      "--blocks", args.blocks, "--out", args.out])
    print(f"wrote {args.out}")
    return rc


if __name__ == "__main__":
    sys.exit(main())
