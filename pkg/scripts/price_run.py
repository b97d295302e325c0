#!/usr/bin/env python3
"""End-to-end pricing experiment: PDE chain vs LSMC oracle on one contract.

Usage:  python scripts/price_run.py [--config configs/default.toml] [--out out]

Prints the two prices with diagnostics and leaves report.json, surface.csv and
boundary.csv in the output directory.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hjmput.cli import RunConfig, cmd_price  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1]
                                            / "configs" / "default.toml"))
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    config = RunConfig.from_toml(args.config)
    config.out_dir = args.out
    if args.seed is not None:
        config.seed = args.seed
    return cmd_price(config)


if __name__ == "__main__":
    sys.exit(main())
