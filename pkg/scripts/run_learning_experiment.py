#!/usr/bin/env python3
"""End-to-end learning run: plan, collect shadows, predict, report.

Equivalent to ``phaselearn sweep --config scripts/configs/pinning_steady.cfg``.
"""

import argparse
import sys
from pathlib import Path

from phaselearn.config import load_config
from phaselearn.experiment import run_learning_experiment

DEFAULT_CFG = Path(__file__).parent / "configs" / "pinning_steady.cfg"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(DEFAULT_CFG))
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    manifest = run_learning_experiment(cfg)
    print(f"bundle written to {cfg.out_dir}:")
    for key in sorted(manifest):
        print(f"  {key}: {manifest[key]}")
    summary = Path(cfg.out_dir) / "summary.json"
    print(summary.read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
