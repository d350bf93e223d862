#!/usr/bin/env python3
"""Run all five structural scans and print the per-scan verdicts.

Equivalent to ``phaselearn diagnose --config scripts/configs/tfim_diagnostics.cfg``.
"""

import argparse
import json
import sys
from pathlib import Path

from phaselearn.config import load_config
from phaselearn.experiment import run_diagnostic_battery

DEFAULT_CFG = Path(__file__).parent / "configs" / "tfim_diagnostics.cfg"


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
    run_diagnostic_battery(cfg)
    battery = json.loads((Path(cfg.out_dir) / "battery.json").read_text())
    for scan, info in sorted(battery.items()):
        if isinstance(info, dict):
            verdict = "pass" if info["passes"] else "FAIL"
            print(f"{scan:16s} {verdict}  rate={info['rate']:.4g} "
                  f"ci=({info['rate_ci'][0]:.3g}, {info['rate_ci'][1]:.3g})")
    print("all_pass:", battery["all_pass"])
    return 0 if battery["all_pass"] else 1


if __name__ == "__main__":
    sys.exit(main())
