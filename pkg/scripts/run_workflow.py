#!/usr/bin/env python3
"""Run the full workflow on a config: fit, calibrate, sample, diagnose, report.

Usage:
    python scripts/run_workflow.py [--config configs/demo.cfg] [--out DIR] [--seed N]

Equivalent to invoking the `flowcal` CLI once per stage; useful as a single
entry point for reproducing the whole experiment from scratch.
"""

import argparse
import sys
import time
from pathlib import Path

from flowcal.cli import main as cli_main


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/demo.cfg")
    parser.add_argument("--out", default=None)
    parser.add_argument("--seed", default=None)
    parser.add_argument(
        "--sample-n", type=int, default=16, help="fields to generate per resolution"
    )
    args = parser.parse_args(argv)

    base = ["--config", args.config]
    if args.out is not None:
        base += ["--out", args.out]
    if args.seed is not None:
        base += ["--seed", str(args.seed)]

    stages: list[list[str]] = [["fit"], ["calibrate"]]
    # sample each calibrated resolution both ways for side-by-side inspection
    from flowcal.config import load_run_config

    cfg = load_run_config(Path(args.config))
    for r in cfg.eval_resolutions:
        stages.append(["sample", "--resolution", str(r), "--n", str(args.sample_n)])
        stages.append(
            ["sample", "--resolution", str(r), "--n", str(args.sample_n), "--no-with-table"]
        )
    stages += [["diagnose"], ["report"]]

    for stage in stages:
        t0 = time.time()
        print(f"=== flowcal {' '.join(stage)}")
        code = cli_main(base + stage)
        print(f"=== done in {time.time() - t0:.1f}s (exit {code})")
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
