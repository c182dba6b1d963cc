#!/usr/bin/env python3
"""Train clip_only and full on the hierarchical synthetic data and tabulate
per-seed geometry and retrieval.

    python3 scripts/run_mechanism_experiment.py --config configs/acceptance.yaml --out runs/mechanism

Set RANKCLIP_THREADS to train cells in parallel.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from rankclip_lab.cli import main as cli_main

METRICS = ("consistency_spearman", "modality_gap", "i2t_r1", "t2i_r1", "top1", "linear_probe_accuracy")


def summarize(table: Path) -> None:
    with open(table) as fh:
        rows = list(csv.DictReader(fh))
    variants = sorted({r["variant"] for r in rows})
    print(f"{'variant':<10} " + " ".join(f"{m:>22}" for m in METRICS))
    for v in variants:
        sel = [r for r in rows if r["variant"] == v]
        cells = []
        for m in METRICS:
            vals = np.array([float(r[m]) for r in sel])
            cells.append(f"{vals.mean():>12.4f} +- {vals.std():<7.4f}")
        print(f"{v:<10} " + " ".join(cells))


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/acceptance.yaml")
    p.add_argument("--out", default="runs/mechanism")
    p.add_argument("--summary-only", action="store_true", help="skip training, summarize an existing compare.csv")
    return p.parse_args(argv)


if __name__ == "__main__":
    args = parse_args()
    out = Path(args.out)
    if not args.summary_only:
        code = cli_main(["compare", "--config", args.config, "--out", str(out)])
        if code:
            sys.exit(code)
    summarize(out / "compare.csv")
