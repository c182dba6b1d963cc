"""``rankclip-lab`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 runtime failure or divergence,
3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import verification
from .config import ConfigError, RunConfig, load_config
from .data import DatasetFormatError, generate_dataset, load_dataset, save_dataset
from .encoders import init_params
from .metrics import evaluate
from .trainer import CheckpointFormatError, DivergenceError, load_checkpoint, run_training, save_checkpoint

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3

HISTORY_FILE = "history.jsonl"
CHECKPOINT_FILE = "checkpoint.rclc"
SUMMARY_FILE = "summary.json"
COMPARE_FILE = "compare.csv"
WINS_FILE = "wins.csv"

LOSS_COLUMNS = ["l_clip", "l_in", "l_cross", "lambda1", "lambda2", "total"]
LOWER_IS_BETTER = {"modality_gap", "mean_pair_gap"}

log = logging.getLogger("rankclip_lab")


def _need(args, name: str) -> str:
    value = getattr(args, name)
    if not value:
        raise ConfigError(f"--{name} is required for {args.command}")
    return value


def cmd_gen_data(args) -> int:
    cfg = load_config(_need(args, "config"), args.seed)
    out = _need(args, "out")
    ds = generate_dataset(cfg.dataset)
    save_dataset(ds, out)
    m = len(ds.labels)
    print(f"M={m} C={ds.num_classes} image_dim={ds.image_raw.shape[1]} text_dim={ds.text_raw.shape[1]} -> {out}")
    return EXIT_OK


def _eval_report(cfg: RunConfig | None, params, ds):
    ev = cfg.eval if cfg else {"top_ks": [1, 3, 5], "recall_ks": [1, 5, 10], "probe_iters": 500, "probe_l2": 1e-4}
    return evaluate(params, ds, tuple(ev["top_ks"]), tuple(ev["recall_ks"]), ev["probe_iters"], ev["probe_l2"])


def train_cell(cfg: RunConfig, ds, out_dir: Path, ablation: str | None = None, seed: int | None = None):
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else seed
    enc_cfg = cfg.encoder_config()
    enc_cfg = type(enc_cfg)(**{**enc_cfg.__dict__, "init_seed": seed})
    tcfg = cfg.train_config(
        ablation,
        seed,
        history_path=str(out_dir / HISTORY_FILE),
        checkpoint_path=str(out_dir / CHECKPOINT_FILE),
    )
    t0 = time.perf_counter()
    res = run_training(tcfg, ds, init_params(enc_cfg))
    wall = time.perf_counter() - t0
    save_checkpoint(res.params, res.state, res.step, out_dir / CHECKPOINT_FILE)
    last = res.history.records[-1].breakdown
    summary = {"steps": res.step, "final": last.as_record(), "wall_time_s": wall}
    (out_dir / SUMMARY_FILE).write_text(json.dumps(summary, indent=2) + "\n")
    return res, summary


def cmd_train(args) -> int:
    cfg = load_config(_need(args, "config"), args.seed)
    ds = load_dataset(_need(args, "data"))
    _, summary = train_cell(cfg, ds, Path(_need(args, "out")))
    print(json.dumps(summary["final"]))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed) if args.config else None
    params, _, _ = load_checkpoint(_need(args, "checkpoint"))
    ds = load_dataset(_need(args, "data"))
    report = _eval_report(cfg, params, ds)
    out = Path(_need(args, "out"))
    out.write_text(report.to_json())
    out.with_suffix(".csv").write_text(report.to_csv())
    print(report.to_json(), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    modes = ["gradcheck", "oracle", "schedule"] if args.mode in (None, "all") else [args.mode]
    ok = True
    for mode in modes:
        checks = verification.run_suite(mode)
        for c in checks:
            print(c.line())
        if mode == "schedule":
            for i, lam in verification.schedule_table():
                print(f"  i={i:2d} lambda={float(lam):.6f}")
        ok &= verification.all_passed(checks)
    return EXIT_OK if ok else EXIT_VERIFY


def _compare_cell(job):
    cfg, ds, out_dir, variant, seed = job
    res, summary = train_cell(cfg, ds, out_dir / f"{variant}_seed{seed}", variant, seed)
    report = _eval_report(cfg, res.params, ds)
    return {"variant": variant, "seed": seed, **summary["final"], **report.flat()}


def cmd_compare(args) -> int:
    cfg = load_config(_need(args, "config"), args.seed)
    out_dir = Path(_need(args, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(args.data) if args.data else generate_dataset(cfg.dataset)
    variants, seeds = cfg.compare["variants"], cfg.compare["seeds"]
    jobs = [(cfg, ds, out_dir, v, int(s)) for v in variants for s in seeds]
    workers = max(1, int(os.environ.get("RANKCLIP_THREADS", "1")))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_compare_cell, jobs))
    else:
        rows = [_compare_cell(j) for j in jobs]

    columns = list(rows[0])
    with open(out_dir / COMPARE_FILE, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})

    wins = win_counts(rows)
    with open(out_dir / WINS_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "full_wins", "seeds"])
        for metric, (n_win, n) in wins.items():
            w.writerow([metric, n_win, n])
    for metric, (n_win, n) in wins.items():
        print(f"{metric}: full beats clip_only in {n_win}/{n} seeds")
    return EXIT_OK


def win_counts(rows: list[dict]) -> dict[str, tuple[int, int]]:
    """Per metric, seeds where the full variant beats clip_only."""
    by = {(r["variant"], r["seed"]): r for r in rows}
    seeds = sorted({r["seed"] for r in rows if (("full", r["seed"]) in by and ("clip_only", r["seed"]) in by)})
    if not seeds:
        return {}
    skip = {"variant", "seed", "N", *LOSS_COLUMNS}
    metrics = [k for k in rows[0] if k not in skip]
    out = {}
    for m in metrics:
        n_win = 0
        for s in seeds:
            full, base = by[("full", s)][m], by[("clip_only", s)][m]
            n_win += (full < base) if m in LOWER_IS_BETTER else (full > base)
        out[m] = (n_win, len(seeds))
    return out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "verify": cmd_verify,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rankclip-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["gradcheck", "oracle", "schedule", "all"])
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetFormatError, CheckpointFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
