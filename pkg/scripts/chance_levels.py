#!/usr/bin/env python3
"""Chance-level readings of the untrained encoders, averaged over init seeds."""

import argparse

import numpy as np

from rankclip_lab.data import DatasetSpec, generate_dataset
from rankclip_lab.encoders import EncoderConfig, init_params
from rankclip_lab.metrics import evaluate


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--eval-pairs", type=int, default=1000)
    args = p.parse_args(argv)

    spec = DatasetSpec(pairs_per_class=20, eval_pairs=args.eval_pairs, seed=0)
    ds = generate_dataset(spec)
    reports = [evaluate(init_params(EncoderConfig(spec.image_dim, spec.text_dim, init_seed=s)), ds)
               for s in range(args.seeds)]
    for key in ("top1", "i2t_r1", "t2i_r1", "consistency_spearman", "linear_probe_accuracy"):
        vals = np.array([r.flat()[key] for r in reports])
        print(f"{key:<24} mean {vals.mean():.4f}  std {vals.std():.4f}")
    print(f"{'chance top1':<24} {1 / ds.num_classes:.4f}")


if __name__ == "__main__":
    main()
