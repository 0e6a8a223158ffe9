"""Train on a corpus whose only structure is a repeat at lag 64 and dump the
per-position validation loss.

Usage: python scripts/context_utilisation.py [--steps 400] [--out runs/lag]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from lmulm import data
from lmulm.model import LanguageModel, ModelConfig, count_params
from lmulm.training import TrainConfig, evaluate, train_loop, write_per_position


def run(steps: int = 400, out: str | None = None, seed: int = 0, log=print):
    n, lag = 128, 64
    corpus = data.pack_corpus([data.lag_corpus(400 * n, lag=lag, alphabet=16, seed=seed)], n)
    model = LanguageModel(ModelConfig(n=n, d=48, q=64, layers=2), seed=seed)
    cfg = TrainConfig(batch=4, steps=steps, peak_lr=3e-3, warmup=min(50, steps // 5), eval_every=max(1, steps // 4),
                      seed=seed, precision="f32", max_eval_seqs=16)
    if log:
        log(f"params (non-embedding, total): {count_params(model.params)}")
    train_loop(model, corpus, cfg, out_dir=out, log=log)
    _, val = corpus.split(cfg.val_fraction)
    mean, per = evaluate(model, val, 32)
    return mean, per


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    t0 = time.time()
    mean, per = run(args.steps, args.out, args.seed)
    print(f"mean {mean:.4f}  positions 1-8: {np.mean(per[:8]):.4f}  positions 65-128: {np.mean(per[64:128]):.4f}"
          f"  ({time.time() - t0:.0f}s)")
    if args.out:
        write_per_position(f"{args.out}/per_position_final.csv", per)


if __name__ == "__main__":
    main()
