"""Desk-scale training of a ~100k-parameter LMU model on synthetic corpora.

``pattern`` repeats a fixed 64-byte string, so a good model reaches ~0 nats;
``random`` is uniform bytes, so the loss cannot go below ln 256.

Usage: python scripts/toy_training.py --corpus pattern --steps 500 --out runs/pattern
"""
from __future__ import annotations

import argparse
import math
import time

from lmulm import data
from lmulm.model import LanguageModel, ModelConfig, count_params
from lmulm.training import TrainConfig, train_loop

TOY_MODEL = ModelConfig(n=128, d=48, q=64, layers=2)


def toy_corpus(kind: str, seed: int = 0) -> data.PackedCorpus:
    if kind == "pattern":
        doc = data.pattern_corpus(300 * TOY_MODEL.n, period=64, seed=seed)
    else:
        # large enough that a 500-step run sees each row about once, so there is nothing to memorise
        doc = data.random_corpus(2400 * TOY_MODEL.n, seed)
    return data.pack_corpus([doc], TOY_MODEL.n)


def toy_config(steps: int = 500, seed: int = 0, workers: int = 1, **kw) -> TrainConfig:
    base = dict(batch=4, steps=steps, peak_lr=3e-3, warmup=min(50, max(1, steps // 5)), eval_every=max(1, steps // 5),
                seed=seed, precision="f32", workers=workers, max_eval_seqs=16)
    base.update(kw)
    return TrainConfig(**base)


def train(kind: str, steps: int = 500, seed: int = 0, workers: int = 1, out: str | None = None, log=print, **kw):
    model = LanguageModel(TOY_MODEL, seed=seed)
    return train_loop(model, toy_corpus(kind, seed), toy_config(steps, seed, workers, **kw), out_dir=out, log=log)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--corpus", choices=("pattern", "random"), default="pattern")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    args = p.parse_args()
    print(f"params (non-embedding, total): {count_params(LanguageModel(TOY_MODEL).params)}")
    t0 = time.time()
    res = train(args.corpus, args.steps, args.seed, args.workers, args.out)
    print(f"final val {res.evals[-1].val_nats:.4f} nats (ln 257 = {math.log(257):.4f}), {time.time() - t0:.0f}s")


if __name__ == "__main__":
    main()
