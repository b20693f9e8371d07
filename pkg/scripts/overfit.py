#!/usr/bin/env python3
"""Overfit a handful of synthetic scenes and report train-set metrics.

    python scripts/overfit.py --n 8 --epochs 300 --out runs/overfit
"""
import argparse
import json
import time

from mscnet import data as D
from mscnet.model import ModelConfig
from mscnet.train import TrainConfig, evaluate, load_model, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--width", type=float, default=0.25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()

    samples = D.synth_dataset(args.n, seed=args.seed, size=args.size)
    mcfg = ModelConfig(alpha=args.width, input_size=args.size, seed=args.seed)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed, val_fraction=0.0)
    t = time.perf_counter()
    out = train(tcfg, mcfg, samples, args.out)
    elapsed = time.perf_counter() - t
    res = evaluate(load_model(out / "final.mscw", mcfg), samples)
    res.write(out)
    summary = {"maxF": res.mean.max_f, "mae": res.mean.mae, "sm": res.mean.s_measure,
               "em": res.mean.e_measure, "seconds": round(elapsed, 1)}
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
