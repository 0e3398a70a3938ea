"""Held-out SVAE loss for several depths at one fixed budget."""

import argparse
import logging

from sentlm.experiments import SvaeRun, depth_sweep
from sentlm.toy import ToySpec, sentence_set


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depths", type=int, nargs="+", default=[1, 2, 4])
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = sentence_set(ToySpec(seed=args.seed))
    run = SvaeRun(steps=args.steps, warmup_steps=max(1, args.steps // 15), seed=args.seed)
    losses = depth_sweep(data, run, args.depths)
    print("depth,val_loss")
    for depth, loss in losses.items():
        print(f"{depth},{loss:.6f}")


if __name__ == "__main__":
    main()
