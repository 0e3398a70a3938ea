"""Train the SVAE on the toy sentence benchmark and report round-trip accuracy."""

import argparse
import logging

from sentlm.experiments import SvaeRun, fit_svae, round_trip
from sentlm.toy import ToySpec, sentence_set


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=SvaeRun.steps)
    ap.add_argument("--layers", type=int, default=SvaeRun.num_layers)
    ap.add_argument("--lr", type=float, default=SvaeRun.base_lr)
    ap.add_argument("--batch-size", type=int, default=SvaeRun.batch_size)
    ap.add_argument("--lexicon-size", type=int, default=ToySpec.lexicon_size, help="words kept per category")
    ap.add_argument("--sentences", type=int, default=ToySpec.train_size)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=1000, help="held-out loss every N steps")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = sentence_set(ToySpec(train_size=args.sentences, lexicon_size=args.lexicon_size, seed=args.seed))
    run = SvaeRun(num_layers=args.layers, steps=args.steps, base_lr=args.lr, batch_size=args.batch_size,
                  warmup_steps=max(1, args.steps // 20), seed=args.seed, eval_every=args.every)
    print(f"vocab {len(data.vocab)}, {len(data.train)} train, {len(data.val)} held-out")

    def show(row):
        if "val_loss" in row:
            print(f"step {row['step'] + 1}: loss {row['loss']:.4f} val_loss {row['val_loss']:.4f}", flush=True)

    model, _, secs = fit_svae(data, run, on_step=show)
    for name, seqs in (("train", data.train), ("held-out", data.val)):
        r = round_trip(seqs, model)
        print(f"{name}: token accuracy {r.token:.3f}, exact sentences {r.exact:.3f} ({r.sentences})")
    print(f"{secs:.0f}s")


if __name__ == "__main__":
    main()
