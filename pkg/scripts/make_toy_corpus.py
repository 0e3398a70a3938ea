"""Write a toy paragraph corpus, its vocabulary and a run config for the CLI."""

import argparse
from pathlib import Path

from sentlm.grammar import write_lines
from sentlm.toy import ToySpec, paragraph_set

CONFIG = """\
[model]
hidden_size = 64
layers = 2
heads = 4

[optimizer]
base_lr = 0.002
warmup_steps = {warmup}
total_steps = {steps}
batch_size = 16

[data]
train = "train.txt"
val = "val.txt"
vocab = "toy.vocab"
seed = 0

[run]
eval_every = {every}
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--paragraphs", type=int, default=1000)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = paragraph_set(ToySpec(train_size=args.paragraphs, val_size=max(10, args.paragraphs // 10), seed=args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    write_lines(args.out / "train.txt", data.train_text)
    write_lines(args.out / "val.txt", data.val_text)
    data.vocab.save(args.out / "toy.vocab")
    steps = args.steps
    (args.out / "run.toml").write_text(CONFIG.format(steps=steps, warmup=max(1, steps // 20), every=max(1, steps // 10)))
    print(f"wrote {args.out}/{{train.txt,val.txt,toy.vocab,run.toml}}")


if __name__ == "__main__":
    main()
