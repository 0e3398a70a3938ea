"""Train SVAE then SLLM on toy paragraphs; report stop-flag scores and generation validity."""

import argparse
import logging

from sentlm.experiments import SllmRun, SvaeRun, fit_sllm, fit_svae, generation_report, round_trip, stop_scores
from sentlm.toy import ToySpec, paragraph_set, sentence_set


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--svae-steps", type=int, default=SvaeRun.steps)
    ap.add_argument("--sllm-steps", type=int, default=SllmRun.steps)
    ap.add_argument("--paragraphs", type=int, default=1000)
    ap.add_argument("--freeze-svae", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    sents = sentence_set(ToySpec(seed=args.seed))
    paras = paragraph_set(ToySpec(train_size=args.paragraphs, val_size=100, seed=args.seed))
    svae, _, secs = fit_svae(sents, SvaeRun(steps=args.svae_steps, seed=args.seed), with_val=False)
    print(f"svae: held-out token accuracy {round_trip(sents.val, svae).token:.3f} ({secs:.0f}s)", flush=True)

    def show(row):
        if (row["step"] + 1) % 250 == 0:
            print(f"step {row['step'] + 1}: recon {row['recon_loss']:.4f} stop {row['stop_loss']:.4f}", flush=True)

    model, _ = fit_sllm(svae, paras, SllmRun(steps=args.sllm_steps, freeze_svae=args.freeze_svae), on_step=show)
    held_in = paras.train[:200]
    s = stop_scores(held_in, model)
    print(f"stop flags on held-in paragraphs: precision {s.precision:.3f} recall {s.recall:.3f}")
    g = generation_report(model, paras, held_in)
    print(f"generation: {g.stopped}/{g.prompts} stopped, {g.capped} capped, "
          f"{g.valid}/{g.sentences} sentences grammar-valid, {g.mean_sentences:.2f} sentences per prompt")
    for text in g.samples:
        print("  " + text)


if __name__ == "__main__":
    main()
