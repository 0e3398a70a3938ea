"""Closed-form backbone KV-cache sizes, token- vs sentence-level, over mean sentence lengths."""

import argparse

from sentlm.eval import account_memory


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--layers", type=int, default=12)
    ap.add_argument("--hidden", type=int, default=768)
    ap.add_argument("--context", type=int, default=1024, help="context length in tokens")
    ap.add_argument("--lengths", type=float, nargs="+", default=[4, 6, 8, 10, 12])
    args = ap.parse_args()

    print("mean_len,sentences,baseline_kb_per_token,sllm_kb_per_token,ratio,delta_pct")
    for L in args.lengths:
        n = max(1, round(args.context / L))
        m = account_memory(args.layers, args.hidden, args.context, n)
        print(f"{L:g},{n},{m.kb_per_token(m.baseline_per_token):.2f},{m.kb_per_token(m.sllm_per_token):.3f},"
              f"{m.ratio:.4f},{(m.ratio - 1) * 100:+.1f}")


if __name__ == "__main__":
    main()
