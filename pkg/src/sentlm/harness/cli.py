"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/config/checkpoint error,
3 numeric failure (NaN or inf during training).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from ..baseline import generate_tokens
from ..errors import CheckpointError, ConfigError, DataError, GraftError
from ..numerics import NonFiniteError
from ..sllm import generate
from ..svae import decode_greedy, encode_sentence
from ..text import build_vocab, decode, encode, segment, tokenize
from .checkpoint import load_checkpoint
from .config import load_config
from .metrics import log_dir
from . import pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_train(sub, name: str, help: str):
    p = sub.add_parser(name, help=help)
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--out", help="checkpoint path (default: <log dir>/<mode>.ckpt)")
    p.add_argument("--log", help="metrics CSV path (default: <log dir>/<mode>-<hash>.csv)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--quiet", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sentlm", description="Sentence-level language modelling toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = _add_train(sub, "train-svae", "train the sentence autoencoder")
    p.set_defaults(func=cmd_train, mode="svae")
    p = _add_train(sub, "train-sllm", "graft a trained SVAE onto a backbone and train jointly")
    p.add_argument("--svae", required=True, help="SVAE checkpoint to graft")
    p.set_defaults(func=cmd_train, mode="sllm")
    p = _add_train(sub, "train-baseline", "train the token-level baseline LM")
    p.set_defaults(func=cmd_train, mode="baseline")

    p = sub.add_parser("eval", help="perplexity, throughput and KV-cache report for one checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="paragraph file, one per line")
    p.add_argument("--prompts", type=int, default=16, help="prompts used for wall-clock timing")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="continue a prompt")
    p.add_argument("--model", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--max-sentences", type=int, default=64)
    p.add_argument("--max-tokens", type=int, default=512, help="token cap for baseline checkpoints")
    p.add_argument("--feedback", choices=("hidden", "reencode"), default="hidden")
    p.add_argument("--trace", action="store_true", help="print the counter JSON after the text")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("bench", help="baseline vs SLLM delta table")
    p.add_argument("--baseline", required=True)
    p.add_argument("--sllm", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--prompts", type=int, default=16)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--csv", help="write the delta table as CSV")
    p.add_argument("--json", help="write both reports and the memory account as JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("roundtrip", help="encode and decode a text with an SVAE")
    p.add_argument("--model", required=True, help="SVAE or SLLM checkpoint")
    p.add_argument("--text", required=True)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("vocab", help="build a vocabulary file from corpora")
    p.add_argument("--corpus", required=True, nargs="+")
    p.add_argument("--max-size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)
    return parser


# -- commands -------------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    cfg = replace(cfg, run=replace(cfg.run, mode=args.mode)).with_overrides(args.set)
    root = log_dir()
    out = Path(args.out) if args.out else root / f"{args.mode}.ckpt"
    log_path = Path(args.log) if args.log else root / f"{args.mode}-{cfg.config_hash()[:8]}.csv"

    def on_row(row):
        if not args.quiet and "val_loss" in row:
            print(f"step {row['step'] + 1}: loss {row['loss']:.4f} val_loss {row['val_loss']:.4f} "
                  f"ppl {row['ppl']:.3f}", flush=True)

    outcome = pipeline.train_from_config(cfg, out, log_path, svae_ckpt=getattr(args, "svae", None), on_row=on_row)
    final = outcome.result.history[-1]
    print(f"saved {outcome.checkpoint} (loss {final['loss']:.4f}, skipped {outcome.skipped}); log {log_path}")
    return EXIT_OK


def _paragraphs_for(ckpt, corpus):
    if ckpt.vocab is None:
        raise CheckpointError("checkpoint carries no vocabulary")
    cap = ckpt.model.svae.cfg.max_tokens if ckpt.kind == "sllm" else 64
    return pipeline.load_encoded_paragraphs(corpus, ckpt.vocab, cap)[0]


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.model)
    paragraphs = _paragraphs_for(ckpt, args.corpus)
    report = pipeline.evaluate(ckpt, paragraphs, pipeline.file_id(args.corpus), args.prompts, args.warmup)
    text = report.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.model)
    if ckpt.vocab is None:
        raise CheckpointError("checkpoint carries no vocabulary")
    if ckpt.kind == "sllm":
        text, trace = generate(args.prompt, ckpt.model, ckpt.vocab, args.max_sentences, args.feedback)
    elif ckpt.kind == "baseline":
        ids = [t for s in segment(args.prompt) if tokenize(s.text) for t in encode(s, ckpt.vocab)]
        if not ids:
            raise DataError("empty prompt")
        trace = generate_tokens(ids, ckpt.model, args.max_tokens)
        text = decode(trace.tokens, ckpt.vocab) if trace.tokens else ""
    else:
        raise CheckpointError("generate needs an sllm or baseline checkpoint")
    print(text)
    if args.trace:
        print(json.dumps(trace.counts(), sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    base, sllm = load_checkpoint(args.baseline), load_checkpoint(args.sllm)
    if base.kind != "baseline" or sllm.kind != "sllm":
        raise CheckpointError("bench takes a baseline checkpoint and an sllm checkpoint")
    res = pipeline.bench(base, sllm, args.corpus, args.prompts, args.warmup)
    m = res.memory
    print(res.table.to_text())
    print(f"mean sentence length {res.mean_sentence_length:.2f}; backbone KV elements "
          f"{m.baseline_elements} -> {m.sllm_elements} (ratio {m.ratio:.4f}); "
          f"KB/token {m.kb_per_token(m.baseline_per_token):.3f} -> {m.kb_per_token(m.sllm_per_token):.3f}; "
          f"decoder transient {m.decoder_transient_elements} elements")
    if args.csv:
        Path(args.csv).write_text(res.table.to_csv(), encoding="utf-8")
    if args.json:
        blob = {"baseline": asdict(res.baseline), "sllm": asdict(res.sllm), "memory": asdict(m),
                "mean_sentence_length": res.mean_sentence_length}
        Path(args.json).write_text(json.dumps(blob, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    ckpt = load_checkpoint(args.model)
    if ckpt.kind not in ("svae", "sllm") or ckpt.vocab is None:
        raise CheckpointError("roundtrip needs an SVAE or SLLM checkpoint with a vocabulary")
    svae = ckpt.model if ckpt.kind == "svae" else ckpt.model.svae
    outs, ok = [], True
    for span in segment(args.text):
        if not tokenize(span.text):
            continue
        ids = encode(span, ckpt.vocab, svae.cfg.max_tokens)
        rec = decode_greedy(encode_sentence(ids, svae), svae)
        ok &= rec == ids
        outs.append(decode(rec, ckpt.vocab) if rec else "")
    if not outs:
        raise DataError("text has no tokens")
    print(" ".join(outs))
    print(f"match: {str(ok).lower()}")
    return EXIT_OK


def cmd_vocab(args) -> int:
    if args.max_size <= 4:
        raise UsageError("--max-size must exceed 4")
    vocab = build_vocab(args.corpus, args.max_size)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} entries to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        return args.func(args)
    except UsageError as e:
        print(str(e).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help exits through argparse
        return int(e.code or 0)
    except NonFiniteError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ConfigError, CheckpointError, GraftError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
