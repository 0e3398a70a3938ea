"""Perplexity, forward-pass counters, KV-cache accounting and baseline comparison."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .baseline import TokenLM, paragraph_stream, token_logits
from .nn import KVCache
from .numerics import Tensor, no_grad
from .sllm import SllmModel, backbone_forward
from .svae import decoder_logits, encode_batch
from .text import BOS, EOS

BYTES_PER_ELEMENT = 4


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def nll_terms(logits, targets) -> np.ndarray:
    """Per-token ``-log p(target)`` computed in float64."""
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    targets = np.asarray(targets, dtype=np.int64)
    logp = _log_softmax64(logits.reshape(-1, logits.shape[-1]))
    return -logp[np.arange(targets.size), targets.reshape(-1)]


def perplexity(logit_stream, target_stream) -> float:
    """``exp(mean NLL)`` over all tokens of all (logits, targets) chunks.

    Accepts a single ``[N, V]`` array with ``N`` targets, or parallel
    iterables of such chunks.
    """
    if isinstance(logit_stream, (np.ndarray, Tensor)):
        logit_stream, target_stream = [logit_stream], [target_stream]
    total, count = 0.0, 0
    for logits, targets in zip(logit_stream, target_stream):
        terms = nll_terms(logits, targets)
        total += float(terms.sum())
        count += terms.size
    if count == 0:
        raise ValueError("perplexity of an empty stream")
    return math.exp(total / count)


# -- forced replay: run each generation loop along a known continuation ----------


@dataclass
class ReplayCounts:
    backbone_forwards: int = 0
    decoder_forwards: int = 0
    tokens: int = 0
    sentences: int = 0
    nll: float = 0.0
    nll_tokens: int = 0
    kv_elements: int = 0
    context_tokens: int = 0

    def __iadd__(self, other: "ReplayCounts") -> "ReplayCounts":
        for k, v in asdict(other).items():
            setattr(self, k, getattr(self, k) + v)
        return self


def replay_baseline(paragraph: Sequence[Sequence[int]], model: TokenLM) -> ReplayCounts:
    """Token loop with the first sentence as prompt, fed the true continuation.

    One forward produces each continuation token; the prompt pass produces the first.
    """
    prompt = [BOS] + list(paragraph[0])
    cont = [t for s in paragraph[1:] for t in s]
    rc = ReplayCounts(tokens=len(cont), sentences=len(paragraph) - 1)
    with no_grad():
        cache = KVCache(model.cfg.num_layers)
        pending = prompt
        for k, target in enumerate(cont):
            logits = token_logits(pending, model, offset=cache.length, cache=cache)
            rc.backbone_forwards += 1
            rc.nll += float(nll_terms(logits.data[-1:], [target])[0])
            rc.nll_tokens += 1
            pending = [target]
        rc.kv_elements = cache.self_elements()
        rc.context_tokens = cache.length
    return rc


def replay_sllm(paragraph: Sequence[Sequence[int]], model: SllmModel) -> ReplayCounts:
    """Sentence loop with the first sentence as prompt, fed the true continuation.

    Each backbone forward yields the vector for the next sentence, which the
    decoder scores token by token (including its ``<eos>``) with a KV cache.
    """
    svae = model.svae
    cont = list(paragraph[1:])
    rc = ReplayCounts(tokens=sum(len(s) for s in cont), sentences=len(cont))
    with no_grad():
        omegas = encode_batch(paragraph, svae)
        cache = KVCache(model.cfg.num_layers)
        for k, sent in enumerate(cont):
            h = backbone_forward(omegas[k : k + 1], model, offset=cache.length, cache=cache)
            rc.backbone_forwards += 1
            omega_next = h[-1]
            dcache = KVCache(svae.cfg.num_layers, cross=True)
            prefix = [BOS] + list(sent)
            targets = list(sent) + [EOS]
            for pos, (tok, tgt) in enumerate(zip(prefix, targets)):
                logits = decoder_logits([tok], omega_next, svae, offset=pos, cache=dcache)
                rc.decoder_forwards += 1
                rc.nll += float(nll_terms(logits.data[-1:], [tgt])[0])
                rc.nll_tokens += 1
        rc.kv_elements = cache.self_elements()
        rc.context_tokens = cache.length
    return rc


def replay_corpus(paragraphs, fn: Callable) -> ReplayCounts:
    total = ReplayCounts()
    for p in paragraphs:
        if len(p) >= 2:
            total += fn(p, )
    return total


# -- wall clock -------------------------------------------------------------------


@dataclass
class Throughput:
    tokens_per_second: float
    tokens: int
    backbone_forwards: int
    decoder_forwards: int
    seconds: float


def measure_throughput(generate_fn: Callable, prompts: Sequence, warmup: int = 3,
                       clock: Callable[[], float] = time.perf_counter) -> Throughput:
    """Run ``generate_fn(prompt)`` (returning a trace with ``counts()``) over prompts.

    ``warmup`` untimed calls on the first prompt come first. The counters are
    hardware independent; the token rate is informational.
    """
    if not prompts:
        raise ValueError("no prompts to measure")
    for _ in range(warmup):
        generate_fn(prompts[0])
    tokens = bb = dec = 0
    start = clock()
    for p in prompts:
        c = generate_fn(p).counts()
        tokens += c["tokens_out"]
        bb += c["backbone_forwards"]
        dec += c["decoder_steps"]
    seconds = clock() - start
    rate = tokens / seconds if seconds > 0 else float("inf")
    return Throughput(rate, tokens, bb, dec, seconds)


# -- memory -------------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryAccount:
    context_tokens: int
    sentences: int
    baseline_elements: int
    sllm_elements: int
    decoder_transient_elements: int

    @property
    def ratio(self) -> float:
        return self.sllm_elements / self.baseline_elements

    @property
    def baseline_per_token(self) -> float:
        return self.baseline_elements / self.context_tokens

    @property
    def sllm_per_token(self) -> float:
        return self.sllm_elements / self.context_tokens

    def kb_per_token(self, elements_per_token: float) -> float:
        return elements_per_token * BYTES_PER_ELEMENT / 1024


def kv_elements(positions: int, num_layers: int, hidden_size: int) -> int:
    """Cached keys plus values: ``positions * 2 * layers * hidden``."""
    return positions * 2 * num_layers * hidden_size


def account_memory(num_layers: int, hidden_size: int, context_tokens: int, sentences: int,
                   max_sentence_tokens: int = 0, decoder_layers: int = 0) -> MemoryAccount:
    """Closed-form backbone KV-cache sizes for the same context, token- vs sentence-level.

    The sentence decoder's cache lives only while one sentence is decoded; its
    worst case is reported separately and not folded into the ratio.
    """
    if context_tokens < 1 or sentences < 1:
        raise ValueError("context must contain at least one token and one sentence")
    transient = 0
    if decoder_layers:
        # self-attention over bos + tokens, plus the one cross-attention memory row
        transient = kv_elements(max_sentence_tokens + 1, decoder_layers, hidden_size) + kv_elements(
            1, decoder_layers, hidden_size)
    return MemoryAccount(
        context_tokens,
        sentences,
        kv_elements(context_tokens, num_layers, hidden_size),
        kv_elements(sentences, num_layers, hidden_size),
        transient,
    )


# -- reports --------------------------------------------------------------------------


@dataclass
class EvalReport:
    model_id: str
    corpus_id: str
    config_hash: str
    ppl: float
    tokens_per_second: float
    forwards_per_token: float
    kv_elements_per_context_token: float

    def __post_init__(self):
        if self.ppl < 1.0 - 1e-12:
            raise ValueError("perplexity below 1")
        if min(self.forwards_per_token, self.kv_elements_per_context_token) < 0:
            raise ValueError("negative counter")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def pct_delta(base: float, new: float) -> float:
    if base == 0:
        return 0.0 if new == 0 else math.inf
    return (new - base) / base * 100.0


@dataclass
class DeltaRow:
    metric: str
    baseline: float
    sllm: float
    delta_pct: float


class DeltaTable:
    """Baseline vs SLLM on PPL, throughput proxy (tokens per backbone forward) and KV memory."""

    def __init__(self, rows: list[DeltaRow], model_id: str = ""):
        self.rows = rows
        self.model_id = model_id

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "baseline", "sllm", "delta_pct"])
        for r in self.rows:
            w.writerow([r.metric, f"{r.baseline:.6g}", f"{r.sllm:.6g}", f"{r.delta_pct:+.1f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        head = ["Model"]
        cells = [self.model_id or "sllm"]
        for r in self.rows:
            head += [f"{r.metric} base", f"{r.metric} SLLM", "Δ"]
            cells += [f"{r.baseline:.4g}", f"{r.sllm:.4g}", f"{r.delta_pct:+.1f}%"]
        widths = [max(len(h), len(c)) for h, c in zip(head, cells)]
        line = lambda xs: " | ".join(x.rjust(w) for x, w in zip(xs, widths))
        return "\n".join([line(head), "-+-".join("-" * w for w in widths), line(cells)])


def compare(baseline: EvalReport, sllm: EvalReport) -> DeltaTable:
    if baseline.corpus_id != sllm.corpus_id:
        raise ValueError(f"reports are for different corpora: {baseline.corpus_id} vs {sllm.corpus_id}")

    def per_fwd(r: EvalReport) -> float:
        return 1.0 / r.forwards_per_token if r.forwards_per_token else math.inf

    rows = [
        DeltaRow("PPL", baseline.ppl, sllm.ppl, pct_delta(baseline.ppl, sllm.ppl)),
        DeltaRow("tok/fwd", per_fwd(baseline), per_fwd(sllm), pct_delta(per_fwd(baseline), per_fwd(sllm))),
        DeltaRow(
            "KV/tok",
            baseline.kv_elements_per_context_token,
            sllm.kv_elements_per_context_token,
            pct_delta(baseline.kv_elements_per_context_token, sllm.kv_elements_per_context_token),
        ),
    ]
    return DeltaTable(rows, sllm.model_id)


def mean_sentence_length(paragraphs: Iterable[Sequence[Sequence[int]]]) -> float:
    lengths = [len(s) for p in paragraphs for s in p]
    return sum(lengths) / len(lengths)
