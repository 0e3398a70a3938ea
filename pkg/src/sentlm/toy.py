"""Fixed synthetic benchmarks drawn from the toy grammar.

The sentence set feeds autoencoder experiments; the paragraph set feeds the
sentence-level model and the baseline. Both share one vocabulary made of the
grammar's words, so a model trained on one can be evaluated on the other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grammar import LEXICON, ToyGrammar
from .text import SPECIALS, Vocabulary, encode, encode_paragraph


@dataclass(frozen=True)
class ToySpec:
    train_size: int = 2000
    val_size: int = 200
    lexicon_size: int = 4
    closing_frac: float = 0.25
    min_sents: int = 2
    max_sents: int = 5
    seed: int = 0

    def grammar(self) -> ToyGrammar:
        lex = {cat: words[: self.lexicon_size] for cat, words in LEXICON.items()}
        return ToyGrammar(lexicon=lex)


@dataclass
class SentenceSet:
    grammar: ToyGrammar
    vocab: Vocabulary
    train_text: list[str]
    val_text: list[str]
    train: list[list[int]]
    val: list[list[int]]


@dataclass
class ParagraphSet:
    grammar: ToyGrammar
    vocab: Vocabulary
    train_text: list[str]
    val_text: list[str]
    train: list[list[list[int]]]
    val: list[list[list[int]]]

    def sentences(self) -> list[list[int]]:
        return [s for p in self.train for s in p]


def grammar_vocab(grammar: ToyGrammar) -> Vocabulary:
    return Vocabulary(list(SPECIALS) + grammar.words)


def sentence_set(spec: ToySpec = ToySpec()) -> SentenceSet:
    """``train_size`` sampled sentences and ``val_size`` distinct sentences absent from them."""
    g = spec.grammar()
    rng = np.random.default_rng(spec.seed)
    draw = lambda: g.sample_sentence(rng, closing=rng.random() < spec.closing_frac)
    train = [draw() for _ in range(spec.train_size)]
    seen = set(train)
    val: list[str] = []
    while len(val) < spec.val_size:
        s = draw()
        if s not in seen:
            seen.add(s)
            val.append(s)
    vocab = grammar_vocab(g)
    return SentenceSet(g, vocab, train, val, [encode(s, vocab) for s in train], [encode(s, vocab) for s in val])


def paragraph_set(spec: ToySpec = ToySpec()) -> ParagraphSet:
    """Paragraphs of ``min_sents``..``max_sents`` sentences; validation uses a separate stream."""
    g = spec.grammar()
    vocab = grammar_vocab(g)

    def sample(n, seed):
        rng = np.random.default_rng(seed)
        return [g.sample_paragraph(rng, spec.min_sents, spec.max_sents) for _ in range(n)]

    train = sample(spec.train_size, [spec.seed, 0])
    val = sample(spec.val_size, [spec.seed, 1])
    return ParagraphSet(g, vocab, train, val, [encode_paragraph(p, vocab) for p in train],
                        [encode_paragraph(p, vocab) for p in val])

