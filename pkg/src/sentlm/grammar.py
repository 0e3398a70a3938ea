"""A small probabilistic grammar used as a synthetic corpus, with a membership oracle.

Sentences look like ``the old dog sees a cat near the river.`` Paragraphs are
2-5 sentences; every sentence but the last ends with ``.``, the last with
``!`` so that the end of a paragraph is decidable from its final sentence.
"""

from __future__ import annotations

import functools
from pathlib import Path
from typing import Sequence

import numpy as np

from .text import tokenize

LEXICON = {
    "DET": ["the", "a", "every", "some", "this"],
    "N": [
        "dog", "cat", "bird", "child", "teacher", "farmer", "river", "hill", "house", "garden",
        "king", "queen", "boat", "tree", "horse", "doctor", "city", "road", "window", "friend",
        "baker", "stone", "lamp", "book", "song",
    ],
    "ADJ": ["old", "young", "big", "small", "red", "green", "quiet", "happy", "dark", "bright", "tall", "cold"],
    "VT": [
        "sees", "likes", "finds", "follows", "helps", "paints", "watches", "carries",
        "visits", "hears", "builds", "knows", "meets", "calls", "wants",
    ],
    "VI": ["sleeps", "runs", "sings", "waits", "smiles", "falls", "laughs", "stays"],
    "ADV": ["slowly", "quickly", "today", "again", "alone", "quietly"],
    "P": ["near", "under", "behind", "with", "beside", "across", "inside"],
}

# nonterminal -> [(weight, production)]
RULES = {
    "S": [(1.0, ("NP", "VP", "."))],
    "S!": [(1.0, ("NP", "VP", "!"))],
    "NP": [(0.75, ("DET", "NOM")), (0.25, ("DET", "NOM", "PP"))],
    "NOM": [(0.5, ("N",)), (0.35, ("ADJ", "N")), (0.15, ("ADJ", "ADJ", "N"))],
    "VP": [
        (0.45, ("VT", "NP")),
        (0.15, ("VT", "NP", "ADV")),
        (0.2, ("VI",)),
        (0.2, ("VI", "ADV")),
    ],
    "PP": [(1.0, ("P", "NP"))],
}


class ToyGrammar:
    """Sampler and recogniser for the grammar above.

    ``zipf`` > 0 draws words within each category with probability
    proportional to ``1 / rank**zipf`` instead of uniformly.
    """

    def __init__(self, min_len: int = 3, max_len: int = 20, lexicon: dict | None = None, zipf: float = 0.0):
        self.min_len = min_len
        self.max_len = max_len
        self.lexicon = lexicon or LEXICON
        self.zipf = zipf
        self._word_p = {}
        for cat, words in self.lexicon.items():
            w = 1.0 / np.arange(1, len(words) + 1) ** zipf
            self._word_p[cat] = w / w.sum()
        self._word_cats: dict[str, set[str]] = {}
        for cat, words in self.lexicon.items():
            for w in words:
                self._word_cats.setdefault(w, set()).add(cat)

    @property
    def words(self) -> list[str]:
        return sorted(self._word_cats) + [".", "!"]

    def _expand(self, sym: str, rng: np.random.Generator, depth: int) -> list[str]:
        if sym in self.lexicon:
            words = self.lexicon[sym]
            if self.zipf:
                return [words[rng.choice(len(words), p=self._word_p[sym])]]
            return [words[rng.integers(len(words))]]
        if sym not in RULES:
            return [sym]
        options = RULES[sym]
        if depth > 4:
            # stop nesting prepositional phrases
            options = [o for o in options if "PP" not in o[1]] or options
        w = np.array([o[0] for o in options])
        prod = options[rng.choice(len(options), p=w / w.sum())][1]
        out: list[str] = []
        for s in prod:
            out.extend(self._expand(s, rng, depth + 1))
        return out

    def sample_tokens(self, rng: np.random.Generator, closing: bool = False) -> list[str]:
        while True:
            toks = self._expand("S!" if closing else "S", rng, 0)
            if self.min_len <= len(toks) <= self.max_len:
                return toks

    def sample_sentence(self, rng: np.random.Generator, closing: bool = False) -> str:
        return render(self.sample_tokens(rng, closing))

    def sample_paragraph(self, rng: np.random.Generator, min_sents: int = 2, max_sents: int = 5) -> str:
        n = int(rng.integers(min_sents, max_sents + 1))
        sents = [self.sample_sentence(rng) for _ in range(n - 1)]
        sents.append(self.sample_sentence(rng, closing=True))
        return " ".join(sents)

    # -- membership -------------------------------------------------------

    def is_sentence(self, tokens: Sequence[str] | str) -> bool:
        """True when the tokens (or text) form an ``S`` or ``S!`` of the grammar."""
        if isinstance(tokens, str):
            tokens = tokenize(tokens)
        toks = tuple(tokens)
        if not toks:
            return False

        @functools.lru_cache(maxsize=None)
        def derives(sym: str, i: int, j: int) -> bool:
            if sym in self.lexicon:
                return j == i + 1 and sym in self._word_cats.get(toks[i], ())
            if sym not in RULES:
                return j == i + 1 and toks[i] == sym
            return any(seq(prod, 0, i, j) for _, prod in RULES[sym])

        @functools.lru_cache(maxsize=None)
        def seq(prod: tuple, k: int, i: int, j: int) -> bool:
            if k == len(prod):
                return i == j
            rest = len(prod) - k - 1
            # every symbol covers at least one token
            for m in range(i + 1, j - rest + 1):
                if derives(prod[k], i, m) and seq(prod, k + 1, m, j):
                    return True
            return False

        n = len(toks)
        return derives("S", 0, n) or derives("S!", 0, n)

    def is_closing(self, tokens: Sequence[str] | str) -> bool:
        if isinstance(tokens, str):
            tokens = tokenize(tokens)
        return bool(tokens) and tokens[-1] == "!" and self.is_sentence(tokens)


def render(tokens: Sequence[str]) -> str:
    """Surface text with the final mark attached to the last word."""
    body = " ".join(tokens[:-1])
    return body + tokens[-1]


def sentence_corpus(n: int, seed: int = 0, closing_frac: float = 0.25) -> list[str]:
    g = ToyGrammar()
    rng = np.random.default_rng(seed)
    return [g.sample_sentence(rng, closing=rng.random() < closing_frac) for _ in range(n)]


def paragraph_corpus(n: int, seed: int = 0, min_sents: int = 2, max_sents: int = 5) -> list[str]:
    g = ToyGrammar()
    rng = np.random.default_rng(seed)
    return [g.sample_paragraph(rng, min_sents, max_sents) for _ in range(n)]


def write_lines(path, lines: Sequence[str]) -> Path:
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
