"""Sentence segmentation, word-level vocabulary and corpus reading."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError, OverLengthError

DELIMITERS = ",.?!"
MAX_SENTENCE_TOKENS = 64
MAX_PARAGRAPH_SENTENCES = 64

BOS, EOS, PAD, UNK = 0, 1, 2, 3
SPECIALS = ("<bos>", "<eos>", "<pad>", "<unk>")

_SPAN_RE = re.compile(r"[^,.?!]*[,.?!]|[^,.?!]+\Z", re.DOTALL)
# special tokens survive a decode/encode round trip as single tokens
_TOKEN_RE = re.compile(r"<(?:bos|eos|pad|unk)>|[^\W_]+(?:'[^\W_]+)*|[^\w\s]|_")


@dataclass(frozen=True)
class SentenceSpan:
    text: str
    byte_start: int
    byte_end: int


def segment(paragraph: str) -> list[SentenceSpan]:
    """Split after every ``, . ? !``.

    The delimiter stays with the span it closes and any whitespace after it
    opens the next span, so joining the span texts gives back ``paragraph``.
    A whitespace-only tail is folded into the last span.
    """
    if not paragraph:
        return []
    pieces = _SPAN_RE.findall(paragraph)
    if len(pieces) > 1 and not pieces[-1].strip():
        tail = pieces.pop()
        pieces[-1] += tail
    spans = []
    offset = 0
    for piece in pieces:
        n = len(piece.encode("utf-8"))
        spans.append(SentenceSpan(piece, offset, offset + n))
        offset += n
    return spans


def tokenize(text: str) -> list[str]:
    """Lowercased words (apostrophes kept inside words), special tokens and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise DataError("vocabulary must start with the four special tokens")
        self.token_of: list[str] = tokens
        self.id_of: dict[str, int] = {}
        for i, t in enumerate(tokens):
            if t in self.id_of:
                raise DataError(f"duplicate vocabulary entry {t!r}")
            self.id_of[t] = i

    bos, eos, pad, unk = BOS, EOS, PAD, UNK

    def __len__(self) -> int:
        return len(self.token_of)

    @property
    def size(self) -> int:
        return len(self.token_of)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.token_of == other.token_of

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.token_of) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            lines = Path(path).read_text(encoding="utf-8").split("\n")
        except (OSError, UnicodeDecodeError) as e:
            raise DataError(f"cannot read vocabulary {path}: {e}") from e
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def _iter_text_lines(paths) -> Iterator[str]:
    if isinstance(paths, (str, Path)):
        paths = [paths]
    for path in paths:
        try:
            with open(path, encoding="utf-8") as f:
                yield from f
        except (OSError, UnicodeDecodeError) as e:
            raise DataError(f"cannot read corpus {path}: {e}") from e


def build_vocab(corpus_paths, max_size: int) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically, specials at 0..3."""
    if max_size <= 4:
        raise DataError("max_size must exceed the 4 special tokens")
    counts = Counter()
    for line in _iter_text_lines(corpus_paths):
        counts.update(t for t in tokenize(line) if t not in SPECIALS)
    if not counts:
        raise DataError("corpus contains no tokens")
    return vocab_from_counts(counts, max_size)


def vocab_from_counts(counts: Counter, max_size: int) -> Vocabulary:
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(SPECIALS) + [t for t, _ in ranked[: max_size - 4]])


def encode(span: SentenceSpan | str, vocab: Vocabulary, max_tokens: int = MAX_SENTENCE_TOKENS) -> list[int]:
    text = span.text if isinstance(span, SentenceSpan) else span
    toks = tokenize(text)
    if not toks:
        raise DataError(f"sentence {text!r} has no tokens")
    if len(toks) > max_tokens:
        raise OverLengthError(len(toks), max_tokens)
    return [vocab.id_of.get(t, UNK) for t in toks]


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Canonical detokenisation: tokens joined by single spaces."""
    ids = list(ids)
    if not ids:
        raise DataError("cannot decode an empty token sequence")
    if min(ids) < 0 or max(ids) >= len(vocab):
        raise DataError(f"token id out of range for vocabulary of size {len(vocab)}")
    return " ".join(vocab.token_of[i] for i in ids)


def load_paragraphs(path, max_sentences: int = MAX_PARAGRAPH_SENTENCES) -> Iterator[str]:
    """Yield non-blank lines; paragraphs over the sentence cap come out in chunks."""
    for line in _iter_text_lines(path):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        spans = segment(line)
        if len(spans) <= max_sentences:
            yield line
            continue
        for i in range(0, len(spans), max_sentences):
            yield "".join(s.text for s in spans[i : i + max_sentences])


def encode_paragraph(
    paragraph: str, vocab: Vocabulary, max_tokens: int = MAX_SENTENCE_TOKENS
) -> list[list[int]]:
    """Encode every sentence of a paragraph; raises OverLengthError on the first long one."""
    return [encode(s, vocab, max_tokens) for s in segment(paragraph) if tokenize(s.text)]
