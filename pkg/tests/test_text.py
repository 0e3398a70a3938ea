from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sentlm.errors import DataError, OverLengthError
from sentlm.text import (
    BOS,
    EOS,
    PAD,
    SPECIALS,
    UNK,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    encode_paragraph,
    load_paragraphs,
    segment,
    tokenize,
    vocab_from_counts,
)


def texts(spans):
    return [s.text for s in spans]


def test_segment_examples():
    assert texts(segment("What's your name?")) == ["What's your name?"]
    assert texts(segment("Hello, my dear friend")) == ["Hello,", " my dear friend"]
    assert texts(segment("abc")) == ["abc"]
    assert segment("") == []


def test_segment_splits_after_every_mark():
    assert texts(segment("Wait... what?! Yes.")) == ["Wait.", ".", ".", " what?", "!", " Yes."]


def test_segment_byte_offsets_use_utf8():
    spans = segment("Café, ok.")
    assert [(s.byte_start, s.byte_end) for s in spans] == [(0, 6), (6, 10)]


paragraph_text = st.text(alphabet=st.sampled_from(list("ab ,.?!é'\n")), min_size=1, max_size=60)


@given(paragraph_text)
def test_segment_reconstructs_and_spans_are_nonempty(p):
    spans = segment(p)
    assert "".join(texts(spans)) == p
    assert all(s.text for s in spans)
    raw = p.encode("utf-8")
    for s in spans:
        assert raw[s.byte_start : s.byte_end].decode("utf-8") == s.text
    assert spans[0].byte_start == 0 and spans[-1].byte_end == len(raw)


@given(st.lists(paragraph_text, min_size=1, max_size=3))
def test_segment_independent_of_neighbours(ps):
    for p in ps:
        assert segment(p) == segment(str(p))


def test_tokenize():
    assert tokenize("What's your name?") == ["what's", "your", "name", "?"]
    assert tokenize("Hello, my dear friend") == ["hello", ",", "my", "dear", "friend"]


def test_build_vocab_examples(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("a a b\n", encoding="utf-8")
    assert build_vocab([path], 6).token_of == list(SPECIALS) + ["a", "b"]
    path.write_text("b a\n", encoding="utf-8")
    v = build_vocab(path, 10)
    assert v.id_of["a"] < v.id_of["b"]


def test_build_vocab_truncates_and_oov_goes_to_unk(tmp_path):
    rng = np.random.default_rng(0)
    words = [f"w{int(i)}" for i in rng.zipf(1.3, size=1000) % 400]
    path = tmp_path / "c.txt"
    path.write_text(" ".join(words) + "\n", encoding="utf-8")
    v = build_vocab(path, 100)
    assert len(v) == 100
    counts = Counter(words)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    assert v.token_of[4:] == [w for w, _ in ranked[:96]]
    dropped = ranked[96][0]
    assert encode(dropped, v) == [UNK]


def test_build_vocab_errors(tmp_path):
    empty = tmp_path / "e.txt"
    empty.write_text("\n", encoding="utf-8")
    with pytest.raises(DataError):
        build_vocab(empty, 10)
    with pytest.raises(DataError):
        build_vocab(tmp_path / "missing.txt", 10)
    with pytest.raises(DataError):
        build_vocab(empty, 4)


def test_vocabulary_specials_and_bijection():
    v = vocab_from_counts(Counter({"x": 2, "y": 1}), 10)
    assert (v.bos, v.eos, v.pad, v.unk) == (BOS, EOS, PAD, UNK) == (0, 1, 2, 3)
    assert all(v.id_of[t] == i for i, t in enumerate(v.token_of))
    with pytest.raises(DataError):
        Vocabulary(["a", "b"])
    with pytest.raises(DataError):
        Vocabulary(list(SPECIALS) + ["a", "a"])


def test_vocabulary_file_round_trip(tmp_path):
    v = vocab_from_counts(Counter({"x": 2, "y": 1, ",": 1}), 10)
    v.save(tmp_path / "v.vocab")
    lines = (tmp_path / "v.vocab").read_text(encoding="utf-8").splitlines()
    assert lines[:4] == list(SPECIALS) and len(lines) == len(v)
    assert Vocabulary.load(tmp_path / "v.vocab").token_of == v.token_of


def test_encode_decode_examples():
    v = vocab_from_counts(Counter({"hello": 1, ",": 1}), 10)
    ids = encode("Hello,", v)
    assert ids == [v.id_of["hello"], v.id_of[","]]
    assert decode(ids, v) == "hello ,"
    assert decode(encode("zzz qqq", v), v) == "<unk> <unk>"
    with pytest.raises(DataError):
        decode([], v)
    with pytest.raises(DataError):
        decode([len(v)], v)
    with pytest.raises(DataError):
        encode("   ", v)


def test_over_length_is_rejected_not_truncated():
    v = vocab_from_counts(Counter({"a": 1}), 10)
    encode(" ".join(["a"] * 64), v)
    with pytest.raises(OverLengthError) as err:
        encode(" ".join(["a"] * 65), v)
    assert err.value.length == 65 and err.value.cap == 64


@given(st.lists(st.sampled_from(["the", "dog", "Runs", ",", "?", "zzz", "it's"]), min_size=1, max_size=12))
def test_canonical_round_trip_is_idempotent(words):
    v = vocab_from_counts(Counter({"the": 3, "dog": 2, "runs": 1, ",": 1, "?": 1, "it's": 1}), 20)
    once = decode(encode(" ".join(words), v), v)
    assert decode(encode(once, v), v) == once


def test_load_paragraphs(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text("One. Two.\n\nThree!\n", encoding="utf-8")
    assert list(load_paragraphs(path)) == ["One. Two.", "Three!"]


def test_load_paragraphs_splits_at_sentence_cap(tmp_path):
    path = tmp_path / "p.txt"
    path.write_text(" ".join(f"s{i}." for i in range(70)) + "\n", encoding="utf-8")
    chunks = list(load_paragraphs(path))
    assert [len(segment(c)) for c in chunks] == [64, 6]


def test_load_paragraphs_line_count(tmp_path):
    rng = np.random.default_rng(1)
    lines = ["" if rng.random() < 0.1 else f"line {i}." for i in range(1000)]
    path = tmp_path / "p.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    assert len(list(load_paragraphs(path))) == sum(1 for l in lines if l)


def test_load_paragraphs_rejects_bad_utf8(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_bytes(b"ok\n\xff\xfe\n")
    with pytest.raises(DataError):
        list(load_paragraphs(path))


def test_encode_paragraph_skips_whitespace_only_pieces():
    v = vocab_from_counts(Counter({"a": 1, "b": 1, ".": 2}), 10)
    assert encode_paragraph("a. b. ", v) == [[v.id_of["a"], v.id_of["."]], [v.id_of["b"], v.id_of["."]]]
