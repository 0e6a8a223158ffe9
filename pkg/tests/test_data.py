import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lmulm import data
from lmulm.errors import ConfigError, RangeError


def test_tokenize_bytes():
    np.testing.assert_array_equal(data.tokenize(b"ab"), [97, 98])
    assert data.VOCAB == 257 and data.EOS == 256


@given(st.binary(max_size=300))
def test_round_trip(raw):
    assert data.detokenize(data.tokenize(raw)) == raw


def test_detokenize_drops_separator_and_checks_range():
    assert data.detokenize([104, 256, 105]) == b"hi"
    for bad in ([257], [-1]):
        with pytest.raises(RangeError):
            data.detokenize(bad)


def test_pack_two_short_docs():
    c = data.pack_corpus(["a", "b"], 4)
    np.testing.assert_array_equal(c.tokens, [[97, 256, 98, 256]])
    np.testing.assert_array_equal(c.mask, [[True, True, True, False]])


def test_pack_rejects_short_rows():
    with pytest.raises(ConfigError):
        data.pack_corpus(["abc"], 1)


def test_long_doc_split_in_order():
    doc = bytes(range(10))
    c = data.pack_corpus([doc], 4)
    assert c.tokens.shape == (3, 4)
    assert data.detokenize(c.tokens[c.mask]) == doc


@given(st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=8), st.integers(2, 32))
def test_pack_conserves_tokens(docs, n):
    c = data.pack_corpus(docs, n)
    kept = c.tokens[c.mask]
    assert kept.size == sum(map(len, docs)) + len(docs) - 1
    assert (c.tokens[~c.mask] == data.EOS).all()
    pieces = np.split(kept, np.flatnonzero(kept == data.EOS))
    assert [data.detokenize(p) for p in pieces] == docs


@given(st.lists(st.binary(min_size=1, max_size=40), min_size=1, max_size=6), st.integers(2, 16))
def test_examples_shift_and_mask(docs, n):
    c = data.pack_corpus(docs, n)
    stream = c.tokens.reshape(-1)
    valid = c.mask.reshape(-1)
    for i in range(len(c)):
        x, y, m = c.example(i)
        np.testing.assert_array_equal(x, c.tokens[i])
        for t in range(n):
            k = i * n + t
            has_next = k + 1 < stream.size and valid[k + 1]
            assert m[t] == (valid[k] and has_next)
            if m[t]:
                assert y[t] == stream[k + 1]


def test_split_keeps_order():
    c = data.pack_corpus([data.pattern_corpus(1000)], 16)
    tr, va = c.split(0.1)
    assert len(tr) + len(va) == len(c) and len(va) == 6
    np.testing.assert_array_equal(va.tokens, c.tokens[-6:])
    with pytest.raises(ConfigError):
        c.split(0.0)


def test_read_documents(tmp_path):
    p = tmp_path / "docs.txt"
    p.write_bytes(b"first doc\n\nsecond\n\n\n\nthird")
    assert data.read_documents(str(p)) == [b"first doc", b"second", b"third"]


def test_pattern_corpus_periodic():
    raw = np.frombuffer(data.pattern_corpus(500, period=64), np.uint8)
    np.testing.assert_array_equal(raw[64:], raw[:-64])
    assert len(set(raw[:64])) > 20


def test_random_corpus_spread():
    raw = np.frombuffer(data.random_corpus(20000), np.uint8)
    assert len(np.unique(raw)) == 256


def test_lag_corpus_structure():
    lag = 8
    raw = np.frombuffer(data.lag_corpus(100, lag=lag, alphabet=4), np.uint8)
    assert len(raw) == 100 and set(raw) <= set(range(97, 101))
    for b in range(0, 96, 2 * lag):
        np.testing.assert_array_equal(raw[b + lag: b + 2 * lag], raw[b: b + lag])
