"""Byte-level tokenizer, document packing and synthetic corpora."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from lmulm.errors import ConfigError, RangeError

EOS = 256
VOCAB = 257


def tokenize(text: bytes | str) -> np.ndarray:
    """Byte ``b`` maps to id ``b``."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    return np.frombuffer(bytes(text), dtype=np.uint8).astype(np.int64)


def detokenize(ids: Iterable[int]) -> bytes:
    """Inverse of :func:`tokenize`; separator ids are dropped."""
    ids = np.asarray(list(ids) if not isinstance(ids, np.ndarray) else ids, dtype=np.int64)
    bad = (ids < 0) | (ids > EOS)
    if bad.any():
        raise RangeError(f"token id {int(ids[bad][0])} outside [0, {EOS}]")
    return ids[ids != EOS].astype(np.uint8).tobytes()


@dataclass
class PackedCorpus:
    """Fixed-length sequences cut from one separator-joined token stream.

    Attributes
    ----------
    tokens : ndarray, shape (S, n)
    mask : ndarray of bool, shape (S, n)
        False on trailing padding.
    """

    tokens: np.ndarray
    mask: np.ndarray

    @property
    def n(self) -> int:
        return self.tokens.shape[1]

    def __len__(self) -> int:
        return self.tokens.shape[0]

    def example(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(inputs, targets, loss_mask)`` for sequence ``i``.

        The target of the last position is the first token of the next
        sequence, since the stream is contiguous; it is masked when there is
        no next sequence or that token is padding.
        """
        x = self.tokens[i]
        nxt_tok = self.tokens[i + 1, 0] if i + 1 < len(self) else EOS
        nxt_ok = bool(self.mask[i + 1, 0]) if i + 1 < len(self) else False
        y = np.append(x[1:], nxt_tok)
        m = np.append(self.mask[i, 1:], nxt_ok) & self.mask[i]
        return x, y, m

    def split(self, val_fraction: float) -> tuple["PackedCorpus", "PackedCorpus"]:
        """Train/validation split by whole sequences, validation at the end."""
        if not 0 < val_fraction < 1 or len(self) < 2:
            raise ConfigError(f"cannot split {len(self)} sequences with fraction {val_fraction}")
        k = min(len(self) - 1, max(1, round(len(self) * val_fraction)))
        cut = len(self) - k
        return (PackedCorpus(self.tokens[:cut], self.mask[:cut]),
                PackedCorpus(self.tokens[cut:], self.mask[cut:]))


def pack_corpus(documents: Sequence[bytes | str | np.ndarray], n: int) -> PackedCorpus:
    """Join documents with the separator and chunk into length-``n`` rows.

    The final partial row is padded with separators that are masked out.
    """
    if n < 2:
        raise ConfigError(f"sequence length must be >= 2, got {n}")
    parts = []
    for k, doc in enumerate(documents):
        if k:
            parts.append(np.array([EOS], dtype=np.int64))
        parts.append(doc.astype(np.int64) if isinstance(doc, np.ndarray) else tokenize(doc))
    stream = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    rows = max(1, -(-stream.size // n))
    tokens = np.full(rows * n, EOS, dtype=np.int64)
    mask = np.zeros(rows * n, dtype=bool)
    tokens[: stream.size] = stream
    mask[: stream.size] = True
    return PackedCorpus(tokens.reshape(rows, n), mask.reshape(rows, n))


def read_documents(path: str, separator: bytes = b"\n\n") -> list[bytes]:
    """Split a file into documents on blank lines."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return [d for d in raw.split(separator) if d]


# Synthetic corpora.  Each returns one document as bytes.

def pattern_corpus(length: int, period: int = 64, seed: int = 0) -> bytes:
    """A fixed random printable pattern of ``period`` bytes, repeated."""
    rng = np.random.default_rng(seed)
    pat = rng.integers(33, 127, size=period, dtype=np.uint8)
    return np.resize(pat, length).tobytes()


def random_corpus(length: int, seed: int = 0) -> bytes:
    """Independent uniform bytes."""
    return np.random.default_rng(seed).integers(0, 256, size=length, dtype=np.uint8).tobytes()


def lag_corpus(length: int, lag: int = 64, alphabet: int = 16, seed: int = 0) -> bytes:
    """Blocks of ``lag`` fresh random symbols, each immediately repeated once.

    Every symbol in the second half of a ``2 * lag`` block equals the one
    ``lag`` positions earlier, while first halves are unpredictable.
    """
    rng = np.random.default_rng(seed)
    blocks = -(-length // (2 * lag))
    fresh = rng.integers(0, alphabet, size=(blocks, lag), dtype=np.uint8) + ord("a")
    return np.concatenate([fresh, fresh], axis=1).reshape(-1)[:length].tobytes()
