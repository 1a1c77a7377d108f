"""Tokenization and word-embedding lookup for question/answer pairs."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._rng import derive_rng

REFERENCE_EMBED_DIM = 300

_PUNCT = re.compile("[" + re.escape(string.punctuation) + "]")


def tokenize(text: str) -> list[str]:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return _PUNCT.sub("", text.lower()).split()


class EmbeddingFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    vocab: dict[str, int]
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be V x E")
        if self.vocab and max(self.vocab.values()) >= self.vectors.shape[0]:
            raise ValueError("vocab index out of range")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __contains__(self, token: str) -> bool:
        return token in self.vocab

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        """Stack token vectors; out-of-vocabulary tokens get zeros."""
        out = np.zeros((len(tokens), self.dim), dtype=self.vectors.dtype)
        for i, t in enumerate(tokens):
            j = self.vocab.get(t)
            if j is not None:
                out[i] = self.vectors[j]
        return out


@dataclass(frozen=True, eq=False)
class EmbeddedSequence:
    tokens: tuple[str, ...]
    matrix: np.ndarray
    m: int
    n: int

    @property
    def length(self) -> int:
        return self.m + self.n


def embed_qa(q_tokens: Sequence[str], a_tokens: Sequence[str], table: EmbeddingTable) -> EmbeddedSequence:
    if not q_tokens:
        raise ValueError("empty question")
    if not a_tokens:
        raise ValueError("empty answer")
    tokens = tuple(q_tokens) + tuple(a_tokens)
    return EmbeddedSequence(tokens, table.lookup(tokens), len(q_tokens), len(a_tokens))


def load_embeddings(path: str | Path, dim: int | None = None, dtype=np.float32) -> EmbeddingTable:
    """Read the plain-text word-vector format: ``token v1 ... vE`` per line.

    ``dim`` defaults to the width of the first line.
    """
    vocab: dict[str, int] = {}
    vecs: list[list[float]] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if not line.strip():
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise EmbeddingFileError(f"line {lineno}: expected {dim} values for {token!r}, got {len(values)}")
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise EmbeddingFileError(f"line {lineno}: unreadable vector for {token!r}") from None
            if token in vocab:
                raise EmbeddingFileError(f"line {lineno}: duplicate token {token!r}")
            vocab[token] = len(vecs)
            vecs.append(vec)
    arr = np.asarray(vecs, dtype=dtype).reshape(len(vecs), dim or 0)
    return EmbeddingTable(vocab, arr)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    inv = sorted(table.vocab.items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8") as f:
        for tok, j in inv:
            f.write(tok + " " + " ".join(repr(float(v)) for v in table.vectors[j]) + "\n")


def synth_embeddings(tokens: Iterable[str], dim: int, seed: int = 0, dtype=np.float32,
                     scale: float = 1.0) -> EmbeddingTable:
    """Seeded random vectors for a vocabulary (desk-scale stand-in for GloVe).

    Entries are N(0, scale^2); each token's vector depends only on (seed, token).
    """
    vocab = {}
    for t in tokens:
        if t not in vocab:
            vocab[t] = len(vocab)
    vecs = np.zeros((len(vocab), dim), dtype=np.float64)
    for t, j in vocab.items():
        vecs[j] = derive_rng(seed, "embedding", t).normal(0.0, scale, size=dim)
    return EmbeddingTable(vocab, vecs.astype(dtype))


def vocabulary(texts: Iterable[str]) -> list[str]:
    seen: dict[str, None] = {}
    for t in texts:
        for tok in tokenize(t):
            seen.setdefault(tok, None)
    return list(seen)
