"""Seeded synthetic datasets for desk-scale runs and tests."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ._rng import derive_rng
from .dataset import NUM_CANDIDATES, DatasetRow, QuestionType
from .features import FeatureStore, synth_features
from .model import ModelConfig
from .text import EmbeddingTable, synth_embeddings, vocabulary
from .training import TrainConfig

# 30 tokens; "left"/"right" are included so flips have something to swap.
BASE_VOCAB = (
    "what", "is", "the", "man", "woman", "doing", "holding", "who", "am", "i",
    "on", "left", "right", "color", "of", "cup", "red", "blue", "green", "black",
    "white", "eating", "talking", "one", "two", "three", "phone", "book", "table", "hands",
)

QUESTION_WORDS = BASE_VOCAB[:15]
ANSWER_WORDS = BASE_VOCAB[15:]


def synth_rows(n: int, seed: int = 0, split: str = "train", prefix: str = "s",
               vocab: tuple[str, ...] = BASE_VOCAB, max_answer_len: int = 2) -> list[DatasetRow]:
    """Rows with random 3-5 word questions and 1..``max_answer_len`` word answers."""
    words = list(vocab)
    qtypes = list(QuestionType)
    rows = []
    for i in range(n):
        rng = derive_rng(seed, "synth-row", prefix, i)
        q = " ".join(words[j] for j in rng.choice(len(words), size=int(rng.integers(3, 6))))
        cands: list[str] = []
        while len(cands) < NUM_CANDIDATES:
            ln = int(rng.integers(1, max_answer_len + 1))
            a = " ".join(words[j] for j in rng.choice(len(words), size=ln, replace=False))
            if a not in cands:
                cands.append(a)
        rows.append(DatasetRow(
            row_id=f"{prefix}{i:05d}",
            clip_id=f"clip_{prefix}{i:05d}",
            question=q,
            candidates=tuple(cands),
            label=int(rng.integers(0, NUM_CANDIDATES)),
            qtype=qtypes[i % len(qtypes)],
            split=split,
        ))
    return rows


def synth_store(rows, n_frames: int = 4, dims: tuple[int, int] = (4, 4), seed: int = 0,
                root: str | Path | None = None) -> FeatureStore:
    """Synthetic features for every clip in ``rows``, in memory or written to ``root``."""
    store = FeatureStore(root, dims=dims, surrogate_seed=seed)
    for clip in sorted({r.clip_id for r in rows}):
        if clip not in store:
            store.add(synth_features(clip, n_frames, dims, seed), write=root is not None)
    return store


def synth_table(rows, dim: int, seed: int = 0, scale: float = 1.0) -> EmbeddingTable:
    texts = []
    for r in rows:
        texts.append(r.question)
        texts.extend(r.candidates)
    return synth_embeddings(sorted(vocabulary(texts)), dim, seed, scale=scale)


@dataclass(frozen=True)
class OverfitFixture:
    """Tiny memorisation task: 20 rows over the 30-token vocabulary."""
    n_rows: int = 20
    data_seed: int = 13
    n_frames: int = 8
    dims: tuple[int, int] = (4, 4)
    # entry std of the synthetic embeddings; at 1.0 the tiny model memorises too slowly for a 200-epoch budget
    embed_scale: float = 2.0
    model: ModelConfig = ModelConfig(E=8, D=8, H=16, h=8)
    train: TrainConfig = TrainConfig(learning_rate=1e-3, batch_size=8, epochs=200, seed=0)

    def build(self):
        rows = synth_rows(self.n_rows, seed=self.data_seed)
        store = synth_store(rows, n_frames=self.n_frames, dims=self.dims, seed=self.data_seed)
        table = synth_table(rows, self.model.E, seed=self.data_seed, scale=self.embed_scale)
        return rows, store, table
