"""Multiple-choice VideoQA rows, question types, answer pools and manifests.

A manifest is UTF-8 JSON Lines, one row per line::

    {"row_id": "r1", "clip_id": "c1", "question": "what am I doing",
     "candidates": ["a", "b", "c", "d", "e"], "label": 2,
     "qtype": "Act1st", "split": "train", "provenance": ["original"]}

``provenance`` is optional on input and defaults to ``["original"]``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

NUM_CANDIDATES = 5


class QuestionType(str, enum.Enum):
    Act1st = "Act1st"
    Act3rd = "Act3rd"
    Obj1st = "Obj1st"
    Obj3rd = "Obj3rd"
    Who1st = "Who1st"
    Who3rd = "Who3rd"
    Cnt = "Cnt"
    Col = "Col"


# Per-type question counts of the public EgoVQA release.
EGOVQA_TYPE_COUNTS = {
    QuestionType.Act1st: 67,
    QuestionType.Act3rd: 108,
    QuestionType.Obj1st: 54,
    QuestionType.Obj3rd: 86,
    QuestionType.Who1st: 13,
    QuestionType.Who3rd: 63,
    QuestionType.Cnt: 64,
    QuestionType.Col: 31,
}

SPLITS = ("train", "test")
PROVENANCE_TAGS = ("original", "resampled", "mirrored", "hflipped")


class ManifestError(ValueError):
    """Malformed manifest line (bad JSON or missing/mistyped field)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class RowValidationError(ValueError):
    """A row violates a DatasetRow invariant."""

    def __init__(self, message: str, row_id: str | None = None, line: int | None = None):
        self.reason = message
        self.row_id = row_id
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if row_id is not None:
            where.append(f"row {row_id!r}")
        prefix = (", ".join(where) + ": ") if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class DatasetRow:
    row_id: str
    clip_id: str
    question: str
    candidates: tuple[str, ...]
    label: int
    qtype: QuestionType
    split: str = "train"
    provenance: tuple[str, ...] = ("original",)

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if not isinstance(self.qtype, QuestionType):
            try:
                object.__setattr__(self, "qtype", QuestionType(self.qtype))
            except ValueError:
                raise RowValidationError(f"unknown qtype {self.qtype!r}", self.row_id) from None
        self.validate()

    def validate(self) -> None:
        rid = self.row_id
        if not isinstance(rid, str) or not rid:
            raise RowValidationError("row_id must be a non-empty string", None)
        if not isinstance(self.clip_id, str) or not self.clip_id:
            raise RowValidationError("clip_id must be a non-empty string", rid)
        if not isinstance(self.question, str):
            raise RowValidationError("question must be text", rid)
        if len(self.candidates) != NUM_CANDIDATES:
            raise RowValidationError(f"candidates must have length {NUM_CANDIDATES}", rid)
        for c in self.candidates:
            if not isinstance(c, str) or not c.strip():
                raise RowValidationError("candidates must be non-empty text", rid)
        if len(set(self.candidates)) != NUM_CANDIDATES:
            raise RowValidationError("candidates must be pairwise distinct", rid)
        if isinstance(self.label, bool) or not isinstance(self.label, int):
            raise RowValidationError("label must be an integer", rid)
        if not 0 <= self.label < NUM_CANDIDATES:
            raise RowValidationError(f"label must be in [0, {NUM_CANDIDATES - 1}]", rid)
        if self.split not in SPLITS:
            raise RowValidationError(f"split must be one of {SPLITS}", rid)
        if not self.provenance:
            raise RowValidationError("provenance must be non-empty", rid)
        for tag in self.provenance:
            if tag not in PROVENANCE_TAGS:
                raise RowValidationError(f"unknown provenance tag {tag!r}", rid)

    @property
    def answer(self) -> str:
        return self.candidates[self.label]

    @property
    def is_original(self) -> bool:
        return tuple(self.provenance) == ("original",)

    def derive(self, tag: str, **changes) -> "DatasetRow":
        """Copy with ``changes`` applied and ``tag`` appended to provenance."""
        return replace(self, provenance=self.provenance + (tag,), **changes)

    def to_record(self) -> dict:
        return {
            "row_id": self.row_id,
            "clip_id": self.clip_id,
            "question": self.question,
            "candidates": list(self.candidates),
            "label": self.label,
            "qtype": self.qtype.value,
            "split": self.split,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DatasetRow":
        missing = [k for k in ("row_id", "clip_id", "question", "candidates", "label", "qtype", "split")
                   if k not in rec]
        if missing:
            raise ManifestError(f"missing field(s) {', '.join(missing)}")
        if not isinstance(rec["candidates"], list):
            raise ManifestError("candidates must be an array")
        return cls(
            row_id=rec["row_id"],
            clip_id=rec["clip_id"],
            question=rec["question"],
            candidates=tuple(rec["candidates"]),
            label=rec["label"],
            qtype=rec["qtype"],
            split=rec["split"],
            provenance=tuple(rec.get("provenance", ("original",))),
        )


@dataclass(frozen=True)
class AnswerPool:
    qtype: QuestionType
    answers: frozenset[str] = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.answers)

    def sorted(self) -> list[str]:
        return sorted(self.answers)


@dataclass(frozen=True)
class SplitSpec:
    split_index: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValueError(f"split {self.split_index}: ids in both train and test: {sorted(overlap)[:5]}")

    def apply(self, rows: Sequence[DatasetRow]) -> tuple[list[DatasetRow], list[DatasetRow]]:
        """Select (train, test) rows by id, relabelling the ``split`` field."""
        by_id = {r.row_id: r for r in rows}
        unknown = [i for i in self.train_ids + self.test_ids if i not in by_id]
        if unknown:
            raise KeyError(f"split {self.split_index}: unknown row ids {unknown[:5]}")
        train = [replace(by_id[i], split="train") for i in self.train_ids]
        test = [replace(by_id[i], split="test") for i in self.test_ids]
        return train, test


def parse_manifest_lines(lines: Iterable[str]) -> list[DatasetRow]:
    rows = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"invalid JSON ({e.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise ManifestError("record must be a JSON object", lineno)
        try:
            row = DatasetRow.from_record(rec)
        except ManifestError as e:
            raise ManifestError(str(e), lineno) from None
        except TypeError as e:
            raise ManifestError(f"malformed record ({e})", lineno) from None
        except RowValidationError as e:
            raise RowValidationError(e.reason, rec.get("row_id"), lineno) from None
        if row.row_id in seen:
            raise RowValidationError("duplicate row_id", row.row_id, lineno)
        seen.add(row.row_id)
        rows.append(row)
    return rows


def load_manifest(path: str | Path) -> list[DatasetRow]:
    with open(path, encoding="utf-8") as f:
        return parse_manifest_lines(f)


def dumps_row(row: DatasetRow) -> str:
    return json.dumps(row.to_record(), ensure_ascii=False, separators=(", ", ": "))


def save_manifest(rows: Iterable[DatasetRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(dumps_row(row))
            f.write("\n")


def build_pools(rows: Iterable[DatasetRow]) -> dict[QuestionType, AnswerPool]:
    """Union of candidate texts per question type, over train rows only."""
    acc: dict[QuestionType, set[str]] = {qt: set() for qt in QuestionType}
    for r in rows:
        if r.split != "train":
            continue
        acc[r.qtype].update(r.candidates)
    return {qt: AnswerPool(qt, frozenset(a)) for qt, a in acc.items()}


def label_position_histogram(rows: Iterable[DatasetRow], qtype: QuestionType) -> tuple[list[int], int]:
    counts = [0] * NUM_CANDIDATES
    for r in rows:
        if r.qtype == qtype:
            counts[r.label] += 1
    return counts, sum(counts)


def type_counts(rows: Iterable[DatasetRow]) -> dict[QuestionType, int]:
    counts = {qt: 0 for qt in QuestionType}
    for r in rows:
        counts[r.qtype] += 1
    return counts


def load_splits(path: str | Path) -> list[SplitSpec]:
    """Read ``{"splits": [{"split_index": 0, "train_ids": [...], "test_ids": [...]}, ...]}``."""
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    entries = data["splits"] if isinstance(data, dict) else data
    return [SplitSpec(int(e["split_index"]), e["train_ids"], e["test_ids"]) for e in entries]


def save_splits(splits: Sequence[SplitSpec], path: str | Path) -> None:
    data = {"splits": [{"split_index": s.split_index, "train_ids": list(s.train_ids),
                        "test_ids": list(s.test_ids)} for s in splits]}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=1)
        f.write("\n")


def manifest_splits(rows: Sequence[DatasetRow]) -> SplitSpec:
    """Single split taken from the rows' own ``split`` fields."""
    return SplitSpec(0, [r.row_id for r in rows if r.split == "train"],
                     [r.row_id for r in rows if r.split == "test"])


def random_splits(rows: Sequence[DatasetRow], k: int = 3, test_fraction: float = 0.25,
                  seed: int = 0) -> list[SplitSpec]:
    """Seeded random train/test partitions for synthetic desk runs.

    Not a reconstruction of any published partition.
    """
    from ._rng import derive_rng

    ids = [r.row_id for r in rows]
    n_test = max(1, int(round(test_fraction * len(ids))))
    out = []
    for i in range(k):
        perm = derive_rng(seed, "split", i).permutation(len(ids))
        test = sorted(int(j) for j in perm[:n_test])
        test_set = set(test)
        out.append(SplitSpec(i, [ids[j] for j in range(len(ids)) if j not in test_set],
                             [ids[j] for j in test]))
    return out
