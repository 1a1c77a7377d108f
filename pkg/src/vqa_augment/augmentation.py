"""Training-set augmentation: horizontal flip, answer resampling, mirroring.

Stages run in the order flip -> resample -> mirror. Each enabled stage keeps
its input rows and appends its outputs right after each source row, so the
output order is a pure function of the input order and the plan seed.
Random draws use a PCG64 stream keyed by ``(seed, stage, row_id)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._rng import derive_rng
from .dataset import NUM_CANDIDATES, AnswerPool, DatasetRow, QuestionType
from .features import HFLIP_SUFFIX, ClipFeatures, FeatureStore, surrogate_flip

DEFAULT_LEXICON: tuple[tuple[str, str], ...] = (("left", "right"),)


@dataclass(frozen=True)
class AugmentationPlan:
    enable_hflip: bool = False
    enable_resample: bool = False
    resample_copies: int = 1
    enable_mirror: bool = False
    seed: int = 0
    lr_lexicon: tuple[tuple[str, str], ...] = DEFAULT_LEXICON

    def __post_init__(self):
        object.__setattr__(self, "lr_lexicon", tuple(tuple(p) for p in self.lr_lexicon))
        if self.resample_copies < 0:
            raise ValueError("resample_copies must be >= 0")
        validate_lexicon(self.lr_lexicon)

    @property
    def copies(self) -> int:
        return self.resample_copies if self.enable_resample else 0

    @property
    def label(self) -> str:
        parts = []
        if self.enable_hflip:
            parts.append("hflip")
        if self.enable_resample:
            parts.append("resample")
        if self.enable_mirror:
            parts.append("mirror")
        return "+".join(parts) or "baseline"

    def to_dict(self) -> dict:
        return {
            "enable_hflip": self.enable_hflip,
            "enable_resample": self.enable_resample,
            "resample_copies": self.resample_copies,
            "enable_mirror": self.enable_mirror,
            "seed": self.seed,
            "lr_lexicon": [list(p) for p in self.lr_lexicon],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AugmentationPlan":
        known = {"enable_hflip", "enable_resample", "resample_copies", "enable_mirror", "seed", "lr_lexicon"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown plan fields: {sorted(unknown)}")
        kw = dict(d)
        if "lr_lexicon" in kw:
            kw["lr_lexicon"] = tuple(tuple(p) for p in kw["lr_lexicon"])
        return cls(**kw)


class PlanError(ValueError):
    pass


def load_plan(path: str | Path) -> AugmentationPlan:
    """Read a plan from TOML: flat keys or a ``[plan]`` table."""
    from ._toml import load_toml

    try:
        data = load_toml(path)
        return AugmentationPlan.from_dict(data.get("plan", data))
    except (ValueError, TypeError) as e:
        raise PlanError(f"{path}: {e}") from e


def validate_lexicon(lexicon: Sequence[tuple[str, str]]) -> None:
    seen: set[str] = set()
    for pair in lexicon:
        if len(pair) != 2:
            raise ValueError(f"lexicon entry {pair!r} is not a pair")
        a, b = (w.lower() for w in pair)
        if a == b:
            raise ValueError(f"lexicon pair {pair!r} swaps a word with itself")
        for w in (a, b):
            if not re.fullmatch(r"\w+", w):
                raise ValueError(f"lexicon token {w!r} must be a single word")
            if w in seen:
                raise ValueError(f"lexicon token {w!r} appears in two pairs")
            seen.add(w)


# The seven augmentation settings compared in the reference results table,
# in its row order.
TABLE2_PLANS: tuple[tuple[str, AugmentationPlan], ...] = (
    ("ST-VQA", AugmentationPlan()),
    ("+ mirroring", AugmentationPlan(enable_mirror=True)),
    ("+ resampling", AugmentationPlan(enable_resample=True)),
    ("  + mirroring", AugmentationPlan(enable_resample=True, enable_mirror=True)),
    ("+ horizontal-flip", AugmentationPlan(enable_hflip=True)),
    ("  + resampling", AugmentationPlan(enable_hflip=True, enable_resample=True)),
    ("    + mirroring", AugmentationPlan(enable_hflip=True, enable_resample=True, enable_mirror=True)),
)


class AugmentationError(ValueError):
    pass


@dataclass
class AugmentationReport:
    input_rows: int = 0
    stages: list[dict] = field(default_factory=list)
    skips: list[dict] = field(default_factory=list)
    surrogate_flips: list[str] = field(default_factory=list)

    @property
    def output_rows(self) -> int:
        return self.stages[-1]["rows_out"] if self.stages else self.input_rows

    def to_dict(self) -> dict:
        return {
            "input_rows": self.input_rows,
            "output_rows": self.output_rows,
            "stages": self.stages,
            "skips": self.skips,
            "hflip_features": {
                "surrogate_clips": sorted(self.surrogate_flips),
                "note": "column-pairing surrogate, not features of flipped frames" if self.surrogate_flips else "",
            },
        }


# --- horizontal flip -------------------------------------------------------

def _lexicon_map(lexicon: Sequence[tuple[str, str]]) -> dict[str, str]:
    m = {}
    for a, b in lexicon:
        m[a.lower()] = b.lower()
        m[b.lower()] = a.lower()
    return m


def _recase(src: str, word: str) -> str:
    if src.isupper() and len(src) > 1:
        return word.upper()
    if src[0].isupper():
        return word[0].upper() + word[1:]
    return word


def hflip_text(text: str, lexicon: Sequence[tuple[str, str]] = DEFAULT_LEXICON) -> str:
    """Swap whole-word lexicon tokens, keeping lower/Capitalized/UPPER casing.

    Tokens in other mixed casings ("lEFT") are left alone so the swap stays
    an involution.
    """
    mapping = _lexicon_map(lexicon)
    if not mapping:
        return text
    pattern = re.compile(r"\b(" + "|".join(re.escape(w) for w in sorted(mapping, key=len, reverse=True))
                         + r")\b", re.IGNORECASE)

    def sub(m: re.Match) -> str:
        src = m.group(0)
        low = src.lower()
        if src not in (low, low.upper(), low[0].upper() + low[1:]):
            return src
        return _recase(src, mapping[low])

    return pattern.sub(sub, text)


def hflip_row(row: DatasetRow, features: ClipFeatures | FeatureStore,
              lexicon: Sequence[tuple[str, str]] = DEFAULT_LEXICON) -> tuple[DatasetRow, ClipFeatures]:
    """Flip the clip and swap left/right words in question and candidates.

    ``features`` is a store, precomputed ``<clip_id>__hflip`` features, or the
    original clip's features (which then go through the column-pairing surrogate).
    """
    new_clip = row.clip_id + HFLIP_SUFFIX
    if isinstance(features, FeatureStore):
        flipped = features.flipped(row.clip_id)
    else:
        if features.clip_id not in (row.clip_id, new_clip):
            raise AugmentationError(f"features {features.clip_id!r} do not belong to clip {row.clip_id!r}")
        # Original-clip features get the same surrogate a default store would apply.
        flipped = features if features.clip_id == new_clip else surrogate_flip(features, 0, new_clip)
    candidates = tuple(hflip_text(c, lexicon) for c in row.candidates)
    out = row.derive(
        "hflipped",
        row_id=row.row_id + "__hflip",
        clip_id=new_clip,
        question=hflip_text(row.question, lexicon),
        candidates=candidates,
    )
    if flipped.clip_id != new_clip:
        flipped = ClipFeatures(new_clip, flipped.appearance, flipped.motion)
    return out, flipped


# --- mirroring -------------------------------------------------------------

def mirror_row(row: DatasetRow) -> DatasetRow:
    return row.derive(
        "mirrored",
        row_id=row.row_id + "__mir",
        candidates=tuple(reversed(row.candidates)),
        label=NUM_CANDIDATES - 1 - row.label,
    )


# --- resampling ------------------------------------------------------------

def resample_row(row: DatasetRow, pool: AnswerPool, copies: int, rng: np.random.Generator,
                 skips: list | None = None) -> list[DatasetRow]:
    """New rows keeping the correct answer and its position, with 4 fresh wrong answers.

    Wrong answers are drawn without replacement from the same-type pool minus
    the correct answer. A drawn set equal to the source row's wrong set, or
    to one already produced, is rejected, so fewer than ``copies`` rows come
    back when the pool cannot supply enough distinct sets.
    """
    if copies <= 0:
        return []
    if row.split != "train":
        raise AugmentationError(f"row {row.row_id!r}: only train rows can be resampled")
    if pool.qtype != row.qtype:
        raise AugmentationError(f"row {row.row_id!r}: pool is for {pool.qtype.value}, row is {row.qtype.value}")
    k = NUM_CANDIDATES - 1
    correct = row.answer
    eligible = [a for a in pool.sorted() if a != correct]
    original_wrong = frozenset(c for i, c in enumerate(row.candidates) if i != row.label)

    available = math.comb(len(eligible), k)
    if original_wrong <= set(eligible):
        available -= 1
    target = min(copies, available)
    if target < copies:
        reason = "pool too small" if len(eligible) < k else "not enough distinct wrong-answer sets"
        if skips is not None:
            skips.append({"row_id": row.row_id, "stage": "resample", "reason": reason,
                          "requested": copies, "produced": target, "eligible_answers": len(eligible)})
    if target <= 0:
        return []

    used = {original_wrong}
    out = []
    attempts = 0
    max_attempts = 1000 + 100 * target
    while len(out) < target and attempts < max_attempts:
        attempts += 1
        draw = [eligible[i] for i in rng.choice(len(eligible), size=k, replace=False)]
        key = frozenset(draw)
        if key in used:
            continue
        used.add(key)
        cands = list(draw)
        cands.insert(row.label, correct)
        out.append(row.derive("resampled", row_id=f"{row.row_id}__rs{len(out)}", candidates=tuple(cands)))
    if len(out) < target and skips is not None:
        skips.append({"row_id": row.row_id, "stage": "resample", "reason": "sampling attempts exhausted",
                      "requested": copies, "produced": len(out), "eligible_answers": len(eligible)})
    return out


# --- pipeline --------------------------------------------------------------

def augment_split(rows: Sequence[DatasetRow], pools: Mapping[QuestionType, AnswerPool],
                  feature_store: FeatureStore | None, plan: AugmentationPlan
                  ) -> tuple[list[DatasetRow], AugmentationReport]:
    """Apply the enabled stages in order flip -> resample -> mirror.

    Flipped clip features are added to ``feature_store`` in memory; the
    caller decides whether to persist them.
    """
    test_rows = [r.row_id for r in rows if r.split != "train"]
    if test_rows:
        raise AugmentationError(f"refusing to augment test-split rows: {test_rows[:5]}")
    report = AugmentationReport(input_rows=len(rows))
    current = list(rows)

    if plan.enable_hflip:
        if feature_store is None:
            raise AugmentationError("horizontal flip needs a feature store")
        out = []
        surrogates = set()
        for r in current:
            out.append(r)
            fr, ff = hflip_row(r, feature_store, plan.lr_lexicon)
            if ff.clip_id not in feature_store:
                feature_store.add(ff)
            if feature_store.is_surrogate(ff.clip_id):
                surrogates.add(r.clip_id)
            out.append(fr)
        report.surrogate_flips = sorted(surrogates)
        report.stages.append({"stage": "hflip", "rows_in": len(current), "added": len(out) - len(current),
                              "rows_out": len(out)})
        current = out

    if plan.enable_resample and plan.resample_copies > 0:
        out = []
        for r in current:
            out.append(r)
            rng = derive_rng(plan.seed, "resample", r.row_id)
            out.extend(resample_row(r, pools[r.qtype], plan.resample_copies, rng, report.skips))
        report.stages.append({"stage": "resample", "rows_in": len(current), "added": len(out) - len(current),
                              "rows_out": len(out), "copies": plan.resample_copies})
        current = out

    if plan.enable_mirror:
        out = []
        for r in current:
            out.append(r)
            out.append(mirror_row(r))
        report.stages.append({"stage": "mirror", "rows_in": len(current), "added": len(out) - len(current),
                              "rows_out": len(out)})
        current = out

    return current, report
