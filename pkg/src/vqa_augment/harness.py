"""Evaluation, per-question-type reports and the augmentation x split matrix."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .augmentation import TABLE2_PLANS, AugmentationPlan, augment_split
from .dataset import (NUM_CANDIDATES, DatasetRow, QuestionType, SplitSpec, build_pools,
                      label_position_histogram)
from .features import FeatureStore
from .model import ModelConfig, Params, predict, row_inputs, score_inputs
from .text import EmbeddingTable
from .training import TrainConfig, train

log = logging.getLogger(__name__)

BIAS_THRESHOLD = 0.25


class ProtocolError(ValueError):
    pass


@dataclass
class EvalReport:
    split_index: int
    overall_accuracy: float
    per_type_accuracy: dict[QuestionType, float | None]
    counts: dict[QuestionType, tuple[int, int]]
    augmentation_plan: dict | None = None

    @property
    def correct(self) -> int:
        return sum(c for c, _ in self.counts.values())

    @property
    def total(self) -> int:
        return sum(t for _, t in self.counts.values())

    def to_dict(self) -> dict:
        return {
            "split_index": self.split_index,
            "overall_accuracy": self.overall_accuracy,
            "per_type_accuracy": {q.value: a for q, a in self.per_type_accuracy.items()},
            "counts": {q.value: list(c) for q, c in self.counts.items()},
            "augmentation_plan": self.augmentation_plan,
        }


def _pct(correct: int, total: int) -> float | None:
    return 100.0 * correct / total if total else None


def report_from_predictions(rows: Sequence[DatasetRow], preds: Sequence[int], split_index: int = 0,
                            plan: AugmentationPlan | None = None) -> EvalReport:
    counts = {q: [0, 0] for q in QuestionType}
    for r, p in zip(rows, preds):
        counts[r.qtype][1] += 1
        counts[r.qtype][0] += int(p == r.label)
    counts_t = {q: (c, t) for q, (c, t) in counts.items()}
    correct = sum(c for c, _ in counts_t.values())
    overall = _pct(correct, len(rows))
    return EvalReport(
        split_index=split_index,
        overall_accuracy=overall if overall is not None else float("nan"),
        per_type_accuracy={q: _pct(c, t) for q, (c, t) in counts_t.items()},
        counts=counts_t,
        augmentation_plan=plan.to_dict() if plan is not None else None,
    )


def evaluate(params: Params, rows: Sequence[DatasetRow], store: FeatureStore, table: EmbeddingTable,
             config: ModelConfig, split_index: int = 0, plan: AugmentationPlan | None = None) -> EvalReport:
    """Accuracy of argmax-over-candidates predictions, overall and per type."""
    for r in rows:
        if r.split != "test":
            raise ProtocolError(f"row {r.row_id!r} is not a test row")
        if not r.is_original:
            raise ProtocolError(f"row {r.row_id!r} is augmented ({'/'.join(r.provenance)}); "
                                "test rows must be original")
    dtype = params["W_a"].dtype
    preds = [predict(score_inputs(row_inputs(r, store, table, config, dtype), params)) for r in rows]
    return report_from_predictions(rows, preds, split_index, plan)


# --- matrix -------------------------------------------------------------------

@dataclass
class MatrixResult:
    plans: list[tuple[str, AugmentationPlan]]
    split_indices: list[int]
    cells: dict[tuple[str, int], EvalReport] = field(default_factory=dict)
    failures: dict[tuple[str, int], str] = field(default_factory=dict)
    augmentation: dict[tuple[str, int], dict] = field(default_factory=dict)

    def accuracy(self, label: str, split_index: int) -> float | None:
        rep = self.cells.get((label, split_index))
        return rep.overall_accuracy if rep else None

    def average(self, label: str) -> float | None:
        vals = [self.accuracy(label, s) for s in self.split_indices]
        vals = [v for v in vals if v is not None]
        return split_average(vals) if vals else None

    def pooled_type_accuracy(self, label: str) -> dict[QuestionType, float | None]:
        """Per-type accuracy with counts pooled over all splits."""
        out = {}
        for q in QuestionType:
            c = t = 0
            for s in self.split_indices:
                rep = self.cells.get((label, s))
                if rep:
                    c += rep.counts[q][0]
                    t += rep.counts[q][1]
            out[q] = _pct(c, t)
        return out

    def table2_rows(self) -> list[list]:
        out = []
        for label, _ in self.plans:
            out.append([label] + [self.accuracy(label, s) for s in self.split_indices] + [self.average(label)])
        return out

    def table3_rows(self) -> list[list]:
        out = []
        for label, _ in self.plans:
            acc = self.pooled_type_accuracy(label)
            out.append([label] + [acc[q] for q in QuestionType])
        return out

    def table2_text(self) -> str:
        header = ["Augmentation"] + [str(s) for s in self.split_indices] + ["Avg"]
        return _aligned(header, self.table2_rows(), "Accuracy (%) on split")

    def table3_text(self) -> str:
        header = ["Augmentation"] + [q.value for q in QuestionType]
        return _aligned(header, self.table3_rows(), "Question type accuracy (%)")

    def table2_csv(self) -> str:
        header = ["augmentation", "plan"] + [f"split_{s}" for s in self.split_indices] + ["avg"]
        return _csv(header, self._with_plan(self.table2_rows()))

    def table3_csv(self) -> str:
        return _csv(["augmentation", "plan"] + [q.value for q in QuestionType],
                    self._with_plan(self.table3_rows()))

    def _with_plan(self, rows: list[list]) -> list[list]:
        # indented row labels repeat once stripped; the plan label keeps CSV rows unambiguous
        return [[r[0].strip(), plan.label] + r[1:] for r, (_, plan) in zip(rows, self.plans)]


def split_average(values: Sequence[float]) -> float:
    """Plain arithmetic mean over splits (not weighted by split size)."""
    return float(sum(values) / len(values))


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


def _aligned(header: list[str], rows: list[list], title: str) -> str:
    cells = [header] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = [" " * (widths[0] + 2) + title]
    for j, r in enumerate(cells):
        first = r[0].ljust(widths[0])
        rest = "  ".join(v.rjust(w) for v, w in zip(r[1:], widths[1:]))
        lines.append(first + "  " + rest)
        if j == 0:
            lines.append("-" * len(lines[-1]))
    return "\n".join(lines) + "\n"


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else "" if v is None else f"{v:.2f}" for v in r])
    return buf.getvalue()


def run_matrix(rows: Sequence[DatasetRow], splits: Sequence[SplitSpec],
               plans: Sequence[tuple[str, AugmentationPlan]] = TABLE2_PLANS,
               model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None,
               store: FeatureStore | None = None, table: EmbeddingTable | None = None) -> MatrixResult:
    """Augment, train from a fresh seeded init, and evaluate for every (plan, split).

    A failing cell is recorded in ``failures`` and the remaining cells still run.
    """
    if not plans:
        raise ValueError("no augmentation plans")
    if model_cfg is None or train_cfg is None or store is None or table is None:
        raise ValueError("run_matrix needs model_cfg, train_cfg, store and table")
    result = MatrixResult(list(plans), [s.split_index for s in splits])
    for split in splits:
        train_rows, test_rows = split.apply(rows)
        pools = build_pools(train_rows)
        for label, plan in plans:
            key = (label, split.split_index)
            try:
                aug_rows, aug_report = augment_split(train_rows, pools, store, plan)
                result.augmentation[key] = aug_report.to_dict()
                res = train(aug_rows, store, table, model_cfg, train_cfg, plan=plan, test_rows=test_rows)
                result.cells[key] = evaluate(res.params, test_rows, store, table, model_cfg,
                                             split.split_index, plan)
                log.info("%s split %d: %.2f%%", label.strip(), split.split_index,
                         result.cells[key].overall_accuracy)
            except Exception as e:  # noqa: BLE001 - keep partial results
                log.error("cell %s / split %d failed: %s", label.strip(), split.split_index, e)
                result.failures[key] = f"{type(e).__name__}: {e}"
    return result


# --- label-position bias ----------------------------------------------------

@dataclass
class TypeBias:
    qtype: QuestionType
    counts: list[int]
    total: int
    shares: list[float | None]
    flagged: list[int]


def bias_report(rows: Sequence[DatasetRow], threshold: float = BIAS_THRESHOLD) -> dict[QuestionType, TypeBias]:
    """Label-position histograms per type; positions above ``threshold`` share are flagged."""
    out = {}
    for q in QuestionType:
        counts, total = label_position_histogram(rows, q)
        shares = [100.0 * c / total if total else None for c in counts]
        flagged = [i for i, c in enumerate(counts) if total and c / total > threshold]
        out[q] = TypeBias(q, counts, total, shares, flagged)
    return out


def bias_text(report: dict[QuestionType, TypeBias]) -> str:
    header = ["Type"] + [f"pos{i}" for i in range(NUM_CANDIDATES)] + ["total", "flags"]
    rows = []
    for q, b in report.items():
        cells = [f"{c} ({s:.2f}%)" if s is not None else "0" for c, s in zip(b.counts, b.shares)]
        rows.append([q.value] + cells + [str(b.total), ",".join(map(str, b.flagged)) or "-"])
    return _aligned(header, rows, "Correct-answer position counts")

