"""Pairwise hinge loss, Adam, and the epoch/batch training loop.

Adam update for each parameter ``p`` with gradient ``g`` at step ``t``::

    m = b1 m + (1 - b1) g
    v = b2 v + (1 - b2) g^2
    p = p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from ._rng import derive_rng
from .dataset import DatasetRow
from .features import FeatureStore
from .model import (ModelConfig, Params, RowInputs, as_leaves, forward_scores_t, init_params, predict,
                    row_inputs, score_inputs)
from .text import EmbeddingTable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


# --- loss -------------------------------------------------------------------

def hinge_loss(scores: Sequence[float], r: int) -> float:
    """sum over c != r of max(0, 1 + s_c - s_r)."""
    s = np.asarray(scores, dtype=np.float64)
    if not 0 <= r < len(s):
        raise ValueError(f"right-answer index {r} out of range")
    m = np.maximum(0.0, 1.0 + s - s[r])
    m[r] = 0.0
    return float(m.sum())


def hinge_loss_grad(scores: Sequence[float], r: int) -> np.ndarray:
    """d loss / d scores; the subgradient at a hinge kink is 0."""
    s = np.asarray(scores, dtype=np.float64)
    active = (1.0 + s - s[r]) > 0
    active[r] = False
    g = active.astype(np.float64)
    g[r] = -g.sum()
    return g


def hinge_loss_t(scores: ad.Tensor, r: int) -> ad.Tensor:
    """Tensor version over a C x 1 score column; returns 1 x 1."""
    C = scores.shape[0]
    margins = ad.relu(1.0 + scores - ad.rows(scores, r, r + 1))
    mask = np.ones((C, 1), dtype=scores.data.dtype)
    mask[r] = 0.0
    return ad.sum_(margins * mask)


# --- Adam -------------------------------------------------------------------

class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, grads: Params, state: AdamState, config: TrainConfig) -> tuple[Params, AdamState]:
    """One Adam update. Returns new dicts; inputs are not modified."""
    bad = [n for n, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradients in {bad} at step {state.t + 1}")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for n, p in params.items():
        g = grads[n]
        if g.shape != p.shape:
            raise ValueError(f"{n}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(n, np.zeros_like(p))
        v = state.v.get(n, np.zeros_like(p))
        m = (b1 * m + (1.0 - b1) * g).astype(p.dtype)
        v = (b2 * v + (1.0 - b2) * (g * g)).astype(p.dtype)
        step = config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
        new_p[n] = (p - step).astype(p.dtype)
        new_m[n], new_v[n] = m, v
    return new_p, AdamState(new_m, new_v, t)


# --- loop -------------------------------------------------------------------

def batch_loss_and_grads(params: Params, batch: Sequence[RowInputs]) -> tuple[float, Params]:
    """Mean per-question hinge loss over the batch, and its gradients."""
    P = as_leaves(params, True)
    k = params["text1.W_h"].shape[0]
    total = None
    for inp in batch:
        loss = hinge_loss_t(forward_scores_t(inp, P, k), inp.label)
        total = loss if total is None else total + loss
    mean = total * (1.0 / len(batch))
    mean.backward()
    grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data)).astype(params[n].dtype)
             for n, t in P.items()}
    return float(mean.data[0, 0]), grads


def total_loss(params: Params, inputs: Sequence[RowInputs]) -> float:
    """Sum of per-question hinge losses (no averaging)."""
    return float(sum(hinge_loss(score_inputs(i, params), i.label) for i in inputs))


def accuracy(params: Params, inputs: Sequence[RowInputs]) -> float:
    if not inputs:
        return float("nan")
    hits = sum(predict(score_inputs(i, params)) == i.label for i in inputs)
    return hits / len(inputs)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, params: Params, metrics: list[dict]):
        super().__init__(message)
        self.params = params
        self.metrics = metrics


@dataclass
class TrainResult:
    params: Params
    metrics: list[dict]
    best_epoch: int | None
    selection: str


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return derive_rng(seed, "shuffle", epoch).permutation(n)


def prepare_inputs(rows: Sequence[DatasetRow], store: FeatureStore, table: EmbeddingTable,
                   cfg: ModelConfig, dtype) -> list[RowInputs]:
    return [row_inputs(r, store, table, cfg, dtype) for r in rows]


def train(rows: Sequence[DatasetRow], store: FeatureStore, table: EmbeddingTable, model_cfg: ModelConfig,
          train_cfg: TrainConfig, plan=None, test_rows: Sequence[DatasetRow] = (),
          metrics_path: str | Path | None = None, init: Params | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train on ``rows`` (already augmented, if at all) and keep the best epoch.

    The kept checkpoint is the one with the highest test accuracy, or the
    highest train accuracy when there are no test rows; ties keep the
    earlier epoch. ``plan`` is only echoed into the metrics records.
    """
    if not rows:
        raise ValueError("no training rows")
    dtype = np.dtype(train_cfg.dtype)
    params = init if init is not None else init_params(model_cfg, train_cfg.seed, dtype)
    params = {n: v.astype(dtype) for n, v in params.items()}
    train_in = prepare_inputs(rows, store, table, model_cfg, dtype)
    test_in = prepare_inputs(test_rows, store, table, model_cfg, dtype)
    select_on = "test_acc" if test_in else "train_acc"
    plan_label = getattr(plan, "label", None)

    state = AdamState()
    metrics: list[dict] = []
    best, best_score, best_epoch = params, -1.0, None
    sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    t0 = time.perf_counter()
    try:
        for epoch in range(train_cfg.epochs):
            order = epoch_order(len(train_in), train_cfg.seed, epoch)
            loss_sum = 0.0
            for lo in range(0, len(order), train_cfg.batch_size):
                batch = [train_in[i] for i in order[lo:lo + train_cfg.batch_size]]
                loss, grads = batch_loss_and_grads(params, batch)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", best, metrics)
                try:
                    params, state = adam_step(params, grads, state, train_cfg)
                except NonFiniteGradientError as e:
                    raise TrainingDivergedError(str(e), best, metrics) from e
                loss_sum += loss * len(batch)
            rec = {
                "epoch": epoch,
                "train_loss": loss_sum / len(train_in),
                "train_acc": accuracy(params, train_in),
                "test_acc": accuracy(params, test_in) if test_in else None,
                "wallclock": round(time.perf_counter() - t0, 3),
            }
            if plan_label is not None:
                rec["plan"] = plan_label
            metrics.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
                sink.flush()
            if on_epoch:
                on_epoch(rec)
            log.debug("epoch %d loss %.4f train %.3f test %s", epoch, rec["train_loss"], rec["train_acc"],
                      rec["test_acc"])
            if rec[select_on] > best_score:
                best, best_score, best_epoch = params, rec[select_on], epoch
    finally:
        if sink:
            sink.close()
    return TrainResult(best, metrics, best_epoch, select_on)


def metrics_without_time(metrics: Sequence[dict]) -> list[dict]:
    return [{k: v for k, v in m.items() if k != "wallclock"} for m in metrics]


def config_dict(cfg) -> dict:
    return asdict(cfg)
