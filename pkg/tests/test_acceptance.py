"""Acceptance gate. One test per criterion; each prints a PASS/FAIL line and the
terminal summary lists them all (see conftest.py)."""

import csv
import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

import oracles
from vqa_augment._rng import derive_rng
from vqa_augment.augmentation import (AugmentationError, AugmentationPlan, augment_split, hflip_text, mirror_row,
                                      resample_row)
from vqa_augment.dataset import (EGOVQA_TYPE_COUNTS, AnswerPool, QuestionType, SplitSpec, build_pools,
                                 label_position_histogram, load_manifest, load_splits, save_manifest, save_splits,
                                 type_counts)
from vqa_augment.harness import evaluate, split_average
from vqa_augment.model import ModelConfig, attend, init_params
from vqa_augment.synthetic import BASE_VOCAB, OverfitFixture, synth_rows, synth_store, synth_table
from vqa_augment.training import batch_loss_and_grads, metrics_without_time, train

from conftest import TINY, make_row

CLI = [sys.executable, "-m", "vqa_augment.cli"]


def _say(n, ok, detail=""):
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")


def _cli(*args, cwd=None):
    out = subprocess.run([*CLI, *map(str, args)], capture_output=True, text=True, cwd=cwd)
    assert out.returncode == 0, out.stderr
    return out.stdout


# 1 ---------------------------------------------------------------------------

@pytest.mark.criterion(1, "matrix emits 7 augmentation rows x 3 splits + Avg; Avg is the plain mean")
def test_criterion_1_protocol(tmp_path):
    avg = split_average([31.82, 37.57, 27.27])
    rows = synth_rows(24, seed=6) + synth_rows(8, seed=6, split="test", prefix="t")
    man = tmp_path / "m.jsonl"
    save_manifest(rows, man)
    _cli("synth-features", "--manifest", man, "--out", tmp_path / "f", "--frames", 2, "--dims", 2, 2)
    _cli("matrix", "--manifest", man, "--features", tmp_path / "f", "--out-dir", tmp_path / "mx",
         "--embed-dim", 4, "--hidden", 4, "--attn", 2, "--epochs", 1)
    table = list(csv.reader((tmp_path / "mx" / "table2.csv").open()))
    header, body = table[0], table[1:]
    plans = [r[1] for r in body]
    means_ok = all(abs(float(r[5]) - np.mean([float(x) for x in r[2:5]])) <= 0.005 + 1e-9 for r in body)
    text = (tmp_path / "mx" / "table2.txt").read_text().splitlines()
    ok = (abs(avg - 32.22) <= 0.005
          and header == ["augmentation", "plan", "split_0", "split_1", "split_2", "avg"]
          and plans == ["baseline", "mirror", "resample", "resample+mirror", "hflip", "hflip+resample",
                        "hflip+resample+mirror"]
          and means_ok and len(text) == 3 + 7 and text[1].split()[-1] == "Avg")
    _say(1, ok, f"(Avg of 31.82/37.57/27.27 = {avg:.4f})")
    assert ok


# 2 ---------------------------------------------------------------------------

NUMBERS = ("one", "two", "three", "four", "five")
CASES = 200


def _rows(rng, n, split="train"):
    out = []
    qtypes = list(QuestionType)
    for i in range(n):
        qt = qtypes[int(rng.integers(len(qtypes)))]
        vocab = NUMBERS if qt is QuestionType.Cnt else [f"{qt.value.lower()}_{j}" for j in range(int(rng.integers(5, 12)))]
        cands = [vocab[j] for j in rng.choice(len(vocab), 5, replace=False)]
        out.append(make_row(f"r{i}", cands, int(rng.integers(5)), qt, split=split))
    return out


def _prop_mirror(rng):
    r = make_row(candidates=[f"w{j}" for j in rng.permutation(9)[:5]], label=int(rng.integers(5)))
    m = mirror_row(r)
    mm = mirror_row(m)
    return (mm.candidates == r.candidates and mm.label == r.label and m.label == 4 - r.label
            and m.answer == r.answer)


WORDS = ["left", "Left", "LEFT", "right", "Right", "RIGHT", "man", "the", "cup", "copyright", "leftover",
         "left-most", ",", "?"]


def _prop_hflip(rng):
    text = " ".join(WORDS[j] for j in rng.integers(len(WORDS), size=int(rng.integers(0, 12))))
    once = hflip_text(text)
    swappable = any(w.lower() in ("left", "right", "left-most") for w in text.split())
    return hflip_text(once) == text and (once != text) == swappable


def _prop_resample(rng):
    rows = _rows(rng, 8)
    pools = build_pools(rows)
    for r in rows:
        copies = int(rng.integers(1, 5))
        out = resample_row(r, pools[r.qtype], copies, derive_rng(int(rng.integers(2**32)), r.row_id))
        seen = {frozenset(r.candidates)}
        for o in out:
            key = frozenset(o.candidates)
            if (len(key) != 5 or o.label != r.label or o.answer != r.answer
                    or not key <= pools[r.qtype].answers or key in seen):
                return False
            seen.add(key)
    return True


def _prop_cnt(rng):
    rows = [make_row(f"c{i}", [NUMBERS[j] for j in rng.permutation(5)], int(rng.integers(5)), QuestionType.Cnt)
            for i in range(int(rng.integers(1, 6)))]
    rows += _rows(rng, 8)
    out, report = augment_split(rows, build_pools(rows), None,
                                AugmentationPlan(enable_resample=True, resample_copies=int(rng.integers(1, 4)),
                                                 seed=int(rng.integers(2**32))))
    cnt_resampled = [o for o in out if o.qtype is QuestionType.Cnt and "resampled" in o.provenance]
    skipped = {s["row_id"] for s in report.skips}
    return not cnt_resampled and all(r.row_id in skipped for r in rows if r.qtype is QuestionType.Cnt)


def _prop_test_protection(rng):
    rows = _rows(rng, 4) + _rows(rng, 1, split="test")
    plan = AugmentationPlan(enable_mirror=bool(rng.integers(2)), enable_resample=bool(rng.integers(2)))
    try:
        augment_split(rows, build_pools(rows[:4]), None, plan)
        return False
    except AugmentationError:
        pass
    t = rows[-1]
    pool = AnswerPool(t.qtype, frozenset(t.candidates) | {f"extra_{j}" for j in range(6)})
    try:
        resample_row(t, pool, 1, derive_rng(0))
        return False
    except AugmentationError:
        return True


PROPERTIES = {
    "mirror involution": _prop_mirror,
    "hflip text involution": _prop_hflip,
    "resample constraints": _prop_resample,
    "Cnt auto-exclusion": _prop_cnt,
    "test-split protection": _prop_test_protection,
}


@pytest.mark.criterion(2, "augmentation invariants, >= 200 randomized cases each, zero failures, < 10 s")
def test_criterion_2_augmentation_invariants():
    t0 = time.perf_counter()
    failures = {}
    for i, (name, prop) in enumerate(PROPERTIES.items()):
        rng = np.random.default_rng([2, i])
        failures[name] = sum(not prop(rng) for _ in range(CASES))
    elapsed = time.perf_counter() - t0
    ok = not any(failures.values()) and elapsed < 10
    _say(2, ok, f"({CASES} cases x {len(PROPERTIES)} properties, failures {failures}, {elapsed:.2f} s)")
    assert ok


# 3 ---------------------------------------------------------------------------

@pytest.mark.criterion(3, "full gradient check on the tiny fixture, relative error < 1e-4 at 64-bit, < 60 s")
def test_criterion_3_gradient_check(tiny_params, tiny_inputs):
    assert (TINY.E, TINY.H, TINY.h) == (4, 4, 3)
    assert tiny_inputs.video.shape[0] == 3 and len(tiny_inputs.answers) == 5
    assert tiny_inputs.question.shape[0] + tiny_inputs.answers[0].shape[0] == 4
    assert all(v.dtype == np.float64 for v in tiny_params.values())
    t0 = time.perf_counter()
    _, grads = batch_loss_and_grads(tiny_params, [tiny_inputs])
    errs = oracles.gradient_errors(tiny_params, [tiny_inputs], grads)
    elapsed = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    ok = errs[worst] < 1e-4 and elapsed < 60 and len(errs) == len(tiny_params)
    _say(3, ok, f"({len(errs)} tensors, worst {worst} {errs[worst]:.2e}, {elapsed:.1f} s)")
    assert ok


# 4 ---------------------------------------------------------------------------

@pytest.mark.criterion(4, "attend matches a brute-force softmax + weighted-sum oracle within 1e-6, 100 instances")
def test_criterion_4_attention_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(100):
        half, h = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        cfg = ModelConfig(E=2, D=2, H=2 * half, h=h)
        p = init_params(cfg, i, np.float64)
        n = int(rng.integers(1, 10))
        ev, ew = rng.normal(size=(n, cfg.H)), rng.normal(size=(1, cfg.H))
        alpha, om = attend(ev, ew, p)
        a_ref, om_ref = oracles.attend(ev, ew, p)
        worst = max(worst, np.abs(alpha - a_ref).max(), np.abs(om - om_ref).max())
    ok = worst <= 1e-6
    _say(4, ok, f"(max abs deviation {worst:.2e})")
    assert ok


# 5 ---------------------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.criterion(5, "overfit 20 synthetic rows to 100% train accuracy within 200 epochs, deterministic, < 5 min")
def test_criterion_5_overfit():
    fx = OverfitFixture()
    rows, store, table = fx.build()
    vocab = set(table.vocab)
    assert len(rows) == 20 and vocab <= set(BASE_VOCAB) and len(BASE_VOCAB) == 30
    assert (fx.model.E, fx.model.H, fx.model.h) == (8, 16, 8)
    assert (fx.train.batch_size, fx.train.learning_rate, fx.train.epochs) == (8, 1e-3, 200)
    t0 = time.perf_counter()
    a = train(rows, store, table, fx.model, fx.train)
    b = train(rows, store, table, fx.model, fx.train)
    elapsed = time.perf_counter() - t0
    first = next((m["epoch"] for m in a.metrics if m["train_acc"] == 1.0), None)
    same = (metrics_without_time(a.metrics) == metrics_without_time(b.metrics)
            and all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params))
    ok = first is not None and same and elapsed < 300
    _say(5, ok, f"(first 100% epoch {first}, identical reruns {same}, {elapsed:.0f} s for both runs)")
    assert ok


# 6 ---------------------------------------------------------------------------

@pytest.mark.criterion(6, "untrained model on >= 500 synthetic rows scores within [12%, 28%]")
def test_criterion_6_random_baseline():
    n, p = 500, 0.2
    band_mass = sum(math.comb(n, k) * p ** k * (1 - p) ** (n - k) for k in range(60, 141))
    rows = synth_rows(n, seed=77, split="test")
    store = synth_store(rows, n_frames=4, dims=(4, 4), seed=77)
    table = synth_table(rows, 8, seed=77)
    cfg = ModelConfig(E=8, D=8, H=16, h=8)
    rep = evaluate(init_params(cfg, 77), rows, store, table, cfg)
    ok = 12.0 <= rep.overall_accuracy <= 28.0 and band_mass > 0.99
    _say(6, ok, f"(accuracy {rep.overall_accuracy:.1f}% on {n} rows; band mass {band_mass:.5f})")
    assert ok


# 7 ---------------------------------------------------------------------------

@pytest.mark.criterion(7, "augment and train reruns give byte-identical manifests and bit-identical checkpoints")
def test_criterion_7_determinism(tmp_path):
    rows = synth_rows(24, seed=8) + synth_rows(8, seed=8, split="test", prefix="t")
    man = tmp_path / "m.jsonl"
    save_manifest(rows, man)
    (tmp_path / "plan.toml").write_text("[plan]\nenable_hflip = true\nenable_resample = true\n"
                                        "resample_copies = 2\nenable_mirror = true\nseed = 5\n")
    blobs = []
    for i in range(2):
        feats = tmp_path / f"f{i}"
        _cli("--seed", 5, "synth-features", "--manifest", man, "--out", feats, "--frames", 3, "--dims", 3, 3)
        _cli("--seed", 5, "augment", "--manifest", man, "--features", feats, "--plan", tmp_path / "plan.toml",
             "--out", tmp_path / f"aug{i}.jsonl")
        _cli("--seed", 5, "train", "--manifest", tmp_path / f"aug{i}.jsonl", "--features", feats,
             "--out", tmp_path / f"ck{i}.bin", "--embed-dim", 4, "--hidden", 6, "--attn", 3, "--epochs", 2)
        files = sorted((p.name, p.read_bytes()) for p in feats.iterdir())
        blobs.append(((tmp_path / f"aug{i}.jsonl").read_bytes(), (tmp_path / f"ck{i}.bin").read_bytes(), files))
    man_same = blobs[0][0] == blobs[1][0] and blobs[0][2] == blobs[1][2]
    ck_same = blobs[0][1] == blobs[1][1]
    n_aug = len(blobs[0][0].splitlines())
    ok = man_same and ck_same and n_aug > len(rows)
    _say(7, ok, f"(manifest {n_aug} rows identical {man_same}; checkpoint identical {ck_same})")
    assert ok


# 8 ---------------------------------------------------------------------------

def _trunc2(x):
    return math.floor(x * 100) / 100


def test_bias_figures_are_truncated_percentages():
    # the published shares are truncated, not rounded, to two decimals
    assert _trunc2(100 * 60 / 203) == 29.55 and round(100 * 60 / 203, 2) == 29.56
    assert _trunc2(100 * 27 / 77) == 35.06 == round(100 * 27 / 77, 2)
    assert sum(EGOVQA_TYPE_COUNTS.values()) == 486


def check_real_manifest(path, splits, workdir):
    """Run ``stats`` on a manifest and compare with the published quantities."""
    args = ["stats", path, "--json", workdir / "s.json"] + (["--splits", splits] if splits else [])
    _cli(*args)
    data = json.loads((workdir / "s.json").read_text())
    counts_ok = data["type_counts"] == {q.value: n for q, n in EGOVQA_TYPE_COUNTS.items()}
    act, who = data["bias"]["Act3rd"], data["bias"]["Who3rd"]
    bias_ok = (act["counts"][4], act["total"]) == (60, 203) and (who["counts"][3], who["total"]) == (27, 77)
    pct_ok = _trunc2(act["shares"][4]) == 29.55 and _trunc2(who["shares"][3]) == 35.06
    # cross-check the CLI against the library
    rows = load_manifest(path)
    train_rows = ([r for s in load_splits(splits) for r in s.apply(rows)[0]] if splits
                  else [r for r in rows if r.split == "train"])
    lib_ok = list(label_position_histogram(train_rows, QuestionType.Act3rd)) == [act["counts"], act["total"]]
    lib_ok = lib_ok and {q.value: n for q, n in type_counts(rows).items()} == data["type_counts"]
    detail = (f"(counts {counts_ok}, Act3rd {act['counts'][4]}/{act['total']}, "
              f"Who3rd {who['counts'][3]}/{who['total']}, library agrees {lib_ok})")
    return counts_ok and bias_ok and pct_ok and lib_ok, detail


def _lookalike(tmp_path):
    """A manifest + splits with the published per-type counts and pooled bias."""
    rows, train_of = [], {}
    # per type: list of (times in a train split, label)
    plan = {q: [(2, i % 4) for i in range(n)] for q, n in EGOVQA_TYPE_COUNTS.items()}
    plan[QuestionType.Act3rd] = [(2, 4)] * 30 + [(2, i % 4) for i in range(65)] + [(1, i % 4) for i in range(13)]
    plan[QuestionType.Who3rd] = ([(2, 3)] * 13 + [(1, 3)] + [(2, i % 3) for i in range(1)]
                                 + [(1, i % 3) for i in range(48)])
    for q, spec in plan.items():
        for i, (k, label) in enumerate(spec):
            rid = f"{q.value}_{i:03d}"
            rows.append(make_row(rid, [f"{q.value.lower()}_{j}" for j in range(5)], label, q))
            train_of[rid] = [(len(rows) + j) % 3 for j in range(k)]
    splits = []
    for s in range(3):
        tr = [r.row_id for r in rows if s in train_of[r.row_id]]
        te = [r.row_id for r in rows if s not in train_of[r.row_id]]
        splits.append(SplitSpec(s, tr, te))
    save_manifest(rows, tmp_path / "ego.jsonl")
    save_splits(splits, tmp_path / "ego_splits.json")
    return tmp_path / "ego.jsonl", tmp_path / "ego_splits.json"


def test_real_manifest_gate_on_lookalike(tmp_path):
    man, splits = _lookalike(tmp_path)
    ok, detail = check_real_manifest(man, splits, tmp_path)
    assert ok, detail
    # one label moved off the last position must fail the gate
    rows = load_manifest(man)
    moved = [r if r.row_id != "Act3rd_000" else make_row("Act3rd_000", r.candidates, 0, r.qtype) for r in rows]
    save_manifest(moved, man)
    assert not check_real_manifest(man, splits, tmp_path)[0]


@pytest.mark.criterion(8, "stats on a real EgoVQA manifest reproduces the type counts and 60/203, 27/77 bias")
def test_criterion_8_real_manifest(tmp_path):
    path = os.environ.get("EGOVQA_MANIFEST")
    if not path:
        print("criterion 8: SKIP (set EGOVQA_MANIFEST, and EGOVQA_SPLITS for the pooled train splits)")
        pytest.skip("EGOVQA_MANIFEST not set")
    ok, detail = check_real_manifest(path, os.environ.get("EGOVQA_SPLITS"), tmp_path)
    _say(8, ok, detail)
    assert ok
