from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vqa_augment import autodiff as ad
from vqa_augment.features import synth_features
from vqa_augment.model import (ModelConfig, RowInputs, attend, check_params, decode, decode_checkpoint,
                               encode_checkpoint, init_params, load_checkpoint, param_shapes, predict,
                               save_checkpoint, score_candidates, score_inputs, text_encode, video_encode,
                               zero_params)
from vqa_augment.synthetic import synth_rows, synth_table

from conftest import TINY

# frozen outputs of the loop-based oracle for ModelConfig(E=2, D=3, H=4, h=2), init seed 5, float64
GOLD_CFG = ModelConfig(E=2, D=3, H=4, h=2)
GOLD_TEXT_IN = np.array([[0.5, -1.0], [0.25, 0.75], [-0.3, 0.1]])
GOLD_TEXT_OUT = np.array([[0.00154643853283804, 0.07173919400617683, -0.1814290823627618, 0.24294627017903472]])
GOLD_VIDEO_IN = np.array([[0.1, 0.2, -0.3], [1.0, -0.5, 0.0]])
GOLD_VIDEO_OUT = np.array([
    [-0.12083862825622674, 0.01845922467507305, -0.09938493031554431, 0.03509866350330128],
    [-0.19187259487773098, -0.01353723216221094, -0.15066440007596843, 0.03723530775271196],
])


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(H=5)
    with pytest.raises(ValueError):
        ModelConfig(E=0)
    assert ModelConfig().H == 512 and ModelConfig().h == 256 and ModelConfig().E == 300


def test_param_shapes():
    s = param_shapes(ModelConfig(E=3, D=5, H=4, h=2))
    assert s["W_v"] == (4, 2) and s["W_w"] == (4, 2) and s["b_s"] == (1, 2) and s["W_s"] == (2, 1)
    assert s["W_a"] == (4, 4) and s["b_a"] == (1, 4) and s["W_d"] == (4, 1) and s["b_d"] == (1, 1)
    assert s["text1.W_x"] == (3, 8) and s["text2.W_x"] == (2, 8) and s["video1.W_x"] == (5, 8)


def test_init_bounds_and_determinism():
    cfg = ModelConfig(E=3, D=5, H=4, h=2)
    p = init_params(cfg, 1)
    q = init_params(cfg, 1)
    check_params(p, cfg)
    for n in p:
        assert p[n].tobytes() == q[n].tobytes()
    assert np.abs(p["W_a"]).max() <= 1 / np.sqrt(4)
    assert np.abs(p["video1.W_x"]).max() <= 1 / np.sqrt(5)


# --- encoders ---------------------------------------------------------------

def test_text_zero():
    p = zero_params(TINY)
    out = text_encode(np.zeros((1, TINY.E)), p)
    assert out.shape == (1, TINY.H) and not out.any()


@pytest.mark.parametrize("L", [1, 3, 7])
def test_text_width(L, tiny_params):
    assert text_encode(np.ones((L, TINY.E)), tiny_params).shape == (1, TINY.H)


def test_text_golden():
    p = init_params(GOLD_CFG, seed=5, dtype=np.float64)
    np.testing.assert_allclose(text_encode(GOLD_TEXT_IN, p), GOLD_TEXT_OUT, rtol=0, atol=1e-12)
    np.testing.assert_allclose(oracles.text_encode(GOLD_TEXT_IN, p), GOLD_TEXT_OUT, rtol=0, atol=1e-15)


def test_video_golden():
    p = init_params(GOLD_CFG, seed=5, dtype=np.float64)
    np.testing.assert_allclose(video_encode(GOLD_VIDEO_IN, p), GOLD_VIDEO_OUT, rtol=0, atol=1e-12)


def test_video_zero():
    assert not video_encode(np.zeros((4, TINY.D)), zero_params(TINY)).any()


def test_video_one_step_matches_text_structure(tiny_params):
    # with text weights copied into the video slots the two encoders agree on one step
    cfg = ModelConfig(E=4, D=4, H=4, h=3)
    p = init_params(cfg, 3, np.float64)
    for layer in ("1", "2"):
        for w in ("W_x", "W_h", "b"):
            p[f"video{layer}.{w}"] = p[f"text{layer}.{w}"]
    x = np.random.default_rng(0).normal(size=(1, 4))
    np.testing.assert_array_equal(video_encode(x, p), text_encode(x, p))


def test_encoders_reject_nonfinite(tiny_params):
    with pytest.raises(ValueError):
        text_encode(np.full((2, TINY.E), np.nan), tiny_params)
    with pytest.raises(ValueError):
        video_encode(np.full((2, TINY.D), np.inf), tiny_params)


# --- attention ----------------------------------------------------------------

def test_attend_single_frame(tiny_params):
    ev = np.random.default_rng(0).normal(size=(1, TINY.H))
    alpha, om = attend(ev, np.ones((1, TINY.H)), tiny_params)
    np.testing.assert_allclose(alpha, [[1.0]])
    np.testing.assert_allclose(om, ev)


def test_attend_identical_rows_uniform(tiny_params):
    ev = np.tile(np.arange(TINY.H, dtype=float), (6, 1))
    alpha, om = attend(ev, np.ones((1, TINY.H)), tiny_params)
    np.testing.assert_allclose(alpha, np.full((6, 1), 1 / 6))
    np.testing.assert_allclose(om, ev[:1])


def test_attend_vs_bruteforce(tiny_params):
    rng = np.random.default_rng(42)
    for _ in range(20):
        n = int(rng.integers(1, 8))
        ev, ew = rng.normal(size=(n, TINY.H)), rng.normal(size=(1, TINY.H))
        a, om = attend(ev, ew, tiny_params)
        a_ref, om_ref = oracles.attend(ev, ew, tiny_params)
        np.testing.assert_allclose(a, a_ref, atol=1e-12)
        np.testing.assert_allclose(om, om_ref, atol=1e-12)


def test_attend_errors(tiny_params):
    with pytest.raises(ValueError):
        attend(np.zeros((0, TINY.H)), np.zeros((1, TINY.H)), tiny_params)
    with pytest.raises(ValueError):
        attend(np.zeros((2, TINY.H)), np.zeros((1, TINY.H + 1)), tiny_params)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12), st.floats(0.01, 50), st.integers(0, 2**32 - 1))
def test_alpha_is_distribution(n, scale, seed):
    rng = np.random.default_rng(seed)
    p = init_params(TINY, seed % 97, np.float64)
    p = {k: v * scale for k, v in p.items()}
    alpha, _ = attend(rng.normal(size=(n, TINY.H)) * scale, rng.normal(size=(1, TINY.H)), p)
    assert alpha.shape == (n, 1)
    assert (alpha >= 0).all() and (alpha <= 1).all()
    assert abs(alpha.sum() - 1) <= 1e-6


# --- decoder ---------------------------------------------------------------------

def test_decode_zero_params():
    assert decode(np.ones((1, TINY.H)), np.ones((1, TINY.H)), zero_params(TINY)) == 0.0


def test_decode_vs_hand(tiny_params):
    rng = np.random.default_rng(5)
    for _ in range(10):
        om, ew = rng.normal(size=(1, TINY.H)), rng.normal(size=(1, TINY.H))
        assert decode(om, ew, tiny_params) == pytest.approx(oracles.decode(om, ew, tiny_params), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(0, 1000))
def test_decoder_hidden_bounded(scale, seed):
    p = init_params(TINY, seed, np.float64)
    om = np.random.default_rng(seed).normal(size=(1, TINY.H)) * scale
    d_f = ad.tanh(ad.Tensor(om) @ ad.Tensor(p["W_a"]) + ad.Tensor(p["b_a"])).data
    assert np.abs(d_f).max() <= 1.0


# --- full row scoring ---------------------------------------------------------------

def test_scores_match_oracle_composition(tiny_params, tiny_inputs):
    got = score_inputs(tiny_inputs, tiny_params)
    ref = oracles.scores(tiny_inputs.question, tiny_inputs.answers, tiny_inputs.video, tiny_params)
    np.testing.assert_allclose(got, ref, atol=1e-12)


def test_scores_ragged_answers(tiny_params):
    rng = np.random.default_rng(3)
    q = rng.normal(size=(3, TINY.E))
    answers = tuple(rng.normal(size=(n, TINY.E)) for n in (1, 4, 2, 1, 3))
    video = rng.normal(size=(5, TINY.D))
    got = score_inputs(RowInputs(q, answers, video, 0), tiny_params)
    np.testing.assert_allclose(got, oracles.scores(q, answers, video, tiny_params), atol=1e-12)


@pytest.fixture
def scored_setup():
    rows = synth_rows(3, seed=8)
    cfg = ModelConfig(E=6, D=4, H=8, h=4)
    table = synth_table(rows, 6, seed=8)
    feats = {r.clip_id: synth_features(r.clip_id, 3, (2, 2), 8) for r in rows}
    return rows, cfg, table, feats, init_params(cfg, 8, np.float64)


def test_score_candidates_pure_and_equivariant(scored_setup):
    rows, cfg, table, feats, params = scored_setup
    r = rows[0]
    s1 = score_candidates(r, feats[r.clip_id], table, params, cfg)
    s2 = score_candidates(r, feats[r.clip_id], table, params, cfg)
    assert s1.tobytes() == s2.tobytes()
    perm = [3, 0, 4, 2, 1]
    rp = replace(r, candidates=tuple(r.candidates[i] for i in perm), label=perm.index(r.label))
    sp = score_candidates(rp, feats[r.clip_id], table, params, cfg)
    np.testing.assert_allclose(sp, s1[perm], atol=1e-12)


def test_identical_candidates_identical_scores(scored_setup):
    rows, cfg, table, feats, params = scored_setup
    r = rows[1]
    a = np.vstack([table.lookup(["red"])] * 2)
    q = table.lookup(["what", "is"])
    inp = RowInputs(q, (a, a, a[:1], a, a[:1]), feats[r.clip_id].appearance.astype(float) @ np.ones((2, 4)), 0)
    s = score_inputs(inp, params)
    assert s[0] == s[1] == s[3] and s[2] == s[4]


def test_predict():
    assert predict([0.1, 0.9, 0.2, 0.0, 0.3]) == 1
    assert predict([0.5] * 5) == 0
    s = [0.1, 0.9, 0.2, 0.0, 0.3]
    assert predict(s[::-1]) == 4 - predict(s)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3),
       st.integers(1, 4), st.integers(0, 100))
def test_shape_contract(L, N, E, half_H, h, D, seed):
    cfg = ModelConfig(E=E, D=D, H=2 * half_H, h=h)
    p = init_params(cfg, seed, np.float64)
    rng = np.random.default_rng(seed)
    ew = text_encode(rng.normal(size=(L, E)), p)
    ev = video_encode(rng.normal(size=(N, D)), p)
    assert ew.shape == (1, cfg.H) and ev.shape == (N, cfg.H)
    alpha, om = attend(ev, ew, p)
    assert alpha.shape == (N, 1) and om.shape == (1, cfg.H)
    assert np.isfinite(decode(om, ew, p))


# --- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(E=3, D=4, H=6, h=2, N_max=5)
    for dtype in (np.float32, np.float64):
        p = init_params(cfg, 2, dtype)
        path = tmp_path / "ck.bin"
        save_checkpoint(p, path, cfg)
        q, cfg2 = load_checkpoint(path)
        assert cfg2 == cfg and list(q) == list(p)
        for n in p:
            assert q[n].dtype == p[n].dtype and q[n].tobytes() == p[n].tobytes()
        assert encode_checkpoint(q, cfg2) == path.read_bytes()


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        decode_checkpoint(b"nope")
