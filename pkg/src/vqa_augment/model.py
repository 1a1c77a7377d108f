"""ST-VQA with temporal attention, on the in-repo autodiff core.

Shapes (row vectors throughout)::

    text   phi_w  L x E  -> two stacked LSTMs (H/2 each) -> eps_w  1 x H   (last hidden of both)
    video  phi_v  N x D  -> two stacked LSTMs (H/2 each) -> eps_v  N x H   (all hiddens of both)
    fusion omega_s = tanh(eps_v W_v + eps_w W_w + b_s) W_s      N x 1
           alpha   = softmax over the N frames                  N x 1
           omega_a = sum_t alpha_t eps_v[t]                     1 x H
    decode d_f = tanh(omega_a W_a + b_a)                        1 x H
           d_r = (d_f * eps_w) W_d + b_d                        scalar score

LSTM cell (gate columns ordered i, f, g, o; zero initial state)::

    z = x W_x + h W_h + b
    i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
    c' = f * c + i * g;   h' = o * tanh(c')
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from ._rng import derive_rng
from .dataset import NUM_CANDIDATES, DatasetRow
from .features import ClipFeatures, FeatureStore, cap_frames, concat_features
from .text import EmbeddingTable, tokenize

Params = dict[str, np.ndarray]


@dataclass(frozen=True)
class ModelConfig:
    E: int = 300
    D: int = 8192
    H: int = 512
    h: int = 256
    N_max: int | None = None

    def __post_init__(self):
        for k in ("E", "D", "H", "h"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")
        if self.H % 2:
            raise ValueError("H must be even (two stacked layers of H/2)")
        if self.N_max is not None and self.N_max < 1:
            raise ValueError("N_max must be >= 1")

    @property
    def k(self) -> int:
        return self.H // 2


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    k, H, h = cfg.k, cfg.H, cfg.h
    shapes = {}
    for enc, d_in in (("text", cfg.E), ("video", cfg.D)):
        for layer, x_in in ((1, d_in), (2, k)):
            shapes[f"{enc}{layer}.W_x"] = (x_in, 4 * k)
            shapes[f"{enc}{layer}.W_h"] = (k, 4 * k)
            shapes[f"{enc}{layer}.b"] = (1, 4 * k)
    shapes.update({
        "W_v": (H, h), "W_w": (H, h), "b_s": (1, h), "W_s": (h, 1),
        "W_a": (H, H), "b_a": (1, H), "W_d": (H, 1), "b_d": (1, 1),
    })
    return shapes


def _fan_in(name: str, shape: tuple[int, int], cfg: ModelConfig) -> int:
    if name.endswith(".b") or name.endswith(".W_h"):
        return cfg.k
    if name in ("b_s", "b_a", "b_d"):
        return cfg.H
    return shape[0]


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), one seeded stream per tensor."""
    out = {}
    for name, shape in param_shapes(cfg).items():
        bound = 1.0 / np.sqrt(_fan_in(name, shape, cfg))
        out[name] = derive_rng(seed, "init", name).uniform(-bound, bound, size=shape).astype(dtype)
    return out


def zero_params(cfg: ModelConfig, dtype=np.float64) -> Params:
    return {n: np.zeros(s, dtype=dtype) for n, s in param_shapes(cfg).items()}


def check_params(params: Mapping[str, np.ndarray], cfg: ModelConfig) -> None:
    shapes = param_shapes(cfg)
    if set(params) != set(shapes):
        raise ValueError(f"parameter names differ: missing {sorted(set(shapes) - set(params))}, "
                         f"extra {sorted(set(params) - set(shapes))}")
    for n, s in shapes.items():
        if params[n].shape != s:
            raise ValueError(f"{n}: shape {params[n].shape}, expected {s}")
        if not np.isfinite(params[n]).all():
            raise ValueError(f"{n}: non-finite values")


def as_leaves(params: Mapping[str, np.ndarray], requires_grad: bool = True) -> dict[str, ad.Tensor]:
    return {n: ad.Tensor(v, requires_grad=requires_grad, name=n) for n, v in params.items()}


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite values in {what}")


# --- tensor-level building blocks -----------------------------------------

def _lstm_cell(x, h, c, P, prefix: str, k: int):
    z = x @ P[prefix + ".W_x"] + h @ P[prefix + ".W_h"] + P[prefix + ".b"]
    i = ad.sigmoid(ad.cols(z, 0, k))
    f = ad.sigmoid(ad.cols(z, k, 2 * k))
    g = ad.tanh(ad.cols(z, 2 * k, 3 * k))
    o = ad.sigmoid(ad.cols(z, 3 * k, 4 * k))
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def _zero_state(batch: int, k: int, dtype):
    z = ad.Tensor(np.zeros((batch, k), dtype=dtype))
    return [z, z, z, z]  # h1, c1, h2, c2


def _stack_step(x, state, P, enc: str, k: int, mask=None):
    h1, c1, h2, c2 = state
    nh1, nc1 = _lstm_cell(x, h1, c1, P, enc + "1", k)
    nh2, nc2 = _lstm_cell(nh1, h2, c2, P, enc + "2", k)
    if mask is not None:
        # rows whose sequence already ended keep their previous state
        keep = 1.0 - mask
        nh1, nc1 = nh1 * mask + h1 * keep, nc1 * mask + c1 * keep
        nh2, nc2 = nh2 * mask + h2 * keep, nc2 * mask + c2 * keep
    return [nh1, nc1, nh2, nc2]


def encode_text_t(phi_w: np.ndarray, P, k: int) -> ad.Tensor:
    """1 x H: last hiddens of both layers."""
    state = _zero_state(1, k, phi_w.dtype)
    for t in range(phi_w.shape[0]):
        state = _stack_step(ad.Tensor(phi_w[t:t + 1]), state, P, "text", k)
    return ad.concat([state[0], state[2]], axis=1)


def encode_candidates_t(q_emb: np.ndarray, a_embs: Sequence[np.ndarray], P, k: int) -> ad.Tensor:
    """C x H text encodings of [question ; answer_c] for each candidate.

    The question prefix is run once and its state shared; the answers are
    then run as one batch, each row frozen once its answer is exhausted.
    Equal to stacking ``encode_text_t`` per candidate.
    """
    dtype = q_emb.dtype
    state = _zero_state(1, k, dtype)
    for t in range(q_emb.shape[0]):
        state = _stack_step(ad.Tensor(q_emb[t:t + 1]), state, P, "text", k)
    C = len(a_embs)
    ones = ad.Tensor(np.ones((C, 1), dtype=dtype))
    state = [ones @ s for s in state] if state[0].requires_grad else \
        [ad.Tensor(np.repeat(s.data, C, axis=0)) for s in state]
    lengths = np.array([a.shape[0] for a in a_embs])
    E = q_emb.shape[1]
    for t in range(int(lengths.max(initial=0))):
        x = np.zeros((C, E), dtype=dtype)
        for ci, a in enumerate(a_embs):
            if t < a.shape[0]:
                x[ci] = a[t]
        live = (t < lengths).astype(dtype)[:, None]
        mask = None if live.all() else live
        state = _stack_step(ad.Tensor(x), state, P, "text", k, mask)
    return ad.concat([state[0], state[2]], axis=1)


def encode_video_t(phi_v: np.ndarray, P, k: int) -> ad.Tensor:
    """N x H: per-step [hidden layer 1 ; hidden layer 2]."""
    state = _zero_state(1, k, phi_v.dtype)
    out = []
    for t in range(phi_v.shape[0]):
        state = _stack_step(ad.Tensor(phi_v[t:t + 1]), state, P, "video", k)
        out.append(ad.concat([state[0], state[2]], axis=1))
    return ad.concat(out, axis=0)


def attend_t(eps_v: ad.Tensor, eps_w: ad.Tensor, P, vproj: ad.Tensor | None = None):
    if vproj is None:
        vproj = eps_v @ P["W_v"]
    omega_s = ad.tanh(vproj + eps_w @ P["W_w"] + P["b_s"]) @ P["W_s"]
    alpha = ad.softmax(omega_s, axis=0)
    omega_a = ad.sum_(alpha * eps_v, axis=0)
    return alpha, omega_a


def decode_t(omega_a: ad.Tensor, eps_w: ad.Tensor, P) -> ad.Tensor:
    d_f = ad.tanh(omega_a @ P["W_a"] + P["b_a"])
    return (d_f * eps_w) @ P["W_d"] + P["b_d"]


@dataclass(frozen=True, eq=False)
class RowInputs:
    """Everything the network needs for one row, already embedded."""
    question: np.ndarray
    answers: tuple[np.ndarray, ...]
    video: np.ndarray
    label: int


def row_inputs(row: DatasetRow, features: ClipFeatures | FeatureStore, table: EmbeddingTable,
               cfg: ModelConfig, dtype=np.float32) -> RowInputs:
    cf = features.load(row.clip_id) if isinstance(features, FeatureStore) else features
    video = cap_frames(concat_features(cf), cfg.N_max).astype(dtype)
    if video.shape[1] != cfg.D:
        raise ValueError(f"clip {row.clip_id}: feature width {video.shape[1]} != config D {cfg.D}")
    if table.dim != cfg.E:
        raise ValueError(f"embedding width {table.dim} != config E {cfg.E}")
    q = tokenize(row.question)
    if not q:
        raise ValueError(f"row {row.row_id}: question has no tokens")
    answers = []
    for a in row.candidates:
        toks = tokenize(a)
        if not toks:
            raise ValueError(f"row {row.row_id}: candidate {a!r} has no tokens")
        answers.append(table.lookup(toks).astype(dtype))
    return RowInputs(table.lookup(q).astype(dtype), tuple(answers), video, row.label)


def forward_scores_t(inp: RowInputs, P, k: int) -> ad.Tensor:
    """C x 1 scores; the video is encoded once and attention runs per candidate."""
    eps_v = encode_video_t(inp.video, P, k)
    eps_w = encode_candidates_t(inp.question, inp.answers, P, k)
    vproj = eps_v @ P["W_v"]
    omegas = []
    for c in range(len(inp.answers)):
        _, om = attend_t(eps_v, ad.rows(eps_w, c, c + 1), P, vproj)
        omegas.append(om)
    return decode_t(ad.concat(omegas, axis=0), eps_w, P)


# --- numpy-level API --------------------------------------------------------

def _k_of(params: Mapping[str, np.ndarray]) -> int:
    return params["text1.W_h"].shape[0]


def text_encode(phi_w: np.ndarray, params: Params) -> np.ndarray:
    phi_w = np.asarray(phi_w)
    if phi_w.ndim != 2 or phi_w.shape[0] < 1:
        raise ValueError("phi_w must be L x E with L >= 1")
    _check_finite(phi_w, "text input")
    dtype = params["text1.W_x"].dtype
    return encode_text_t(phi_w.astype(dtype), as_leaves(params, False), _k_of(params)).data


def video_encode(phi_am: np.ndarray, params: Params) -> np.ndarray:
    phi_am = np.asarray(phi_am)
    if phi_am.ndim != 2 or phi_am.shape[0] < 1:
        raise ValueError("phi_am must be N x D with N >= 1")
    _check_finite(phi_am, "video input")
    dtype = params["video1.W_x"].dtype
    return encode_video_t(phi_am.astype(dtype), as_leaves(params, False), _k_of(params)).data


def attend(eps_v: np.ndarray, eps_w: np.ndarray, params: Params) -> tuple[np.ndarray, np.ndarray]:
    """Returns (alpha N x 1, omega_a 1 x H)."""
    eps_v, eps_w = np.atleast_2d(eps_v), np.atleast_2d(eps_w)
    if eps_v.shape[0] == 0:
        raise ValueError("attention over zero frames")
    if eps_v.shape[1] != eps_w.shape[1]:
        raise ValueError(f"width mismatch: eps_v {eps_v.shape}, eps_w {eps_w.shape}")
    P = as_leaves(params, False)
    alpha, omega = attend_t(ad.Tensor(eps_v), ad.Tensor(eps_w), P)
    return alpha.data, omega.data


def decode(omega_a: np.ndarray, eps_w: np.ndarray, params: Params) -> float:
    omega_a, eps_w = np.atleast_2d(omega_a), np.atleast_2d(eps_w)
    if omega_a.shape != eps_w.shape:
        raise ValueError(f"width mismatch: omega_a {omega_a.shape}, eps_w {eps_w.shape}")
    _check_finite(omega_a, "omega_a")
    _check_finite(eps_w, "eps_w")
    return float(decode_t(ad.Tensor(omega_a), ad.Tensor(eps_w), as_leaves(params, False)).data[0, 0])


def score_inputs(inp: RowInputs, params: Params) -> np.ndarray:
    return forward_scores_t(inp, as_leaves(params, False), _k_of(params)).data[:, 0].copy()


def score_candidates(row: DatasetRow, features: ClipFeatures | FeatureStore, table: EmbeddingTable,
                     params: Params, config: ModelConfig) -> np.ndarray:
    dtype = params["W_a"].dtype
    return score_inputs(row_inputs(row, features, table, config, dtype), params)


def predict(scores: Sequence[float]) -> int:
    """Index of the highest score; ties go to the lowest index."""
    return int(np.argmax(np.asarray(scores)))


# --- checkpoints ------------------------------------------------------------
#
# magic b"VQAP" | uint16 version | uint32 config-json length | config json
# uint32 tensor count | per tensor: uint16 name length, name, 1-byte dtype
# code ('f' float32 / 'd' float64), uint8 ndim, uint32 dims..., raw LE data

_CKPT_MAGIC = b"VQAP"
_CKPT_VERSION = 1
_DTYPES = {b"f": np.dtype("<f4"), b"d": np.dtype("<f8")}


def encode_checkpoint(params: Params, config: ModelConfig | None = None) -> bytes:
    meta = json.dumps(asdict(config) if config else {}, sort_keys=True).encode()
    out = [_CKPT_MAGIC, struct.pack("<HI", _CKPT_VERSION, len(meta)), meta, struct.pack("<I", len(params))]
    for name, arr in params.items():
        code = next((c for c, dt in _DTYPES.items() if dt == np.dtype(arr.dtype).newbyteorder("<")), None)
        if code is None:
            raise ValueError(f"{name}: unsupported dtype {arr.dtype}")
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb + code + struct.pack("<B", arr.ndim)
                   + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def decode_checkpoint(data: bytes) -> tuple[Params, ModelConfig | None]:
    if data[:4] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    version, mlen = struct.unpack_from("<HI", data, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 10
    meta = json.loads(data[pos:pos + mlen])
    pos += mlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        dt = _DTYPES[data[pos:pos + 1]]
        ndim = data[pos + 1]
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        nbytes = dt.itemsize * int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return params, (ModelConfig(**meta) if meta else None)


def save_checkpoint(params: Params, path: str | Path, config: ModelConfig | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, config))


def load_checkpoint(path: str | Path) -> tuple[Params, ModelConfig | None]:
    return decode_checkpoint(Path(path).read_bytes())
