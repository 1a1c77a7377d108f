"""Per-clip appearance/motion feature matrices and the on-disk feature store.

File layout of ``<root>/<clip_id>.feat`` (little-endian)::

    magic   4 bytes   b"VQAF"
    version uint16    1
    N       uint32    frame count
    D_a     uint32    appearance width
    D_m     uint32    motion width
    body    float32   appearance rows (N x D_a) then motion rows (N x D_m), row-major

Real flipped-clip features can be supplied as ``<clip_id>__hflip.feat``.
Otherwise :meth:`FeatureStore.flipped` returns a deterministic surrogate: a
fixed pairing of feature columns is swapped. The surrogate has no visual
meaning; it only gives flipped clips distinct, reproducible features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import derive_rng

MAGIC = b"VQAF"
VERSION = 1
_HEADER = struct.Struct("<4sHIII")
HFLIP_SUFFIX = "__hflip"
SUFFIX = ".feat"

# Widths of VGG-16 fc7 and C3D fc7 activations.
REFERENCE_DIMS = (4096, 4096)


class FeatureError(ValueError):
    pass


class MissingClipError(FeatureError, KeyError):
    def __str__(self):
        return ValueError.__str__(self)


@dataclass(frozen=True, eq=False)
class ClipFeatures:
    clip_id: str
    appearance: np.ndarray
    motion: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.appearance, dtype="<f4")
        m = np.ascontiguousarray(self.motion, dtype="<f4")
        if a.ndim != 2 or m.ndim != 2:
            raise FeatureError(f"{self.clip_id}: feature matrices must be 2-D")
        if a.shape[0] != m.shape[0]:
            raise FeatureError(f"{self.clip_id}: appearance has {a.shape[0]} frames, motion {m.shape[0]}")
        if a.shape[0] < 1:
            raise FeatureError(f"{self.clip_id}: need at least one frame")
        if not (np.isfinite(a).all() and np.isfinite(m).all()):
            raise FeatureError(f"{self.clip_id}: non-finite feature values")
        object.__setattr__(self, "appearance", a)
        object.__setattr__(self, "motion", m)

    @property
    def n_frames(self) -> int:
        return self.appearance.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.appearance.shape[1], self.motion.shape[1]

    def equals(self, other: "ClipFeatures") -> bool:
        return (self.clip_id == other.clip_id
                and np.array_equal(self.appearance, other.appearance)
                and np.array_equal(self.motion, other.motion))


def concat_features(cf: ClipFeatures) -> np.ndarray:
    """N x (D_a + D_m) matrix whose rows are [appearance_i ; motion_i]."""
    return np.concatenate([cf.appearance, cf.motion], axis=1)


def cap_frames(x: np.ndarray, n_max: int | None) -> np.ndarray:
    """Uniform temporal subsampling to at most ``n_max`` rows."""
    n = x.shape[0]
    if n_max is None or n <= n_max:
        return x
    idx = (np.arange(n_max) * n) // n_max + n // (2 * n_max)
    return x[np.minimum(idx, n - 1)]


def encode_clip(cf: ClipFeatures) -> bytes:
    n, (da, dm) = cf.n_frames, cf.dims
    return (_HEADER.pack(MAGIC, VERSION, n, da, dm)
            + cf.appearance.astype("<f4").tobytes()
            + cf.motion.astype("<f4").tobytes())


def decode_clip(clip_id: str, data: bytes) -> ClipFeatures:
    if len(data) < _HEADER.size:
        raise FeatureError(f"{clip_id}: truncated header")
    magic, version, n, da, dm = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FeatureError(f"{clip_id}: bad magic {magic!r}")
    if version != VERSION:
        raise FeatureError(f"{clip_id}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * (da + dm)
    if len(data) != expected:
        raise FeatureError(f"{clip_id}: body is {len(data) - _HEADER.size} bytes, header implies "
                           f"{expected - _HEADER.size}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    a = body[: n * da].reshape(n, da)
    m = body[n * da:].reshape(n, dm)
    return ClipFeatures(clip_id, a.copy(), m.copy())


def save_clip(cf: ClipFeatures, path: str | Path) -> None:
    Path(path).write_bytes(encode_clip(cf))


def load_clip_file(path: str | Path, clip_id: str | None = None) -> ClipFeatures:
    path = Path(path)
    if clip_id is None:
        clip_id = path.name[: -len(SUFFIX)] if path.name.endswith(SUFFIX) else path.stem
    return decode_clip(clip_id, path.read_bytes())


def synth_features(clip_id: str, n: int, dims: tuple[int, int], seed: int) -> ClipFeatures:
    """Deterministic uniform[-1, 1] features keyed by (clip_id, seed)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed, "features", clip_id)
    a = rng.uniform(-1.0, 1.0, size=(n, dims[0])).astype(np.float32)
    m = rng.uniform(-1.0, 1.0, size=(n, dims[1])).astype(np.float32)
    return ClipFeatures(clip_id, a, m)


def column_pairing(width: int, seed: int, label: str) -> np.ndarray:
    """A seeded involutive permutation of ``range(width)`` (random disjoint swaps)."""
    order = derive_rng(seed, "hflip-surrogate", label, width).permutation(width)
    perm = np.arange(width)
    for i in range(0, width - 1, 2):
        a, b = order[i], order[i + 1]
        perm[a], perm[b] = b, a
    return perm


def surrogate_flip(cf: ClipFeatures, seed: int = 0, clip_id: str | None = None) -> ClipFeatures:
    da, dm = cf.dims
    pa = column_pairing(da, seed, "appearance")
    pm = column_pairing(dm, seed, "motion")
    return ClipFeatures(clip_id or cf.clip_id + HFLIP_SUFFIX, cf.appearance[:, pa], cf.motion[:, pm])


class FeatureStore:
    """Directory of ``.feat`` files with fixed (D_a, D_m).

    ``dims`` is taken from the first file read when not given. ``memory``
    holds clips added in-process (for example flipped features produced
    during augmentation) that shadow nothing on disk.
    """

    def __init__(self, root: str | Path | None = None, dims: tuple[int, int] | None = None,
                 surrogate_seed: int = 0):
        self.root = Path(root) if root is not None else None
        self.dims = tuple(dims) if dims is not None else None
        self.surrogate_seed = surrogate_seed
        self.index: dict[str, Path] = {}
        self.memory: dict[str, ClipFeatures] = {}
        self.surrogate_used: set[str] = set()
        self._surrogate_ids: set[str] = set()
        if self.root is not None:
            self.reindex()

    def reindex(self) -> None:
        self.index = {}
        if self.root is None or not self.root.exists():
            return
        for p in sorted(self.root.glob("*" + SUFFIX)):
            self.index[p.name[: -len(SUFFIX)]] = p

    def __contains__(self, clip_id: str) -> bool:
        return clip_id in self.memory or clip_id in self.index

    def clip_ids(self) -> list[str]:
        return sorted(set(self.index) | set(self.memory))

    def _check_dims(self, cf: ClipFeatures) -> None:
        if self.dims is None:
            self.dims = cf.dims
        elif cf.dims != self.dims:
            raise FeatureError(f"{cf.clip_id}: dims {cf.dims} differ from store dims {self.dims}")

    def load(self, clip_id: str) -> ClipFeatures:
        if clip_id in self.memory:
            return self.memory[clip_id]
        if clip_id not in self.index:
            raise MissingClipError(f"clip {clip_id!r} not in feature store")
        cf = load_clip_file(self.index[clip_id], clip_id)
        self._check_dims(cf)
        return cf

    def add(self, cf: ClipFeatures, write: bool = False) -> None:
        self._check_dims(cf)
        if write:
            if self.root is None:
                raise FeatureError("store has no root directory")
            self.root.mkdir(parents=True, exist_ok=True)
            path = self.root / (cf.clip_id + SUFFIX)
            save_clip(cf, path)
            self.index[cf.clip_id] = path
        else:
            self.memory[cf.clip_id] = cf

    def flipped(self, clip_id: str) -> ClipFeatures:
        """Features of the horizontally flipped clip.

        A precomputed ``<clip_id>__hflip`` entry wins; otherwise the column
        pairing surrogate is applied and the clip id is recorded in
        ``surrogate_used``.
        """
        fid = clip_id + HFLIP_SUFFIX
        if fid in self:
            return self.load(fid)
        cf = self.load(clip_id)
        self.surrogate_used.add(clip_id)
        self._surrogate_ids.add(fid)
        return surrogate_flip(cf, self.surrogate_seed, fid)

    def is_surrogate(self, clip_id: str) -> bool:
        """True when ``clip_id`` names flipped features this store synthesised."""
        return clip_id in self._surrogate_ids


def load_clip(store: FeatureStore, clip_id: str) -> ClipFeatures:
    return store.load(clip_id)


def flipped_features(store: FeatureStore, clip_id: str) -> ClipFeatures:
    return store.flipped(clip_id)
