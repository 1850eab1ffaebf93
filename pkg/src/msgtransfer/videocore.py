"""Latent containers, seeded randomness and the ``.msgt`` tensor format.

A video latent is a float32 numpy array laid out (frames, height, width,
channels). Functions that accept latents also accept leading batch axes
unless they say otherwise.

``.msgt`` layout (all little-endian)::

    b"MSGT" | version u8 (=1) | rank u8 | dims u32 * rank | payload f32 * prod(dims)

Archives bundle several named tensors plus a JSON manifest in a zip file
with pinned timestamps so identical contents give identical bytes.
"""

from __future__ import annotations

import io
import json
import math
import struct
import zipfile
from pathlib import Path
from typing import Mapping

import numpy as np

from msgtransfer import kernels

MAGIC = b"MSGT"
VERSION = 1
DEFAULT_SHAPE = (8, 16, 16, 1)

# category vocabulary shared by the data generator and the denoiser
CATEGORIES = ("gaussian_blob", "square")
NULL = None  # unconditional token; distinct from every category id

_MASK64 = (1 << 64) - 1


class TensorFormatError(ValueError):
    """Raised when a ``.msgt`` file or archive cannot be parsed."""


def category_id(name: str) -> int:
    try:
        return CATEGORIES.index(name)
    except ValueError:
        raise ValueError(f"unknown category {name!r}; expected one of {CATEGORIES}") from None


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int | str) -> int:
    """Child seed for ``(seed, key, ...)``; strings are hashed stably."""
    h = seed & _MASK64
    for key in keys:
        if isinstance(key, str):
            k = int.from_bytes(key.encode("utf-8")[:8].ljust(8, b"\0"), "little")
            k ^= len(key) << 56
        else:
            k = int(key)
        h = _mix64(h ^ _mix64(k + 0x9E3779B97F4A7C15))
    return h


class SeededRng:
    """Counter-based SplitMix64 stream with Box-Muller normals.

    Draw ``k`` (1-based) is ``mix(seed + k * golden)``, so any block of the
    stream can be produced without replaying the ones before it. Normal
    draws always consume an even number of counters. Not thread-safe;
    give each task its own child via :meth:`spawn`.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, counter={self.counter})"

    def spawn(self, *keys: int | str) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, *keys))

    def raw(self, n: int) -> np.ndarray:
        out = kernels.splitmix64_block(self.seed, self.counter, n)
        self.counter += n
        return out

    def uniform(self, shape=()) -> np.ndarray:
        n = math.prod(shape) if isinstance(shape, tuple) else int(shape)
        out = kernels.uniform_block(self.seed, self.counter, n)
        self.counter += n
        return out.reshape(shape)

    def normal(self, shape=()) -> np.ndarray:
        n = math.prod(shape) if isinstance(shape, tuple) else int(shape)
        out = kernels.gaussian_block(self.seed, self.counter, n)
        self.counter += 2 * ((n + 1) // 2)
        return out.reshape(shape)

    def integers(self, high: int, shape=()) -> np.ndarray:
        """Integers in ``[0, high)``."""
        return np.minimum((self.uniform(shape) * high).astype(np.int64), high - 1)


def gaussian_like(rng: SeededRng, shape: tuple[int, ...]) -> np.ndarray:
    shape = tuple(int(n) for n in shape)
    if not shape or any(n <= 0 for n in shape):
        raise ValueError(f"shape must have positive dimensions, got {shape}")
    return rng.normal(shape).astype(np.float32)


# arithmetic helpers; reductions accumulate in float64

def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a + b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return (a * c).astype(a.dtype)


def dot(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel().astype(np.float64), b.ravel().astype(np.float64)))


def l2(a: np.ndarray) -> float:
    return math.sqrt(dot(a, a))


def check_latent(v: np.ndarray) -> np.ndarray:
    if v.ndim != 4:
        raise ValueError(f"video latent must be rank 4 (F, H, W, C), got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("video latent contains non-finite values")
    return v


# .msgt tensor files

def encode_tensor(v: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(v, dtype="<f4")
    if arr.ndim > 255:
        raise ValueError("rank exceeds 255")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFormatError("bad magic: not a .msgt tensor")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    off = 6 + 4 * rank
    if len(buf) < off:
        raise TensorFormatError(f"truncated header: rank {rank} needs {off} bytes, got {len(buf)}")
    dims = struct.unpack_from(f"<{rank}I", buf, 6)
    expected = 4 * math.prod(dims)
    if len(buf) - off != expected:
        raise TensorFormatError(
            f"payload length {len(buf) - off} does not match dims {dims} ({expected} bytes)"
        )
    return np.frombuffer(buf, dtype="<f4", offset=off).reshape(dims).astype(np.float32)


def save_tensor(path, v: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(v))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def _zip_entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_archive(path, tensors: Mapping[str, np.ndarray], manifest: dict | None = None) -> None:
    """Write named tensors (in the given order) plus a JSON manifest."""
    meta = dict(manifest or {})
    meta["tensors"] = list(tensors)
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        zf.writestr(_zip_entry("manifest.json"), json.dumps(meta, sort_keys=True, indent=1))
        for name, arr in tensors.items():
            zf.writestr(_zip_entry(f"{name}.msgt"), encode_tensor(arr))
    Path(path).write_bytes(buf.getvalue())


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("manifest.json"))
            tensors = {name: decode_tensor(zf.read(f"{name}.msgt")) for name in meta["tensors"]}
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"malformed archive {path}: {exc}") from exc
    return tensors, meta


# PGM frame export

def to_frames_u8(v: np.ndarray) -> np.ndarray:
    """Map a single-channel clip affinely from its [min, max] onto [0, 255]."""
    if v.ndim != 4 or v.shape[-1] != 1:
        raise ValueError(f"frame export needs a (F, H, W, 1) clip, got {v.shape}")
    x = v[..., 0].astype(np.float64)
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.full(x.shape, 128, dtype=np.uint8)
    return np.rint((x - lo) * (255.0 / (hi - lo))).clip(0, 255).astype(np.uint8)


def export_frames(path_prefix, v: np.ndarray) -> list[Path]:
    frames = to_frames_u8(v)
    paths = []
    for i, frame in enumerate(frames):
        p = Path(f"{path_prefix}_{i:04d}.pgm")
        h, w = frame.shape
        p.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + frame.tobytes())
        paths.append(p)
    return paths


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=3)
    if parts[0] != b"P5":
        raise TensorFormatError(f"{path} is not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(data[-w * h :], dtype=np.uint8).reshape(h, w)
