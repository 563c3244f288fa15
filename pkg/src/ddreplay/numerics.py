"""Seeded randomness, float64 tensor helpers, statistics and the
finite-difference gradient oracle.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Batches are
2-D arrays with one sample per row.

Randomness uses numpy's PCG64 bit generator seeded through ``SeedSequence``.
Labeled sub-streams (``sub_rng``) hash the label with SHA-256 into the
sequence's spawn key, so streams for different labels never overlap and do
not depend on the order in which they are created.
"""

from __future__ import annotations

import hashlib
import struct
from typing import BinaryIO, Callable

import numpy as np

TENSOR_MAGIC = b"CFT1"


class FormatError(ValueError):
    """Raised when a binary file does not follow the expected layout."""


def seeded_rng(seed: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def sub_rng(seed: int, label: str) -> np.random.Generator:
    """Independent stream for ``(seed, label)``."""
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=(_label_key(label),))
    return np.random.Generator(np.random.PCG64(ss))


def child_rng(rng: np.random.Generator, label: str) -> np.random.Generator:
    """Derive a labeled stream from an existing generator.

    Consumes exactly one 64-bit draw from ``rng``.
    """
    base = int(rng.integers(0, 2**63, dtype=np.int64))
    return sub_rng(base, label)


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_batch(x, name: str = "batch") -> np.ndarray:
    arr = as_tensor(x, name)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D [n, dim], got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    return arr


def gaussian_sample(rng: np.random.Generator, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    z = rng.standard_normal(shape)
    return mean + std * z


def mean_var(t) -> tuple[float, float]:
    """Population mean and variance over all entries."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("mean_var of an empty tensor")
    mu = float(arr.mean())
    return mu, float(np.mean((arr - mu) ** 2))


def finite_diff_grad(fn: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one entry at a time."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value while differentiating entry {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


# -- CFT1 tensor format ------------------------------------------------------


def encode_shape(shape) -> bytes:
    shape = tuple(int(d) for d in shape)
    return struct.pack("<I", len(shape)) + b"".join(struct.pack("<Q", d) for d in shape)


def tensor_to_bytes(t) -> bytes:
    arr = as_tensor(t)
    return TENSOR_MAGIC + encode_shape(arr.shape) + arr.astype("<f8").tobytes(order="C")


def read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated payload while reading {what}")
    return buf


def read_shape(fh: BinaryIO) -> tuple[int, ...]:
    (rank,) = struct.unpack("<I", read_exact(fh, 4, "rank"))
    dims = tuple(struct.unpack("<Q", read_exact(fh, 8, "dimension"))[0] for _ in range(rank))
    return dims


def read_payload(fh: BinaryIO, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    buf = read_exact(fh, 8 * count, "tensor data")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)


def tensor_from_stream(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    shape = read_shape(fh)
    return read_payload(fh, shape)


def save_tensor(t, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = tensor_from_stream(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after tensor payload")
    return arr
