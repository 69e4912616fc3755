"""Dense float64 kernels shared by the rest of the package.

Batched quantities are plain ``numpy.ndarray`` values of dtype float64 in
row-major ``[batch, features]`` layout.  Random streams come from numpy's
PCG64 bit generator, which is specified to produce the same sequence on
every platform for a given seed.
"""
from __future__ import annotations

import zlib

import numpy as np

DTYPE = np.float64


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _check_finite(a: np.ndarray, what: str = "logits") -> None:
    if not np.isfinite(a).all():
        raise ValueError(f"non-finite {what}")


def logsumexp(row) -> float | np.ndarray:
    """Max-shifted log-sum-exp over the last axis."""
    a = np.asarray(row, dtype=DTYPE)
    if a.size == 0 or a.shape[-1] == 0:
        raise ValueError("logsumexp of an empty row")
    _check_finite(a)
    m = np.max(a, axis=-1, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=-1, keepdims=True)) + m
    out = np.squeeze(out, axis=-1)
    return float(out) if out.ndim == 0 else out


def log_softmax(logits) -> np.ndarray:
    a = as_matrix(logits, "logits")
    if a.shape[1] < 1:
        raise ValueError("need at least one class")
    _check_finite(a)
    shifted = a - a.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def add_bias(x, b) -> np.ndarray:
    x = as_matrix(x, "x")
    b = np.asarray(b, dtype=DTYPE)
    if b.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ValueError(f"shape mismatch: bias {b.shape} for input {x.shape}")
    return x + b


def make_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    """PCG64 generator for ``seed``; ``stream`` names an independent substream.

    Substreams let the data, initialisation and batching draws vary
    independently of each other when only one of them is reseeded.
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    if stream is None:
        ss = np.random.SeedSequence(seed)
    else:
        ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(stream.encode()),))
    return np.random.Generator(np.random.PCG64(ss))
