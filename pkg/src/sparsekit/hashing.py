"""64-bit hashing primitives shared by feature transforms, shard routing,
and deterministic embedding initialization.

Everything here is pure integer arithmetic modulo 2**64, so results are
identical across runs, platforms, and worker counts.
"""

from __future__ import annotations

import numpy as np

U64 = np.uint64

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

_BASIS = U64(FNV_OFFSET_BASIS)
_PRIME = U64(FNV_PRIME)
_BYTE = U64(0xFF)

# SplitMix64 finalizer constants (Steele/Vigna).
_MIX_A = U64(0xBF58476D1CE4E5B9)
_MIX_B = U64(0x94D049BB133111EB)
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def to_u64(ids) -> np.ndarray:
    """Reinterpret int64 values as their uint64 bit patterns."""
    arr = np.asarray(ids)
    if arr.dtype == np.uint64:
        return arr
    return arr.astype(np.int64).astype(np.uint64)


def mix64(x) -> np.ndarray:
    """SplitMix64 finalizer over a uint64 array (or scalar)."""
    z = to_u64(x)
    z = (z ^ (z >> U64(30))) * _MIX_A
    z = (z ^ (z >> U64(27))) * _MIX_B
    return z ^ (z >> U64(31))


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64 over raw bytes; unsigned result as a Python int."""
    h = FNV_OFFSET_BASIS
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def fnv1a64_batch(strings) -> np.ndarray:
    """FNV-1a 64 over a sequence of byte strings, vectorized by byte position.

    Returns a uint64 array aligned with the input sequence.
    """
    n = len(strings)
    out = np.full(n, _BASIS, dtype=np.uint64)
    if n == 0:
        return out
    lengths = np.fromiter((len(s) for s in strings), count=n, dtype=np.int64)
    max_len = int(lengths.max())
    if max_len == 0:
        return out
    blob = np.frombuffer(b"".join(strings), dtype=np.uint8)
    starts = np.zeros(n, dtype=np.int64)
    np.cumsum(lengths[:-1], out=starts[1:])
    for j in range(max_len):
        active = lengths > j
        byte = blob[starts[active] + j].astype(np.uint64)
        out[active] = (out[active] ^ byte) * _PRIME
    return out


def fnv1a64_pairs(x, y) -> np.ndarray:
    """FNV-1a 64 over the 16-byte little-endian concatenation of x then y.

    x, y: int64/uint64 arrays of equal shape. Vectorized over elements.
    """
    xs = to_u64(x)
    ys = to_u64(y)
    h = np.full(xs.shape, _BASIS, dtype=np.uint64)
    for src in (xs, ys):
        for k in range(8):
            byte = (src >> U64(8 * k)) & _BYTE
            h = (h ^ byte) * _PRIME
    return h
