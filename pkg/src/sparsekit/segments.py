"""Segment reductions over contiguous row groups (embedding pooling).

Two execution strategies cover the two regimes of ragged pooling:

* ``sequential`` walks segments in order (the low-conflict analog of
  warp-merged accumulation) and is picked when segments are long;
* ``scatter`` accumulates every row into its segment slot (the
  atomic-add analog) and is picked when segments are short.

Both produce identical results up to float rounding; ``auto`` switches on
mean segment length.
"""

from __future__ import annotations

import numpy as np

from . import telemetry
from .ragged import row_ranges

# Mean segment length at or above which auto mode reduces sequentially.
AUTO_SEQUENTIAL_MIN_MEAN_LEN = 16


def _check_segments(segments: np.ndarray, n: int) -> np.ndarray:
    offs = np.asarray(segments, dtype=np.int64)
    if offs.ndim != 1 or len(offs) < 1 or offs[0] != 0:
        raise ValueError("segment offsets must be 1-D and start at 0")
    if np.any(np.diff(offs) < 0):
        raise ValueError("segment offsets must be nondecreasing")
    if offs[-1] != n:
        raise ValueError(f"segment offsets end {int(offs[-1])} != num rows {n}")
    return offs


def _reduce_sequential(rows: np.ndarray, offs: np.ndarray) -> np.ndarray:
    num_segments = len(offs) - 1
    n = len(rows)
    if num_segments == 0 or n == 0:
        return np.zeros((num_segments, rows.shape[1]), dtype=rows.dtype)
    # reduceat cannot take an index == n and returns rows[i] for empty
    # segments; clip then zero the empties.
    idx = np.minimum(offs[:-1], n - 1)
    out = np.add.reduceat(rows, idx, axis=0)
    empty = offs[1:] == offs[:-1]
    if empty.any():
        out[empty] = 0
    return out


def _reduce_scatter(rows: np.ndarray, offs: np.ndarray) -> np.ndarray:
    num_segments = len(offs) - 1
    out = np.zeros((num_segments, rows.shape[1]), dtype=rows.dtype)
    if num_segments == 0 or len(rows) == 0:
        return out
    seg_ids = np.repeat(np.arange(num_segments, dtype=np.int64), np.diff(offs))
    np.add.at(out, seg_ids, rows)
    return out


def segment_reduce(rows, segments, mode: str = "sum", strategy: str = "auto") -> np.ndarray:
    """Pool contiguous row segments to one row each.

    rows      (n, dim) matrix
    segments  offsets array of length num_segments+1 over n
    mode      "sum" or "mean"; empty segments yield zero rows
    strategy  "auto" | "sequential" | "scatter"
    """
    telemetry.bump("segments.segment_reduce")
    rows = np.asarray(rows)
    if rows.ndim == 1:
        rows = rows[:, None]
    offs = _check_segments(segments, len(rows))
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    if strategy == "auto":
        num_segments = len(offs) - 1
        mean_len = len(rows) / num_segments if num_segments else 0.0
        strategy = (
            "sequential" if mean_len >= AUTO_SEQUENTIAL_MIN_MEAN_LEN else "scatter"
        )
    if strategy == "sequential":
        out = _reduce_sequential(rows, offs)
    elif strategy == "scatter":
        out = _reduce_scatter(rows, offs)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if mode == "mean":
        lens = np.diff(offs).astype(out.dtype)
        np.divide(out, lens[:, None], out=out, where=lens[:, None] > 0)
    return out


def segment_tile(rows, segments, k: int, pad: float = 0.0) -> np.ndarray:
    """Concatenate the first min(k, len) rows of each segment, padded to k*dim.

    Output shape is (num_segments, k * dim); segments longer than k keep
    their first k rows.
    """
    telemetry.bump("segments.segment_tile")
    if k < 0:
        raise ValueError("k must be >= 0")
    rows = np.asarray(rows)
    if rows.ndim == 1:
        rows = rows[:, None]
    offs = _check_segments(segments, len(rows))
    num_segments = len(offs) - 1
    dim = rows.shape[1]
    out = np.full((num_segments, k, dim), pad, dtype=rows.dtype)
    if num_segments and k:
        take = np.minimum(np.diff(offs), k)
        src = row_ranges(offs[:-1], take)
        seg_idx = np.repeat(np.arange(num_segments, dtype=np.int64), take)
        within = src - np.repeat(offs[:-1], take)
        out[seg_idx, within] = rows[src]
    return out.reshape(num_segments, k * dim)
