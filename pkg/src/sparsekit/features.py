"""Training-time feature preprocessing: hashing, bucketization, modulus
reduction, pairwise crossing, and fused multi-column variants.

All transforms are pure functions over immutable ragged inputs and
preserve row structure. The fused variants execute many columns in one
batched dispatch and record the dispatch on the plan, which is the
CPU-observable analog of collapsing many small kernel launches into one.
"""

from __future__ import annotations

import threading

import numpy as np

from . import telemetry
from .hashing import fnv1a64_batch, fnv1a64_pairs
from .ragged import RaggedTensor


def _check_boundaries(boundaries: np.ndarray) -> np.ndarray:
    b = np.asarray(boundaries, dtype=np.float32)
    if b.ndim != 1:
        raise ValueError("boundaries must be a 1-D array")
    if len(b) > 1 and np.any(np.diff(b) <= 0):
        raise ValueError("boundaries must be strictly increasing")
    return b


def hash_feature(strings: RaggedTensor) -> RaggedTensor:
    """Map byte strings to int64 ids via FNV-1a 64 over the raw bytes.

    Deterministic across runs and platforms; the unsigned hash is
    reinterpreted as signed 64-bit.
    """
    telemetry.bump("features.hash_feature")
    hashed = fnv1a64_batch(list(strings.values)).view(np.int64)
    return strings.with_values(hashed)


def bucketize(values: RaggedTensor, boundaries) -> RaggedTensor:
    """Bin floats against increasing edges: bin(v) = #{edges e : v >= e}.

    A value equal to an edge falls in the upper bucket. Bins range over
    [0, len(boundaries)]; NaN input is rejected.
    """
    telemetry.bump("features.bucketize")
    b = _check_boundaries(boundaries)
    vals = np.asarray(values.values, dtype=np.float32)
    if np.isnan(vals).any():
        raise ValueError("bucketize input contains NaN")
    bins = np.searchsorted(b, vals, side="right").astype(np.int64)
    return values.with_values(bins)


def mod_transform(ids: RaggedTensor, modulus: int) -> RaggedTensor:
    """Nonnegative remainder of each id modulo ``modulus`` (result in [0, modulus))."""
    telemetry.bump("features.mod_transform")
    if modulus <= 0:
        raise ValueError("modulus must be > 0")
    out = np.remainder(np.asarray(ids.values, dtype=np.int64), np.int64(modulus))
    return ids.with_values(out)


def cross(a: RaggedTensor, b: RaggedTensor) -> RaggedTensor:
    """Per-row Cartesian product of two id columns, pairs combined by hashing.

    Output row i holds len(a_i) * len(b_i) ids; pair (x, y) is combined as
    FNV-1a over the 16-byte little-endian concatenation of x then y, with
    x-major ordering.
    """
    telemetry.bump("features.cross")
    if a.num_rows != b.num_rows:
        raise ValueError(f"row-count mismatch: {a.num_rows} vs {b.num_rows}")
    la = a.row_lengths()
    lb = b.row_lengths()
    out_lens = la * lb
    offsets = np.zeros(a.num_rows + 1, dtype=np.int64)
    np.cumsum(out_lens, out=offsets[1:])
    total = int(offsets[-1])
    if total == 0:
        return RaggedTensor(np.empty(0, dtype=np.int64), offsets)
    starts = offsets[:-1]
    within = np.arange(total, dtype=np.int64) - np.repeat(starts, out_lens)
    lb_rep = np.repeat(lb, out_lens)
    ai = np.repeat(a.row_offsets[:-1], out_lens) + within // lb_rep
    bi = np.repeat(b.row_offsets[:-1], out_lens) + within % lb_rep
    combined = fnv1a64_pairs(a.values[ai], b.values[bi]).view(np.int64)
    return RaggedTensor(combined, offsets)


class FusedPlan:
    """A batch of same-kind column transforms executed as one dispatch.

    For bucketize plans the per-column edge sets are merged into one sorted
    union plus a (column, union-bin) -> column-bin remap table, so a single
    searchsorted over the concatenated values produces bit-identical bins
    to the per-column path.
    """

    def __init__(self, kind: str, params: list):
        if kind not in ("bucketize", "mod"):
            raise ValueError(f"unknown fused kind {kind!r}")
        self.kind = kind
        self._lock = threading.Lock()
        self._dispatches = 0
        if kind == "bucketize":
            self.boundaries = [_check_boundaries(b) for b in params]
            self._build_union()
        else:
            self.moduli = np.asarray(params, dtype=np.int64)
            if self.moduli.ndim != 1 or np.any(self.moduli <= 0):
                raise ValueError("moduli must be positive")

    @classmethod
    def for_bucketize(cls, boundaries_per_column) -> "FusedPlan":
        return cls("bucketize", list(boundaries_per_column))

    @classmethod
    def for_mod(cls, moduli) -> "FusedPlan":
        return cls("mod", list(moduli))

    def _build_union(self) -> None:
        if self.boundaries:
            allb = np.concatenate([b for b in self.boundaries] or [np.empty(0)])
        else:
            allb = np.empty(0, dtype=np.float32)
        self._union = np.unique(allb)
        # remap[c, j]: column-c bin for values whose union bin is j.
        remap = np.zeros((len(self.boundaries), len(self._union) + 1), dtype=np.int64)
        for c, b in enumerate(self.boundaries):
            remap[c, 1:] = np.searchsorted(b, self._union, side="right")
        self._remap = remap

    @property
    def num_columns(self) -> int:
        return len(self.boundaries) if self.kind == "bucketize" else len(self.moduli)

    @property
    def dispatch_count(self) -> int:
        with self._lock:
            return self._dispatches

    def _record_dispatch(self) -> None:
        with self._lock:
            self._dispatches += 1

    def _concat(self, columns, dtype):
        if len(columns) != self.num_columns:
            raise ValueError(
                f"plan has {self.num_columns} columns, got {len(columns)}"
            )
        lens = np.fromiter(
            (len(c.values) for c in columns), count=len(columns), dtype=np.int64
        )
        vals = (
            np.concatenate([np.asarray(c.values, dtype=dtype) for c in columns])
            if columns
            else np.empty(0, dtype=dtype)
        )
        col_index = np.repeat(np.arange(len(columns), dtype=np.int64), lens)
        return vals, col_index, lens


def fused_bucketize(plan: FusedPlan, columns: list) -> list:
    """Bucketize many columns in one dispatch; bit-identical to per-column calls."""
    telemetry.bump("features.fused_bucketize")
    if plan.kind != "bucketize":
        raise ValueError("plan is not a bucketize plan")
    vals, col_index, lens = plan._concat(columns, np.float32)
    if np.isnan(vals).any():
        raise ValueError("bucketize input contains NaN")
    union_bins = np.searchsorted(plan._union, vals, side="right")
    bins = plan._remap[col_index, union_bins]
    plan._record_dispatch()
    splits = np.split(bins, np.cumsum(lens)[:-1])
    return [c.with_values(s) for c, s in zip(columns, splits)]


def fused_mod(plan: FusedPlan, columns: list) -> list:
    """Modulus-reduce many columns in one dispatch; bit-identical to per-column calls."""
    telemetry.bump("features.fused_mod")
    if plan.kind != "mod":
        raise ValueError("plan is not a mod plan")
    vals, col_index, lens = plan._concat(columns, np.int64)
    out = np.remainder(vals, plan.moduli[col_index])
    plan._record_dispatch()
    splits = np.split(out, np.cumsum(lens)[:-1])
    return [c.with_values(s) for c, s in zip(columns, splits)]
