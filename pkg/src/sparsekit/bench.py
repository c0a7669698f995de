"""Operator benchmark harness with declared byte/flop accounting.

Runs the eight core sparse operators (bucketize, mod, ids partition,
sequence tile, reduce hard, reduce easy, gather, scatter) plus the fused
multi-column variants, and produces roofline OpProfiles. Byte counts are
the algorithmic minimum for each op; wall time is the best of ``repeats``
timed calls, so profiles are stable enough for relative comparisons.
Absolute throughput is reported, never asserted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingTable
from .features import FusedPlan, bucketize, fused_bucketize, fused_mod, mod_transform
from .ragged import RaggedTensor
from .roofline import OpProfile
from .segments import segment_reduce, segment_tile
from .sharding import ShardPlan, unique_partition

I64 = 8
F32 = 4


@dataclass(frozen=True)
class BenchConfig:
    seed: int = 0
    fusion_columns: int = 100
    fusion_values: int = 10_000
    reduce_rows: int = 1_000_000
    dim: int = 16
    partition_ids: int = 1_000_000
    num_shards: int = 8
    tile_k: int = 8
    hard_segment_len: int = 1000
    easy_segment_len: int = 2
    repeats: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        return cls(**d)


# -- declared traffic formulas (checked against hand counts in tests) --------


def bucketize_traffic(n: int, num_edges: int, columns: int = 1):
    reads = n * F32 + columns * num_edges * F32
    writes = n * I64
    flops = n * max(1, int(np.ceil(np.log2(num_edges + 1))) if num_edges else 1)
    return reads, writes, flops


def mod_traffic(n: int):
    return n * I64, n * I64, n


def partition_traffic(n: int, num_unique: int):
    # reads ids once; writes per-shard uniques plus the (shard, pos) inverse.
    return n * I64, num_unique * I64 + n * 2 * I64, 0


def reduce_traffic(n: int, num_segments: int, dim: int, mode: str = "sum"):
    reads = n * dim * F32 + (num_segments + 1) * I64
    writes = num_segments * dim * F32
    flops = n * dim + (num_segments * dim if mode == "mean" else 0)
    return reads, writes, flops


def tile_traffic(taken: int, num_segments: int, k: int, dim: int):
    reads = taken * dim * F32 + (num_segments + 1) * I64
    writes = num_segments * k * dim * F32
    return reads, writes, 0


def gather_traffic(n: int, dim: int):
    return n * I64 + n * dim * F32, n * dim * F32, 0


def scatter_traffic(n: int, dim: int):
    return n * I64 + n * dim * F32, n * dim * F32, 0


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return max(best, 1e-9)


def _flat_ragged(values: np.ndarray) -> RaggedTensor:
    offsets = np.array([0, len(values)], dtype=np.int64)
    return RaggedTensor(values, offsets)


def _segment_offsets(n: int, seg_len: int) -> np.ndarray:
    starts = np.arange(0, n, seg_len, dtype=np.int64)
    return np.append(starts, np.int64(n))


@dataclass
class FusionOutcome:
    """Fused-vs-unfused comparison at the canonical 100x10k shape."""

    profiles: list
    fused_elapsed: float
    unfused_elapsed: float
    fused_dispatches: int
    unfused_dispatches: int
    identical: bool


def run_fusion_benchmark(cfg: BenchConfig, kind: str = "bucketize") -> FusionOutcome:
    """Measure fused vs per-column execution of one transform family."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    cols = [
        _flat_ragged(rng.random(cfg.fusion_values, dtype=np.float32))
        for _ in range(cfg.fusion_columns)
    ]
    n = cfg.fusion_columns * cfg.fusion_values
    if kind == "bucketize":
        edges = np.linspace(0.05, 0.95, 10, dtype=np.float32)
        plan = FusedPlan.for_bucketize([edges] * cfg.fusion_columns)
        unfused = lambda: [bucketize(c, edges) for c in cols]
        fused = lambda: fused_bucketize(plan, cols)
        reads, writes, flops = bucketize_traffic(n, len(edges), cfg.fusion_columns)
    elif kind == "mod":
        cols = [
            _flat_ragged(rng.integers(0, 1 << 40, cfg.fusion_values, dtype=np.int64))
            for _ in range(cfg.fusion_columns)
        ]
        moduli = [1_000_003 + 2 * c for c in range(cfg.fusion_columns)]
        plan = FusedPlan.for_mod(moduli)
        unfused = lambda: [mod_transform(c, m) for c, m in zip(cols, moduli)]
        fused = lambda: fused_mod(plan, cols)
        reads, writes, flops = mod_traffic(n)
    else:
        raise ValueError(f"unknown fusion kind {kind!r}")

    before = plan.dispatch_count
    fused_out = fused()
    fused_dispatches = plan.dispatch_count - before
    unfused_out = unfused()
    identical = all(
        np.array_equal(f.values, u.values) for f, u in zip(fused_out, unfused_out)
    )

    t_unfused = _best_time(unfused, cfg.repeats)
    t_fused = _best_time(fused, cfg.repeats)
    profiles = [
        OpProfile(kind, reads, writes, flops, t_unfused, dispatches=cfg.fusion_columns),
        OpProfile(f"{kind} (fused)", reads, writes, flops, t_fused, dispatches=fused_dispatches),
    ]
    return FusionOutcome(
        profiles, t_fused, t_unfused, fused_dispatches, cfg.fusion_columns, identical
    )


def run_benchmarks(cfg: BenchConfig = BenchConfig()) -> list:
    """All eight operator benchmarks; returns roofline profiles in report order."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    profiles = []

    for kind in ("bucketize", "mod"):
        profiles.extend(run_fusion_benchmark(cfg, kind).profiles)

    # ids partition: dedup + shard split of one large id stream.
    ids = rng.integers(0, cfg.partition_ids, size=cfg.partition_ids, dtype=np.int64)
    plan = ShardPlan(cfg.num_shards)
    num_unique = len(np.unique(ids))
    reads, writes, flops = partition_traffic(len(ids), num_unique)
    elapsed = _best_time(lambda: unique_partition(ids, plan), cfg.repeats)
    profiles.append(OpProfile("ids partition", reads, writes, flops, elapsed))

    # reductions at the 16-dim shape.
    rows = rng.random((cfg.reduce_rows, cfg.dim), dtype=np.float32)
    tile_offs = _segment_offsets(cfg.reduce_rows, cfg.tile_k + 2)
    taken = int(np.minimum(np.diff(tile_offs), cfg.tile_k).sum())
    reads, writes, flops = tile_traffic(taken, len(tile_offs) - 1, cfg.tile_k, cfg.dim)
    elapsed = _best_time(
        lambda: segment_tile(rows, tile_offs, cfg.tile_k, pad=0.0), cfg.repeats
    )
    profiles.append(OpProfile("sequence tile", reads, writes, flops, elapsed))

    for label, seg_len in (("reduce hard", cfg.hard_segment_len), ("reduce easy", cfg.easy_segment_len)):
        offs = _segment_offsets(cfg.reduce_rows, seg_len)
        reads, writes, flops = reduce_traffic(cfg.reduce_rows, len(offs) - 1, cfg.dim)
        elapsed = _best_time(lambda: segment_reduce(rows, offs, "sum", "auto"), cfg.repeats)
        profiles.append(OpProfile(label, reads, writes, flops, elapsed))

    # gather / scatter over a populated table.
    table = EmbeddingTable("bench", cfg.dim, seed=cfg.seed)
    all_ids = np.arange(cfg.reduce_rows, dtype=np.int64)
    offsets = table.lookup_or_insert(all_ids, step=1)
    gather_idx = offsets[rng.integers(0, len(offsets), size=cfg.reduce_rows)]
    reads, writes, flops = gather_traffic(cfg.reduce_rows, cfg.dim)
    elapsed = _best_time(lambda: table.gather(gather_idx), cfg.repeats)
    profiles.append(OpProfile("gather", reads, writes, flops, elapsed))

    scatter_idx = rng.permutation(offsets)
    new_rows = rng.random((cfg.reduce_rows, cfg.dim), dtype=np.float32)
    reads, writes, flops = scatter_traffic(cfg.reduce_rows, cfg.dim)
    elapsed = _best_time(lambda: table.scatter_update(scatter_idx, new_rows), cfg.repeats)
    profiles.append(OpProfile("scatter", reads, writes, flops, elapsed))

    return profiles
