"""Model-parallel embedding sharding, simulated in one process.

Tables sharing an embedding dimension merge into one logical table whose
rows are spread over N worker shards by a mixed hash of the feature id.
Lookups and gradient updates run as a synchronized two-phase all-to-all:
requests are deduplicated and partitioned first, every shard then serves
its partition, and responses scatter back to input order. Results are
identical whether shards run on worker threads or are iterated inline,
and identical for any shard count (ids are deduplicated, gradients of
duplicates are pre-summed in input order, and initial rows are keyed by
feature id, never by shard or slot).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import telemetry
from .embedding import DEFAULT_BLOCK_SIZE, EmbeddingTable
from .hashing import fnv1a64, mix64, to_u64
from .optim import AdamConfig, sparse_adam_step


@dataclass(frozen=True)
class ShardPlan:
    """Stateless id -> shard assignment: mix64(id) mod num_shards.

    The SplitMix64 finalizer scrambles sequential id ranges so the mod is
    uniform in practice, not just for random ids.
    """

    num_shards: int

    def __post_init__(self):
        if self.num_shards < 1:
            raise ValueError("num_shards must be >= 1")

    def shard_of(self, ids) -> np.ndarray:
        u = mix64(to_u64(np.asarray(ids, dtype=np.int64)))
        return (u % np.uint64(self.num_shards)).astype(np.int64)


@dataclass
class PartitionResult:
    """Deduplicated per-shard id arrays plus the inverse routing index."""

    shard_ids: list  # per shard: unique ids in first-occurrence order
    inverse_shard: np.ndarray  # (n,) owning shard of each input position
    inverse_pos: np.ndarray  # (n,) position within the shard's unique array

    @property
    def num_unique(self) -> int:
        return sum(len(s) for s in self.shard_ids)

    def restore(self, per_shard_rows: list) -> np.ndarray:
        """Scatter per-shard response rows back to input order."""
        n = len(self.inverse_shard)
        sample = per_shard_rows[0]
        out = np.empty((n,) + sample.shape[1:], dtype=sample.dtype)
        for s, rows in enumerate(per_shard_rows):
            sel = self.inverse_shard == s
            out[sel] = rows[self.inverse_pos[sel]]
        return out

    def reconstruct_ids(self) -> np.ndarray:
        """Inverse of the partition: the original id array."""
        cols = [np.asarray(s, dtype=np.int64)[:, None] for s in self.shard_ids]
        return self.restore(cols).reshape(-1)


def unique_partition(ids, plan: ShardPlan) -> PartitionResult:
    """Deduplicate ids and split them by owning shard in one pass.

    Per-shard arrays keep first-occurrence order, so the output is
    deterministic for a given input regardless of shard count.
    """
    telemetry.bump("sharding.unique_partition")
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    S = plan.num_shards
    if n == 0:
        empty = np.empty(0, dtype=np.int64)
        return PartitionResult([empty.copy() for _ in range(S)], empty.copy(), empty.copy())
    uniq_sorted, first_idx, inv = np.unique(ids, return_index=True, return_inverse=True)
    order = np.argsort(first_idx, kind="stable")
    uniq = uniq_sorted[order]
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order), dtype=np.int64)
    shard_of_uniq = plan.shard_of(uniq)
    pos_of_uniq = np.empty(len(uniq), dtype=np.int64)
    shard_ids = []
    for s in range(S):
        sel = shard_of_uniq == s
        shard_ids.append(uniq[sel])
        pos_of_uniq[sel] = np.arange(int(sel.sum()), dtype=np.int64)
    r = rank[inv]
    return PartitionResult(shard_ids, shard_of_uniq[r], pos_of_uniq[r])


@dataclass
class LoadStats:
    counts: np.ndarray
    imbalance: float


def load_stats(ids, plan: ShardPlan) -> LoadStats:
    """Per-shard unique-id counts and max/mean imbalance (>= 1.0)."""
    telemetry.bump("sharding.load_stats")
    ids = np.asarray(ids, dtype=np.int64)
    uniq = np.unique(ids)
    counts = np.bincount(plan.shard_of(uniq), minlength=plan.num_shards).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        return LoadStats(counts, 1.0)
    mean = total / plan.num_shards
    return LoadStats(counts, float(counts.max()) / mean)


class LogicalTable:
    """Same-dimension tables merged into one sharded table.

    Holds one EmbeddingTable per simulated worker. When built by
    merge_tables_by_dim the member tables' id spaces are kept disjoint by
    mixing each member's name hash into its feature ids before storage.
    """

    def __init__(
        self,
        name: str,
        dim: int,
        num_shards: int,
        seed: int = 0,
        members: list | None = None,
        namespaced: bool = False,
        block_size: int = DEFAULT_BLOCK_SIZE,
        evict_threshold: int | None = None,
        dtype=np.float32,
    ):
        if num_shards < 1:
            raise ValueError("num_shards must be >= 1")
        self.name = name
        self.dim = dim
        self.seed = seed
        self.members = list(members) if members is not None else [name]
        self.namespaced = namespaced
        self.shards = [
            EmbeddingTable(
                f"{name}/shard{s}",
                dim,
                seed=seed,
                block_size=block_size,
                evict_threshold=evict_threshold,
                dtype=dtype,
            )
            for s in range(num_shards)
        ]
        self._member_salt = {m: np.uint64(fnv1a64(m.encode("utf-8"))) for m in self.members}

    @property
    def num_shards(self) -> int:
        return len(self.shards)

    @property
    def num_rows(self) -> int:
        return sum(t.num_rows for t in self.shards)

    def keys_for(self, member: str, ids) -> np.ndarray:
        """Storage keys for a member column's raw feature ids."""
        ids = np.asarray(ids, dtype=np.int64)
        if not self.namespaced:
            return ids
        salt = self._member_salt.get(member)
        if salt is None:
            raise KeyError(f"{member!r} is not a member of logical table {self.name!r}")
        return mix64(to_u64(ids) ^ salt).view(np.int64)

    def evict(self, current_step: int) -> int:
        return sum(t.evict(current_step) for t in self.shards)


def merge_tables_by_dim(
    tables,
    num_shards: int = 1,
    seed: int = 0,
    block_size: int = DEFAULT_BLOCK_SIZE,
    evict_threshold: int | None = None,
    dtype=np.float32,
) -> list:
    """Group (name, dim) declarations into one LogicalTable per distinct dim.

    Member id namespaces are disambiguated by the member-name hash, so
    id 5 of two merged tables maps to two different rows.
    """
    telemetry.bump("sharding.merge_tables_by_dim")
    names = [n for n, _ in tables]
    if len(set(names)) != len(names):
        raise ValueError("duplicate table name")
    by_dim: dict[int, list] = {}
    for n, d in tables:
        by_dim.setdefault(int(d), []).append(n)
    out = []
    for d in sorted(by_dim):
        out.append(
            LogicalTable(
                f"dim{d}",
                d,
                num_shards,
                seed=seed,
                members=by_dim[d],
                namespaced=True,
                block_size=block_size,
                evict_threshold=evict_threshold,
                dtype=dtype,
            )
        )
    return out


def _run_per_shard(fn, num_shards: int, parallel: bool) -> list:
    # Phase barrier: all shard work joins before results are used.
    if parallel and num_shards > 1:
        with ThreadPoolExecutor(max_workers=num_shards) as pool:
            return list(pool.map(fn, range(num_shards)))
    return [fn(s) for s in range(num_shards)]


def all_to_all_lookup(
    lt: LogicalTable, ids, plan: ShardPlan, step: int, parallel: bool = True
) -> np.ndarray:
    """Embedding rows for ids, served by their owning shards.

    Phase 1 deduplicates and partitions the request; phase 2 has every
    shard look up (inserting as needed) and gather its partition; the
    responses then scatter back to input order. Row i equals the embedding
    of ids[i]; duplicates share rows, and the result is bit-identical to a
    single-shard lookup of the same ids.
    """
    telemetry.bump("sharding.all_to_all_lookup")
    if plan.num_shards != lt.num_shards:
        raise ValueError(
            f"plan has {plan.num_shards} shards, table has {lt.num_shards}"
        )
    pr = unique_partition(ids, plan)

    def serve(s: int) -> np.ndarray:
        table = lt.shards[s]
        offsets = table.lookup_or_insert(pr.shard_ids[s], step)
        return table.gather(offsets)

    rows = _run_per_shard(serve, lt.num_shards, parallel)
    return pr.restore(rows)


def all_to_all_grad_update(
    lt: LogicalTable,
    ids,
    grads,
    plan: ShardPlan,
    cfg: AdamConfig,
    step: int,
    parallel: bool = True,
) -> None:
    """Route gradients to owning shards and apply one sparse Adam step.

    Gradients of duplicate ids are pre-summed (in input order) before
    routing, so each unique row receives exactly one update per step and
    the result matches a single-shard run bit for bit.
    """
    telemetry.bump("sharding.all_to_all_grad_update")
    if plan.num_shards != lt.num_shards:
        raise ValueError(
            f"plan has {plan.num_shards} shards, table has {lt.num_shards}"
        )
    ids = np.asarray(ids, dtype=np.int64)
    grads = np.asarray(grads)
    if grads.shape != (len(ids), lt.dim):
        raise ValueError(f"grads shape {grads.shape} != ({len(ids)}, {lt.dim})")
    pr = unique_partition(ids, plan)

    # Pre-aggregation happens before routing and follows input order per
    # shard, which keeps float sums independent of the shard count.
    agg = []
    for s in range(lt.num_shards):
        sel = pr.inverse_shard == s
        g = np.zeros((len(pr.shard_ids[s]), lt.dim), dtype=grads.dtype)
        np.add.at(g, pr.inverse_pos[sel], grads[sel])
        agg.append(g)

    def update(s: int) -> None:
        table = lt.shards[s]
        offsets = table.lookup_or_insert(pr.shard_ids[s], step)
        sparse_adam_step(table.store, offsets, agg[s], cfg, step)

    _run_per_shard(update, lt.num_shards, parallel)
