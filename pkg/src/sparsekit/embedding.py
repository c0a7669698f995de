"""Conflict-free dynamic embedding storage.

Two-tier layout: an IDMap (feature id -> slot offset) in front of a
BlockStore of fixed-size blocks holding parameter rows, optimizer moments,
and a last-touched step per row. Distinct live ids never share a slot, so
every feature learns its own row. Rows for new ids come from a
counter-based initializer keyed by (table seed, feature id, column), which
makes embeddings independent of shard count and insertion order.

Single-writer / multi-reader per table: gather may run concurrently;
lookup_or_insert, scatter_update, and evict need exclusive access.
"""

from __future__ import annotations

import numpy as np

from . import telemetry
from .hashing import GOLDEN_GAMMA, mix64, to_u64

DEFAULT_BLOCK_SIZE = 65536


def initial_rows(seed: int, ids, dim: int, dtype=np.float32) -> np.ndarray:
    """Deterministic initial embedding rows, uniform in [-1/sqrt(dim), +1/sqrt(dim)).

    Row content depends only on (seed, feature id, column index): identical
    across runs, shard counts, and insertion orders.
    """
    keys = to_u64(np.atleast_1d(np.asarray(ids, dtype=np.int64)))
    base = mix64(keys ^ mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
    cols = (np.arange(1, dim + 1, dtype=np.uint64)) * np.uint64(GOLDEN_GAMMA)
    u = mix64(base[:, None] + cols[None, :])
    u01 = (u >> np.uint64(11)).astype(np.float64) * (2.0**-53)
    scale = 1.0 / np.sqrt(float(dim))
    return ((2.0 * u01 - 1.0) * scale).astype(dtype)


class IDMap:
    """First storage tier: feature id -> slot offset, plus reusable slots."""

    __slots__ = ("_map", "free_list")

    def __init__(self):
        self._map: dict[int, int] = {}
        self.free_list: list[int] = []

    def __len__(self) -> int:
        return len(self._map)

    def get(self, fid: int):
        return self._map.get(fid)

    def put(self, fid: int, slot: int) -> None:
        self._map[fid] = slot

    def remove(self, fid: int) -> int:
        return self._map.pop(fid)

    def items(self):
        return self._map.items()


class BlockStore:
    """Second tier: dynamically growing fixed-size blocks of embedding rows.

    Slot s lives at block s // block_size, row s % block_size. Optimizer
    moments (m, v) and last_step are parallel per-row arrays indexed
    identically to the parameter rows.
    """

    def __init__(self, dim: int, block_size: int = DEFAULT_BLOCK_SIZE, dtype=np.float32):
        if dim < 1 or block_size < 1:
            raise ValueError("dim and block_size must be >= 1")
        self.dim = dim
        self.block_size = block_size
        self.dtype = np.dtype(dtype)
        self._weight: list[np.ndarray] = []
        self._m: list[np.ndarray] = []
        self._v: list[np.ndarray] = []
        self._step: list[np.ndarray] = []

    @property
    def capacity(self) -> int:
        return len(self._weight) * self.block_size

    def ensure_capacity(self, slots: int) -> None:
        while self.capacity < slots:
            self._weight.append(np.zeros((self.block_size, self.dim), dtype=self.dtype))
            self._m.append(np.zeros((self.block_size, self.dim), dtype=self.dtype))
            self._v.append(np.zeros((self.block_size, self.dim), dtype=self.dtype))
            self._step.append(np.zeros(self.block_size, dtype=np.int64))

    def _addr(self, offsets: np.ndarray):
        b = offsets // self.block_size
        r = offsets % self.block_size
        return b, r

    def _read_from(self, blocks: list, offsets: np.ndarray, row_shape, dtype) -> np.ndarray:
        b, r = self._addr(offsets)
        out = np.empty((len(offsets),) + row_shape, dtype=dtype)
        for blk in np.unique(b):
            sel = b == blk
            out[sel] = blocks[blk][r[sel]]
        return out

    def _write_to(self, blocks: list, offsets: np.ndarray, rows: np.ndarray) -> None:
        b, r = self._addr(offsets)
        for blk in np.unique(b):
            sel = b == blk
            blocks[blk][r[sel]] = rows[sel]

    def read(self, offsets) -> np.ndarray:
        offsets = np.asarray(offsets, dtype=np.int64)
        return self._read_from(self._weight, offsets, (self.dim,), self.dtype)

    def write(self, offsets, rows) -> None:
        offsets = np.asarray(offsets, dtype=np.int64)
        self._write_to(self._weight, offsets, np.asarray(rows, dtype=self.dtype))

    def read_state(self, offsets):
        offsets = np.asarray(offsets, dtype=np.int64)
        return (
            self._read_from(self._m, offsets, (self.dim,), self.dtype),
            self._read_from(self._v, offsets, (self.dim,), self.dtype),
        )

    def write_state(self, offsets, m, v) -> None:
        offsets = np.asarray(offsets, dtype=np.int64)
        self._write_to(self._m, offsets, np.asarray(m, dtype=self.dtype))
        self._write_to(self._v, offsets, np.asarray(v, dtype=self.dtype))

    def read_last_step(self, offsets) -> np.ndarray:
        offsets = np.asarray(offsets, dtype=np.int64)
        return self._read_from(self._step, offsets, (), np.int64)

    def write_last_step(self, offsets, step) -> None:
        offsets = np.asarray(offsets, dtype=np.int64)
        vals = np.broadcast_to(np.asarray(step, dtype=np.int64), offsets.shape)
        self._write_to(self._step, offsets, vals)

    def clear_aux(self, offsets) -> None:
        """Zero optimizer moments and last_step for freed slots."""
        offsets = np.asarray(offsets, dtype=np.int64)
        zeros = np.zeros((len(offsets), self.dim), dtype=self.dtype)
        self._write_to(self._m, offsets, zeros)
        self._write_to(self._v, offsets, zeros)
        self._write_to(self._step, offsets, np.zeros(len(offsets), dtype=np.int64))


class EmbeddingTable:
    """A named conflict-free embedding table with eviction support.

    evict_threshold is in steps; None disables eviction entirely.
    """

    def __init__(
        self,
        name: str,
        dim: int,
        seed: int = 0,
        block_size: int = DEFAULT_BLOCK_SIZE,
        evict_threshold: int | None = None,
        dtype=np.float32,
    ):
        self.name = name
        self.dim = dim
        self.seed = seed
        self.evict_threshold = evict_threshold
        self.idmap = IDMap()
        self.store = BlockStore(dim, block_size=block_size, dtype=dtype)
        self._allocated = 0
        self._live = np.zeros(0, dtype=bool)

    @property
    def num_rows(self) -> int:
        return len(self.idmap)

    def _grow_live(self) -> None:
        if len(self._live) < self.store.capacity:
            grown = np.zeros(self.store.capacity, dtype=bool)
            grown[: len(self._live)] = self._live
            self._live = grown

    def lookup_or_insert(self, unique_ids, step: int) -> np.ndarray:
        """Slots for the given ids, allocating (free list first) for unknown ones.

        Fresh slots get the deterministic initializer row and zeroed moments;
        last_step of every returned slot is set to ``step``. Input ids must
        be duplicate-free.
        """
        telemetry.bump("embedding.lookup_or_insert")
        ids = np.asarray(unique_ids, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("lookup_or_insert requires duplicate-free ids")
        offsets = np.empty(len(ids), dtype=np.int64)
        new_pos: list[int] = []
        get = self.idmap.get
        free = self.idmap.free_list
        for i, fid in enumerate(ids.tolist()):
            slot = get(fid)
            if slot is None:
                if free:
                    slot = free.pop()
                else:
                    slot = self._allocated
                    self._allocated += 1
                self.idmap.put(fid, slot)
                new_pos.append(i)
            offsets[i] = slot
        if new_pos:
            self.store.ensure_capacity(self._allocated)
            self._grow_live()
            new_pos_arr = np.asarray(new_pos, dtype=np.int64)
            new_offsets = offsets[new_pos_arr]
            rows = initial_rows(self.seed, ids[new_pos_arr], self.dim, self.store.dtype)
            self.store.write(new_offsets, rows)
            zeros = np.zeros((len(new_offsets), self.dim), dtype=self.store.dtype)
            self.store.write_state(new_offsets, zeros, zeros)
            self._live[new_offsets] = True
        if len(offsets):
            self.store.write_last_step(offsets, step)
        return offsets

    def _check_live(self, offsets: np.ndarray, op: str) -> None:
        bad = (offsets < 0) | (offsets >= len(self._live))
        if not bad.any():
            bad = ~self._live[offsets]
        if bad.any():
            first = int(offsets[np.argmax(bad)])
            raise IndexError(f"{op}: offset {first} is not a live slot")

    def gather(self, offsets) -> np.ndarray:
        """Rows at the given live slots, in input order; duplicates allowed."""
        telemetry.bump("embedding.gather")
        offsets = np.asarray(offsets, dtype=np.int64)
        self._check_live(offsets, "gather")
        return self.store.read(offsets)

    def scatter_update(self, offsets, rows) -> None:
        """Replace rows at distinct live slots."""
        telemetry.bump("embedding.scatter_update")
        offsets = np.asarray(offsets, dtype=np.int64)
        rows = np.asarray(rows, dtype=self.store.dtype)
        if rows.shape != (len(offsets), self.dim):
            raise ValueError(f"rows shape {rows.shape} != ({len(offsets)}, {self.dim})")
        if len(np.unique(offsets)) != len(offsets):
            raise ValueError("scatter_update requires distinct offsets")
        self._check_live(offsets, "scatter_update")
        self.store.write(offsets, rows)

    def evict(self, current_step: int) -> int:
        """Drop every slot idle for more than evict_threshold steps.

        Freed offsets go to the free list (LIFO) and their optimizer state
        is zeroed; returns the number of evicted rows.
        """
        telemetry.bump("embedding.evict")
        if self.evict_threshold is None or not len(self.idmap):
            return 0
        fids = np.fromiter((k for k, _ in self.idmap.items()), dtype=np.int64, count=len(self.idmap))
        offs = np.fromiter((v for _, v in self.idmap.items()), dtype=np.int64, count=len(self.idmap))
        last = self.store.read_last_step(offs)
        stale = (current_step - last) > self.evict_threshold
        if not stale.any():
            return 0
        stale_fids = fids[stale]
        stale_offs = offs[stale]
        for fid in stale_fids.tolist():
            self.idmap.remove(fid)
        self.idmap.free_list.extend(stale_offs.tolist())
        self._live[stale_offs] = False
        self.store.clear_aux(stale_offs)
        return int(stale.sum())

    def export_rows(self):
        """(ids, weight, m, v, last_step) for all live rows, sorted by id."""
        n = len(self.idmap)
        fids = np.fromiter((k for k, _ in self.idmap.items()), dtype=np.int64, count=n)
        offs = np.fromiter((v for _, v in self.idmap.items()), dtype=np.int64, count=n)
        order = np.argsort(fids, kind="stable")
        fids, offs = fids[order], offs[order]
        m, v = self.store.read_state(offs)
        return fids, self.store.read(offs), m, v, self.store.read_last_step(offs)

    def restore_rows(self, ids, weight, m, v, last_step) -> None:
        """Bulk-load rows from a checkpoint, bypassing the initializer."""
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) == 0:
            return
        offsets = np.empty(len(ids), dtype=np.int64)
        free = self.idmap.free_list
        for i, fid in enumerate(ids.tolist()):
            if self.idmap.get(fid) is not None:
                raise ValueError(f"restore_rows: id {fid} already present")
            if free:
                slot = free.pop()
            else:
                slot = self._allocated
                self._allocated += 1
            self.idmap.put(fid, slot)
            offsets[i] = slot
        self.store.ensure_capacity(self._allocated)
        self._grow_live()
        self.store.write(offsets, np.asarray(weight, dtype=self.store.dtype))
        self.store.write_state(offsets, m, v)
        self.store.write_last_step(offsets, last_step)
        self._live[offsets] = True
