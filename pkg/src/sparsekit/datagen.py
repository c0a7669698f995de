"""Synthetic dataset generation for benchmarks and the toy trainer.

Row lengths follow a skewed distribution (a fraction of empty rows, a
geometric bulk, and an occasional very long row) to mimic real feature
columns. Labels are linearly separable in pooled per-id signs so the toy
logistic model has something to learn. Everything derives from one seeded
generator, so a given (seed, spec) always produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .columnio import ColumnSchema, ColumnSpec, write_dataset
from .hashing import mix64
from .ragged import RaggedTensor

LABEL_COLUMN = "label"


@dataclass(frozen=True)
class GenColumn:
    name: str
    kind: str  # "ids" | "floats" | "bytes"
    vocab_size: int = 100_000
    mean_len: float = 4.0
    max_len: int = 64
    empty_fraction: float = 0.1
    long_fraction: float = 0.01

    def __post_init__(self):
        if self.kind not in ("ids", "floats", "bytes"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if self.max_len < 0 or self.mean_len <= 0 or self.vocab_size < 1:
            raise ValueError("invalid column spec")


@dataclass(frozen=True)
class GenSpec:
    rows: int = 4096
    chunk_rows: int = 512
    compress: bool = False
    with_label: bool = True
    columns: tuple = field(
        default_factory=lambda: (
            GenColumn("cat0", "ids", vocab_size=50_000),
            GenColumn("cat1", "ids", vocab_size=10_000, mean_len=8.0),
            GenColumn("amount", "floats", mean_len=1.0, max_len=3, empty_fraction=0.0),
        )
    )

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        cols = tuple(GenColumn(**c) for c in d.get("columns", []))
        kwargs = {k: v for k, v in d.items() if k != "columns"}
        if cols:
            kwargs["columns"] = cols
        return cls(**kwargs)


def _row_lengths(rng: np.random.Generator, spec: GenColumn, rows: int) -> np.ndarray:
    lens = rng.geometric(min(1.0, 1.0 / spec.mean_len), size=rows).astype(np.int64)
    lens = np.minimum(lens, spec.max_len)
    u = rng.random(rows)
    lens[u < spec.empty_fraction] = 0
    long_sel = u > 1.0 - spec.long_fraction
    lens[long_sel] = spec.max_len
    return lens


def _gen_column(rng: np.random.Generator, spec: GenColumn, rows: int) -> RaggedTensor:
    lens = _row_lengths(rng, spec, rows)
    total = int(lens.sum())
    offsets = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    if spec.kind == "ids":
        values = rng.integers(0, spec.vocab_size, size=total, dtype=np.int64)
    elif spec.kind == "floats":
        values = rng.random(total, dtype=np.float32)
    else:
        tokens = rng.integers(0, spec.vocab_size, size=total)
        values = np.array([b"tok%d" % t for t in tokens.tolist()], dtype=object)
    return RaggedTensor(values, offsets)


def id_sign(ids: np.ndarray) -> np.ndarray:
    """+-1 per id from its hash parity; the ground truth behind the labels."""
    return np.where(mix64(ids) & np.uint64(1), 1.0, -1.0)


def _labels(columns: dict, rows: int) -> RaggedTensor:
    score = np.zeros(rows, dtype=np.float64)
    for rt in columns.values():
        if rt.values.dtype != np.int64:
            continue
        signs = id_sign(rt.values)
        seg = np.repeat(np.arange(rows), rt.row_lengths())
        np.add.at(score, seg, signs)
    labels = (score > 0).astype(np.float32)
    return RaggedTensor(labels, np.arange(rows + 1, dtype=np.int64))


def generate_dataset(path, spec: GenSpec, seed: int) -> dict:
    """Write a synthetic dataset; returns the in-memory columns."""
    rng = np.random.Generator(np.random.PCG64(seed))
    columns = {c.name: _gen_column(rng, c, spec.rows) for c in spec.columns}
    schema_cols = [
        ColumnSpec(c.name, {"ids": "int64", "floats": "float32", "bytes": "bytes"}[c.kind], True)
        for c in spec.columns
    ]
    if spec.with_label:
        columns[LABEL_COLUMN] = _labels(columns, spec.rows)
        schema_cols.append(ColumnSpec(LABEL_COLUMN, "float32", False))
    write_dataset(
        path,
        columns,
        chunk_rows=spec.chunk_rows,
        compress=spec.compress,
        schema=ColumnSchema(tuple(schema_cols)),
    )
    return columns
