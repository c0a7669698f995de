"""CSR-layout ragged tensors: flat values plus row offsets.

One ragged dimension over fixed-width elements. The same carrier holds
int64 id lists, float32 scalar lists, byte-string lists (``dim == 1``),
and float32 embedding-row lists (``dim == d``). Instances are treated as
immutable after construction and are safe to share across threads.
"""

from __future__ import annotations

import numpy as np

from . import telemetry

_VALUE_DTYPES = (np.float32, np.float64, np.int64, object)


def row_ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Flat indices [starts[i], starts[i]+counts[i]) concatenated over i.

    The workhorse for vectorized per-row slicing; both arrays are int64.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    ends = np.cumsum(counts)
    within = np.arange(total, dtype=np.int64) - np.repeat(ends - counts, counts)
    return np.repeat(np.asarray(starts, dtype=np.int64), counts) + within


def _check_offsets(offsets: np.ndarray, total: int, dim: int) -> None:
    if offsets.ndim != 1 or len(offsets) < 1:
        raise ValueError("row_offsets must be a 1-D array of length num_rows+1")
    if offsets[0] != 0:
        raise ValueError("row_offsets must start at 0")
    if np.any(np.diff(offsets) < 0):
        raise ValueError("row_offsets must be nondecreasing")
    if int(offsets[-1]) * dim != total:
        raise ValueError(
            f"row_offsets end {int(offsets[-1])} * dim {dim} != values length {total}"
        )


class RaggedTensor:
    """Variable-length rows stored as ``values`` + ``row_offsets`` (CSR).

    values      flat 1-D array, length == row_offsets[-1] * dim
    row_offsets int64 array of row starts, length == num_rows + 1
    dim         element width (1 for ids/scalars/byte-strings)
    """

    __slots__ = ("values", "row_offsets", "dim")

    def __init__(self, values, row_offsets, dim: int = 1):
        values = np.asarray(values)
        # Offsets are 64-bit throughout so billion-element batches index safely.
        offsets = np.asarray(row_offsets, dtype=np.int64)
        if dim < 1:
            raise ValueError("dim must be >= 1")
        _check_offsets(offsets, len(values), dim)
        self.values = values
        self.row_offsets = offsets
        self.dim = dim

    # -- construction ----------------------------------------------------

    @classmethod
    def from_rows(cls, rows, dtype=None) -> "RaggedTensor":
        """Build from a list of variable-length rows.

        Row elements are scalars, byte strings, or fixed-width sequences;
        mixed element widths raise ValueError.
        """
        telemetry.bump("ragged.from_rows")
        lengths = np.fromiter((len(r) for r in rows), count=len(rows), dtype=np.int64)
        offsets = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        flat = [e for row in rows for e in row]
        dim = 1
        for e in flat:
            if isinstance(e, (bytes, str)):
                break
            if hasattr(e, "__len__"):
                dim = len(e)
            break
        if dim == 1:
            if flat and isinstance(flat[0], (bytes, str)):
                if any(not isinstance(e, (bytes, str)) for e in flat):
                    raise ValueError("mixed element widths in rows")
                values = np.array(flat, dtype=object)
            else:
                if any(hasattr(e, "__len__") for e in flat):
                    raise ValueError("mixed element widths in rows")
                values = np.asarray(flat, dtype=dtype)
        else:
            widths = {len(e) if hasattr(e, "__len__") else -1 for e in flat}
            if widths != {dim}:
                raise ValueError("mixed element widths in rows")
            values = np.asarray(flat, dtype=dtype).reshape(-1)
        if values.dtype == np.float64 and dtype is None and values.dtype != object:
            values = values.astype(np.float32)
        if len(flat) == 0:
            values = np.asarray(values, dtype=dtype if dtype is not None else np.float32)
        return cls(values, offsets, dim)

    # -- basic shape -----------------------------------------------------

    @property
    def num_rows(self) -> int:
        return len(self.row_offsets) - 1

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    @property
    def values_2d(self) -> np.ndarray:
        """Values viewed as (num_elements, dim)."""
        return self.values.reshape(-1, self.dim)

    def to_rows(self) -> list:
        """Inverse of from_rows: a list of per-row element lists."""
        out = []
        v2 = self.values_2d
        for i in range(self.num_rows):
            lo, hi = int(self.row_offsets[i]), int(self.row_offsets[i + 1])
            if self.dim == 1:
                out.append(list(self.values[lo:hi]))
            else:
                out.append([list(e) for e in v2[lo:hi]])
        return out

    def with_values(self, values, dim: int | None = None) -> "RaggedTensor":
        """Same row structure over new values (shape-preserving transforms)."""
        return RaggedTensor(values, self.row_offsets, self.dim if dim is None else dim)

    # -- shape manipulation ------------------------------------------------

    def truncate(self, max_len: int, side: str = "tail") -> "RaggedTensor":
        """Cap every row at max_len elements.

        side="tail" keeps the last (most recent) elements, side="head" the
        first; order within the kept span is preserved.
        """
        telemetry.bump("ragged.truncate")
        if max_len < 0:
            raise ValueError("max_len must be >= 0")
        if side not in ("head", "tail"):
            raise ValueError(f"unknown side {side!r}")
        lengths = self.row_lengths()
        keep = np.minimum(lengths, max_len)
        if side == "head":
            starts = self.row_offsets[:-1]
        else:
            starts = self.row_offsets[1:] - keep
        elem_idx = row_ranges(starts, keep)
        if self.dim == 1:
            values = self.values[elem_idx]
        else:
            values = self.values_2d[elem_idx].reshape(-1)
        offsets = np.zeros(self.num_rows + 1, dtype=np.int64)
        np.cumsum(keep, out=offsets[1:])
        return RaggedTensor(values, offsets, self.dim)

    def pad_to_dense(self, max_len: int, pad_value=0):
        """Densify to (num_rows, max_len[, dim]) plus a boolean validity mask.

        Rows longer than max_len are an error; truncate first.
        """
        telemetry.bump("ragged.pad_to_dense")
        lengths = self.row_lengths()
        if np.any(lengths > max_len):
            raise ValueError("row longer than max_len; truncate first")
        n = self.num_rows
        if self.dim == 1:
            dense = np.full((n, max_len), pad_value, dtype=self.values.dtype)
        else:
            dense = np.full((n, max_len, self.dim), pad_value, dtype=self.values.dtype)
        mask = np.zeros((n, max_len), dtype=bool)
        elem_idx = row_ranges(self.row_offsets[:-1], lengths)
        row_idx = np.repeat(np.arange(n, dtype=np.int64), lengths)
        col_idx = elem_idx - np.repeat(self.row_offsets[:-1], lengths)
        if self.dim == 1:
            dense[row_idx, col_idx] = self.values[elem_idx]
        else:
            dense[row_idx, col_idx] = self.values_2d[elem_idx]
        mask[row_idx, col_idx] = True
        return dense, mask

    def __repr__(self) -> str:
        return (
            f"RaggedTensor(num_rows={self.num_rows}, "
            f"num_elements={int(self.row_offsets[-1])}, dim={self.dim}, "
            f"dtype={self.values.dtype})"
        )
