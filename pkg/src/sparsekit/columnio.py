"""Columnar sample storage plus a sharded, prefetching batch reader.

File layout:
  magic "RCOL" | u32 LE version=1 | u64 LE header-JSON length | header JSON
  | chunk payloads

Header JSON: {"schema": {"columns": [{"name", "dtype", "ragged"}]},
"chunk_index": [{"byte_offset", "byte_len", "rows"}]} where byte_offset is
relative to the first byte after the header. Within a chunk the columns
appear in schema order, each as: u8 compressed-flag | u64 raw byte length
| u64 stored byte length | payload. A column payload is the chunk-local
row-offsets array (int64 LE, ragged columns only) followed by the values;
byte-string values encode as an int64 LE length per string followed by
the concatenated bytes. Compressed payloads are raw DEFLATE.

Readers shard at chunk granularity: global chunk index mod num_shards,
which makes shards disjoint and jointly exhaustive. A background stage
decodes and assembles up to prefetch_depth batches ahead of the consumer;
delivered batch order never depends on scheduling.
"""

from __future__ import annotations

import json
import queue
import threading
import zlib
from dataclasses import dataclass

import numpy as np

from . import telemetry
from .ragged import RaggedTensor

MAGIC = b"RCOL"
FORMAT_VERSION = 1

_DTYPES = ("float32", "int64", "bytes")


class ColumnIOError(RuntimeError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    dtype: str
    ragged: bool

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise ValueError(f"unsupported column dtype {self.dtype!r}")


@dataclass(frozen=True)
class ColumnSchema:
    columns: tuple

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column name in schema")

    def to_obj(self):
        return {
            "columns": [
                {"name": c.name, "dtype": c.dtype, "ragged": c.ragged}
                for c in self.columns
            ]
        }

    @classmethod
    def from_obj(cls, obj) -> "ColumnSchema":
        return cls(
            tuple(
                ColumnSpec(c["name"], c["dtype"], bool(c["ragged"]))
                for c in obj["columns"]
            )
        )


def _infer_schema(data: dict) -> ColumnSchema:
    cols = []
    for name, rt in data.items():
        if rt.values.dtype == object:
            dtype = "bytes"
        elif rt.values.dtype == np.int64:
            dtype = "int64"
        else:
            dtype = "float32"
        cols.append(ColumnSpec(name, dtype, True))
    return ColumnSchema(tuple(cols))


def _encode_values(values: np.ndarray, dtype: str) -> bytes:
    if dtype == "float32":
        return np.asarray(values, dtype="<f4").tobytes()
    if dtype == "int64":
        return np.asarray(values, dtype="<i8").tobytes()
    lengths = np.fromiter((len(s) for s in values), count=len(values), dtype="<i8")
    return lengths.tobytes() + b"".join(values)


def _decode_values(blob: bytes, dtype: str, count: int) -> np.ndarray:
    if dtype == "float32":
        if len(blob) != 4 * count:
            raise ValueError("float32 payload length mismatch")
        return np.frombuffer(blob, dtype="<f4").astype(np.float32)
    if dtype == "int64":
        if len(blob) != 8 * count:
            raise ValueError("int64 payload length mismatch")
        return np.frombuffer(blob, dtype="<i8").astype(np.int64)
    if len(blob) < 8 * count:
        raise ValueError("byte-string payload shorter than its length array")
    lengths = np.frombuffer(blob[: 8 * count], dtype="<i8")
    if lengths.sum() != len(blob) - 8 * count:
        raise ValueError("byte-string payload length mismatch")
    out = np.empty(count, dtype=object)
    pos = 8 * count
    view = memoryview(blob)
    for i, ln in enumerate(lengths.tolist()):
        out[i] = bytes(view[pos : pos + ln])
        pos += ln
    return out


def _encode_chunk(schema: ColumnSchema, chunk_cols: dict, rows: int, compress: bool) -> bytes:
    parts = []
    for spec in schema.columns:
        rt = chunk_cols[spec.name]
        blob = b""
        if spec.ragged:
            blob += np.asarray(rt.row_offsets, dtype="<i8").tobytes()
        blob += _encode_values(rt.values, spec.dtype)
        stored = blob
        flag = 0
        if compress:
            comp = zlib.compressobj(6, zlib.DEFLATED, -15)
            stored = comp.compress(blob) + comp.flush()
            flag = 1
        parts.append(bytes([flag]))
        parts.append(len(blob).to_bytes(8, "little"))
        parts.append(len(stored).to_bytes(8, "little"))
        parts.append(stored)
    return b"".join(parts)


def write_dataset(path, data: dict, chunk_rows: int, compress: bool = False,
                  schema: ColumnSchema | None = None) -> None:
    """Write named ragged columns to one dataset file, split into chunks.

    All columns must cover the same row count; the write is lossless for
    every dtype including empty rows and empty byte strings.
    """
    telemetry.bump("columnio.write_dataset")
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    data = {k: v if isinstance(v, RaggedTensor) else RaggedTensor.from_rows(v) for k, v in data.items()}
    if schema is None:
        schema = _infer_schema(data)
    names = [c.name for c in schema.columns]
    if set(names) != set(data.keys()):
        raise ValueError("schema columns do not match data columns")
    row_counts = {name: data[name].num_rows for name in names}
    if len(set(row_counts.values())) > 1:
        raise ValueError(f"row-count mismatch across columns: {row_counts}")
    total_rows = row_counts[names[0]] if names else 0

    for spec in schema.columns:
        if not spec.ragged and np.any(data[spec.name].row_lengths() != 1):
            raise ValueError(f"column {spec.name!r} declared flat but has ragged rows")

    chunks = []
    index = []
    offset = 0
    for lo in range(0, total_rows, chunk_rows):
        hi = min(lo + chunk_rows, total_rows)
        chunk_cols = {}
        for spec in schema.columns:
            rt = data[spec.name]
            o = rt.row_offsets
            local = o[lo : hi + 1] - o[lo]
            vals = rt.values[int(o[lo]) : int(o[hi])]
            chunk_cols[spec.name] = RaggedTensor(vals, local)
        payload = _encode_chunk(schema, chunk_cols, hi - lo, compress)
        chunks.append(payload)
        index.append({"byte_offset": offset, "byte_len": len(payload), "rows": hi - lo})
        offset += len(payload)

    header = json.dumps(
        {"schema": schema.to_obj(), "chunk_index": index}, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(FORMAT_VERSION.to_bytes(4, "little"))
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for payload in chunks:
            f.write(payload)


def read_header(path):
    """(schema, chunk_index, payload_start) for one dataset file."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ColumnIOError(f"{path}: bad magic {magic!r}")
        version = int.from_bytes(f.read(4), "little")
        if version != FORMAT_VERSION:
            raise ColumnIOError(f"{path}: unsupported version {version}")
        n = int.from_bytes(f.read(8), "little")
        raw = f.read(n)
        if len(raw) != n:
            raise ColumnIOError(f"{path}: truncated header")
        try:
            header = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ColumnIOError(f"{path}: invalid header JSON: {e}") from e
    return ColumnSchema.from_obj(header["schema"]), header["chunk_index"], 16 + n


def _decode_chunk(schema: ColumnSchema, blob: bytes, rows: int, select) -> dict:
    out = {}
    pos = 0
    for spec in schema.columns:
        if pos + 17 > len(blob):
            raise ValueError(f"column {spec.name!r}: truncated column header")
        flag = blob[pos]
        raw_len = int.from_bytes(blob[pos + 1 : pos + 9], "little")
        stored_len = int.from_bytes(blob[pos + 9 : pos + 17], "little")
        pos += 17
        if pos + stored_len > len(blob):
            raise ValueError(f"column {spec.name!r}: truncated payload")
        wanted = select is None or spec.name in select
        if wanted:
            payload = blob[pos : pos + stored_len]
            if flag:
                try:
                    payload = zlib.decompress(payload, -15)
                except zlib.error as e:
                    raise ValueError(f"column {spec.name!r}: bad DEFLATE data: {e}")
            if len(payload) != raw_len:
                raise ValueError(f"column {spec.name!r}: raw length mismatch")
            if spec.ragged:
                need = 8 * (rows + 1)
                if len(payload) < need:
                    raise ValueError(f"column {spec.name!r}: truncated offsets")
                offsets = np.frombuffer(payload[:need], dtype="<i8").astype(np.int64)
                count = int(offsets[-1])
                values = _decode_values(payload[need:], spec.dtype, count)
            else:
                offsets = np.arange(rows + 1, dtype=np.int64)
                values = _decode_values(payload, spec.dtype, rows)
            out[spec.name] = RaggedTensor(values, offsets)
        pos += stored_len
    if pos != len(blob):
        raise ValueError("trailing bytes after last column")
    return out


class _BatchAssembler:
    """Accumulates decoded chunk columns and slices off fixed-row batches."""

    def __init__(self, names, batch_rows: int):
        self.names = list(names)
        self.batch_rows = batch_rows
        self._values = {n: [] for n in self.names}
        self._lengths = {n: [] for n in self.names}
        self._rows = 0

    def add(self, chunk: dict) -> None:
        rows = None
        for n in self.names:
            rt = chunk[n]
            self._values[n].append(rt.values)
            self._lengths[n].append(rt.row_lengths())
            rows = rt.num_rows
        self._rows += rows if rows is not None else 0

    def _pop_batch(self, count: int) -> dict:
        batch = {}
        for n in self.names:
            lengths = np.concatenate(self._lengths[n]) if self._lengths[n] else np.empty(0, np.int64)
            values = (
                np.concatenate(self._values[n])
                if self._values[n]
                else np.empty(0, dtype=np.float32)
            )
            take_elems = int(lengths[:count].sum())
            offsets = np.zeros(count + 1, dtype=np.int64)
            np.cumsum(lengths[:count], out=offsets[1:])
            batch[n] = RaggedTensor(values[:take_elems], offsets)
            self._values[n] = [values[take_elems:]]
            self._lengths[n] = [lengths[count:]]
        self._rows -= count
        return batch

    def drain(self, final: bool = False):
        while self._rows >= self.batch_rows:
            yield self._pop_batch(self.batch_rows)
        if final and self._rows > 0:
            yield self._pop_batch(self._rows)


def _plan_shard(paths, shard_index: int, num_shards: int):
    """Round-robin chunk ownership over the global chunk sequence."""
    if num_shards < 1 or not (0 <= shard_index < num_shards):
        raise ValueError(f"invalid shard {shard_index}/{num_shards}")
    schema = None
    owned = []
    global_idx = 0
    for path in paths:
        s, index, start = read_header(path)
        if schema is None:
            schema = s
        elif s != schema:
            raise ColumnIOError(f"{path}: schema differs from first file")
        for j, meta in enumerate(index):
            if global_idx % num_shards == shard_index:
                owned.append((path, j, start + meta["byte_offset"], meta["byte_len"], meta["rows"]))
            global_idx += 1
    if schema is None:
        raise ColumnIOError("no input files")
    return schema, owned


def open_reader(
    paths,
    shard_index: int = 0,
    num_shards: int = 1,
    batch_rows: int = 256,
    prefetch_depth: int = 0,
    columns=None,
):
    """Iterate name -> RaggedTensor batches over this shard's chunks.

    Chunks are assigned round-robin by global chunk index, so shards are
    disjoint and jointly exhaustive. Batches concatenate rows across chunk
    boundaries and arrive in deterministic chunk order; with
    prefetch_depth > 0 a background stage decodes ahead of the consumer
    behind a bounded queue (output is identical either way). ``columns``
    selects a subset; unselected columns are never decoded.
    """
    if isinstance(paths, (str, bytes)):
        paths = [paths]
    if batch_rows < 1:
        raise ValueError("batch_rows must be >= 1")
    schema, owned = _plan_shard(paths, shard_index, num_shards)
    select = set(columns) if columns is not None else None
    if select is not None:
        known = {c.name for c in schema.columns}
        missing = select - known
        if missing:
            raise ColumnIOError(f"unknown columns requested: {sorted(missing)}")
    names = [c.name for c in schema.columns if select is None or c.name in select]

    def produce():
        assembler = _BatchAssembler(names, batch_rows)
        for path, chunk_idx, byte_offset, byte_len, rows in owned:
            with open(path, "rb") as f:
                f.seek(byte_offset)
                blob = f.read(byte_len)
            if len(blob) != byte_len:
                raise ColumnIOError(f"{path}: chunk {chunk_idx}: truncated chunk")
            try:
                chunk = _decode_chunk(schema, blob, rows, select)
            except ValueError as e:
                raise ColumnIOError(f"{path}: chunk {chunk_idx}: {e}") from e
            assembler.add(chunk)
            yield from assembler.drain()
        yield from assembler.drain(final=True)

    if prefetch_depth <= 0:
        return _counted(produce())
    return _prefetched(produce, prefetch_depth)


def _counted(it):
    for batch in it:
        telemetry.bump("columnio.batch")
        yield batch


def _prefetched(produce, depth: int):
    q: queue.Queue = queue.Queue(maxsize=depth)
    end = object()

    def worker():
        try:
            for batch in produce():
                q.put(batch)
            q.put(end)
        except BaseException as e:  # surfaces in the consumer
            q.put(e)

    thread = threading.Thread(target=worker, name="columnio-prefetch", daemon=True)
    thread.start()
    try:
        while True:
            item = q.get()
            if item is end:
                break
            if isinstance(item, BaseException):
                raise item
            telemetry.bump("columnio.batch")
            yield item
    finally:
        thread.join(timeout=5.0)
