"""Sharded save/load of embedding tables in the SafeTensors container format.

Container layout (bit-exact contract):
  bytes 0..7   unsigned 64-bit little-endian header length N
  bytes 8..8+N UTF-8 JSON: tensor name -> {"dtype", "shape", "data_offsets"},
               plus an optional "__metadata__" string map; data_offsets are
               relative to the first byte after the header
  remainder    little-endian, row-major, tightly packed tensor payloads in
               offset order

The writer emits tensors sorted by name with compact JSON so identical
logical content yields identical bytes. Each table serializes as parallel
tensors "<t>.ids", "<t>.weight", "<t>.m", "<t>.v", "<t>.last_step", rows
sorted by stored key ascending; any SafeTensors reader can consume the
weights directly. A separate manifest.json enumerates the shard files and
doubles as the atomic completion marker (it is written last). Loading
reshards records to any target shard count because rows carry their ids.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import telemetry
from .embedding import DEFAULT_BLOCK_SIZE, EmbeddingTable
from .sharding import LogicalTable, ShardPlan

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1

_DTYPE_TO_TAG = {np.dtype(np.float32): "F32", np.dtype(np.int64): "I64"}
_TAG_TO_DTYPE = {"F32": np.dtype("<f4"), "I64": np.dtype("<i8")}


class CheckpointError(RuntimeError):
    pass


# -- SafeTensors container -------------------------------------------------


def write_safetensors(path, tensors: dict, metadata: dict | None = None) -> None:
    """Write named arrays as one SafeTensors container (sorted by name)."""
    header: dict = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in sorted(metadata.items())}
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        tag = _DTYPE_TO_TAG.get(arr.dtype)
        if tag is None:
            raise CheckpointError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        header[name] = {
            "dtype": tag,
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        payloads.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        for raw in payloads:
            f.write(raw)


def read_safetensors_header(path):
    """(header dict, payload start offset); validates the framing."""
    with open(path, "rb") as f:
        head = f.read(8)
        if len(head) != 8:
            raise CheckpointError(f"{path}: truncated header length field")
        n = int.from_bytes(head, "little")
        raw = f.read(n)
        if len(raw) != n:
            raise CheckpointError(f"{path}: truncated header JSON")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: invalid header JSON: {e}") from e
    return header, 8 + n


def read_safetensors(path) -> dict:
    """Load all tensors from a SafeTensors container into numpy arrays."""
    header, start = read_safetensors_header(path)
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        f.seek(start)
        payload = f.read()
    out = {}
    for name, meta in header.items():
        if name == "__metadata__":
            continue
        tag = meta.get("dtype")
        dtype = _TAG_TO_DTYPE.get(tag)
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype tag {tag!r} for {name!r}")
        begin, end = meta["data_offsets"]
        shape = tuple(meta["shape"])
        expect = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if end - begin != expect or end > size - start or begin < 0:
            raise CheckpointError(f"{path}: bad data_offsets for {name!r}")
        arr = np.frombuffer(payload[begin:end], dtype=dtype).reshape(shape)
        out[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    return out


def read_safetensors_metadata(path) -> dict:
    header, _ = read_safetensors_header(path)
    return header.get("__metadata__", {})


# -- manifest ----------------------------------------------------------------


@dataclass
class TableMeta:
    name: str
    dim: int
    rows_per_file: list
    global_step: int
    seed: int = 0
    block_size: int = DEFAULT_BLOCK_SIZE
    evict_threshold: int | None = None
    members: list = field(default_factory=list)
    namespaced: bool = False


@dataclass
class CheckpointManifest:
    version: int
    files: list
    tables: list

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "files": self.files,
                "tables": [asdict(t) for t in self.tables],
            },
            indent=2,
            sort_keys=False,
        )

    @classmethod
    def from_json(cls, text: str) -> "CheckpointManifest":
        d = json.loads(text)
        return cls(
            version=d["version"],
            files=list(d["files"]),
            tables=[TableMeta(**t) for t in d["tables"]],
        )


def read_manifest(ckpt_dir) -> CheckpointManifest:
    path = os.path.join(ckpt_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise CheckpointError(f"{ckpt_dir}: missing {MANIFEST_NAME}")
    with open(path, "r", encoding="utf-8") as f:
        manifest = CheckpointManifest.from_json(f.read())
    if manifest.version != FORMAT_VERSION:
        raise CheckpointError(f"unknown checkpoint format version {manifest.version}")
    return manifest


# -- sharded save / load -----------------------------------------------------


def _as_shard_group(table):
    if isinstance(table, LogicalTable):
        return table.name, table.shards, table
    if isinstance(table, EmbeddingTable):
        return table.name, [table], None
    raise TypeError(f"cannot checkpoint {type(table).__name__}")


def _split_counts(n: int, parts: int) -> list:
    base, extra = divmod(n, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def save_sharded(tables, ckpt_dir, num_files: int, global_step: int = 0) -> CheckpointManifest:
    """Write tables to ``num_files`` SafeTensors shards plus a manifest.

    Rows are globally sorted by stored key and split contiguously across
    files, so identical logical state produces identical bytes. Files are
    written in parallel; the manifest lands last as the commit marker.
    """
    telemetry.bump("checkpoint.save_sharded")
    if num_files < 1:
        raise ValueError("num_files must be >= 1")
    os.makedirs(ckpt_dir, exist_ok=True)
    file_names = [f"ckpt-{i:05d}-of-{num_files:05d}.safetensors" for i in range(num_files)]

    per_file_tensors: list[dict] = [dict() for _ in range(num_files)]
    metas = []
    seen = set()
    for table in tables:
        name, shards, logical = _as_shard_group(table)
        if name in seen:
            raise ValueError(f"duplicate table name {name!r} in checkpoint")
        seen.add(name)
        parts = [t.export_rows() for t in shards]
        ids = np.concatenate([p[0] for p in parts])
        order = np.argsort(ids, kind="stable")
        merged = [np.concatenate([p[i] for p in parts])[order] for i in range(5)]
        counts = _split_counts(len(ids), num_files)
        meta = TableMeta(
            name=name,
            dim=shards[0].dim,
            rows_per_file=counts,
            global_step=global_step,
            seed=shards[0].seed,
            block_size=shards[0].store.block_size,
            evict_threshold=shards[0].evict_threshold,
            members=list(logical.members) if logical else [],
            namespaced=bool(logical.namespaced) if logical else False,
        )
        metas.append(meta)
        lo = 0
        for i, c in enumerate(counts):
            sl = slice(lo, lo + c)
            per_file_tensors[i][f"{name}.ids"] = merged[0][sl]
            per_file_tensors[i][f"{name}.weight"] = merged[1][sl]
            per_file_tensors[i][f"{name}.m"] = merged[2][sl]
            per_file_tensors[i][f"{name}.v"] = merged[3][sl]
            per_file_tensors[i][f"{name}.last_step"] = merged[4][sl]
            lo += c

    def write_one(i: int) -> None:
        write_safetensors(os.path.join(ckpt_dir, file_names[i]), per_file_tensors[i])

    with ThreadPoolExecutor(max_workers=min(8, num_files)) as pool:
        list(pool.map(write_one, range(num_files)))

    manifest = CheckpointManifest(FORMAT_VERSION, file_names, metas)
    with open(os.path.join(ckpt_dir, MANIFEST_NAME), "w", encoding="utf-8") as f:
        f.write(manifest.to_json())
    return manifest


def load_sharded(ckpt_dir, target_num_shards: int) -> list:
    """Rebuild logical tables from a checkpoint under a new shard plan.

    Works for any target shard count: every record carries its feature id,
    so rows are simply re-routed by the target plan. Lookups after load
    bit-match the pre-save state.
    """
    telemetry.bump("checkpoint.load_sharded")
    if target_num_shards < 1:
        raise ValueError("target_num_shards must be >= 1")
    manifest = read_manifest(ckpt_dir)

    def read_one(fname: str) -> dict:
        path = os.path.join(ckpt_dir, fname)
        if not os.path.exists(path):
            raise CheckpointError(f"missing shard file {fname}")
        return read_safetensors(path)

    with ThreadPoolExecutor(max_workers=min(8, len(manifest.files))) as pool:
        contents = list(pool.map(read_one, manifest.files))

    plan = ShardPlan(target_num_shards)
    tables = []
    for meta in manifest.tables:
        arrays = {}
        for part in ("ids", "weight", "m", "v", "last_step"):
            key = f"{meta.name}.{part}"
            chunks = []
            for fname, tensors in zip(manifest.files, contents):
                if key not in tensors:
                    raise CheckpointError(f"{fname}: missing tensor {key!r}")
                chunks.append(tensors[key])
            arrays[part] = np.concatenate(chunks) if chunks else np.empty(0)
        n = len(arrays["ids"])
        for part, width in (("weight", meta.dim), ("m", meta.dim), ("v", meta.dim)):
            if arrays[part].shape != (n, width):
                raise CheckpointError(
                    f"table {meta.name!r}: {part} shape {arrays[part].shape} "
                    f"does not match {n} ids of dim {width}"
                )
        lt = LogicalTable(
            meta.name,
            meta.dim,
            target_num_shards,
            seed=meta.seed,
            members=meta.members or None,
            namespaced=meta.namespaced,
            block_size=meta.block_size,
            evict_threshold=meta.evict_threshold,
        )
        shard_of = plan.shard_of(arrays["ids"]) if n else np.empty(0, dtype=np.int64)
        for s in range(target_num_shards):
            sel = shard_of == s
            lt.shards[s].restore_rows(
                arrays["ids"][sel],
                arrays["weight"][sel],
                arrays["m"][sel],
                arrays["v"][sel],
                arrays["last_step"][sel],
            )
        tables.append(lt)
    return tables


# -- inspection ----------------------------------------------------------------


def inspect_checkpoint(ckpt_dir) -> str:
    """Human-readable checkpoint summary (tables, then per-file tensors)."""
    telemetry.bump("checkpoint.inspect")
    manifest = read_manifest(ckpt_dir)
    lines = [f"checkpoint: version {manifest.version}, {len(manifest.files)} file(s)"]
    for t in manifest.tables:
        lines.append(
            f"table {t.name}: dim {t.dim}, rows {sum(t.rows_per_file)}, "
            f"global_step {t.global_step}"
        )
    for fname in manifest.files:
        path = os.path.join(ckpt_dir, fname)
        if not os.path.exists(path):
            raise CheckpointError(f"missing shard file {fname}")
        header, start = read_safetensors_header(path)
        size = os.path.getsize(path)
        end = max(
            (m["data_offsets"][1] for k, m in header.items() if k != "__metadata__"),
            default=0,
        )
        if start + end > size:
            raise CheckpointError(f"{fname}: truncated payload")
        lines.append(f"file {fname}:")
        for name in sorted(k for k in header if k != "__metadata__"):
            meta = header[name]
            shape = "x".join(str(d) for d in meta["shape"]) or "scalar"
            lines.append(f"  {name} {meta['dtype']} [{shape}]")
    return "\n".join(lines) + "\n"
