"""Toy end-to-end training loop over the sharded embedding stack.

Per step: read a batch, run feature transforms, exchange embeddings
through the sharded logical tables (one all-to-all per logical table),
mean-pool each feature, score with a logistic head trained by full Adam,
backpropagate into the touched embedding rows, and periodically evict
stale features. The loop is bit-reproducible under a fixed seed and its
metrics are identical for any shard count: lookups are id-keyed and
gradient pre-aggregation happens before routing.

Metrics CSV columns: step, loss, unique_ids, imbalance. Imbalance is
measured under a fixed probe plan (config.probe_shards) rather than the
run's own shard count so the column is comparable across shard counts.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .bench import reduce_traffic
from .checkpoint import save_sharded
from .columnio import open_reader
from .config import RunConfig
from .datagen import LABEL_COLUMN
from .features import bucketize, hash_feature, mod_transform
from .optim import DenseAdam
from .ragged import RaggedTensor
from .roofline import DEFAULT_HARDWARE, HardwareSpec, OpProfile, emit_report
from .segments import segment_reduce
from .sharding import (
    ShardPlan,
    all_to_all_grad_update,
    all_to_all_lookup,
    load_stats,
    merge_tables_by_dim,
)

METRICS_NAME = "metrics.csv"
EVAL_METRICS_NAME = "eval_metrics.csv"
ROOFLINE_NAME = "roofline.csv"
CHECKPOINT_DIR = "checkpoint"


@dataclass
class TrainResult:
    metrics: list  # (step, loss, unique_ids, imbalance)
    out_dir: str | None
    initial_loss: float
    final_loss: float


def _apply_transform(spec, rt: RaggedTensor) -> RaggedTensor:
    if spec.transform == "none":
        return rt
    if spec.transform == "mod":
        return mod_transform(rt, spec.modulus)
    if spec.transform == "bucketize":
        return bucketize(rt, np.asarray(spec.boundaries, dtype=np.float32))
    return hash_feature(rt)


def _batches(cfg: RunConfig, dataset: str, columns, steps: int):
    """Endless deterministic batch stream: re-open the reader per epoch."""
    served = 0
    while served < steps:
        reader = open_reader(
            dataset,
            shard_index=0,
            num_shards=1,
            batch_rows=cfg.batch_rows,
            prefetch_depth=cfg.prefetch_depth,
            columns=columns,
        )
        empty = True
        for batch in reader:
            empty = False
            yield batch
            served += 1
            if served >= steps:
                return
        if empty:
            raise ValueError(f"dataset {dataset!r} yields no batches")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log_loss(z: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^z) - y*z, computed stably.
    return float(np.mean(np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))))


class _Pipeline:
    """Wiring between dataset columns, transforms, and logical tables."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.plan = ShardPlan(cfg.num_shards)
        self.logicals = merge_tables_by_dim(
            [(f.table, f.dim) for f in cfg.features],
            num_shards=cfg.num_shards,
            seed=cfg.seed,
            block_size=cfg.block_size,
            evict_threshold=cfg.evict_threshold,
        )
        self.table_of = {m: lt for lt in self.logicals for m in lt.members}
        self.feature_width = sum(f.dim for f in cfg.features)
        self.profiles: list[OpProfile] = []

    def forward(self, batch: dict, step: int, profile: bool = False):
        """Transform, exchange, and pool one batch into the dense input x.

        Returns (x, group_cat, per_feature) where per_feature carries what
        the backward pass needs to route gradients.
        """
        cfg = self.cfg
        n = batch[LABEL_COLUMN].num_rows
        per_feature = []
        group_keys: dict[str, list] = {lt.name: [] for lt in self.logicals}
        for f in cfg.features:
            ids = _apply_transform(f, batch[f.column])
            lt = self.table_of[f.table]
            keys = lt.keys_for(f.table, ids.values)
            group_keys[lt.name].append(keys)
            per_feature.append([f, lt, keys, ids.row_offsets, 0])

        group_cat = {
            name: np.concatenate(ks) if ks else np.empty(0, np.int64)
            for name, ks in group_keys.items()
        }
        group_rows = {}
        for lt in self.logicals:
            t0 = time.perf_counter()
            group_rows[lt.name] = all_to_all_lookup(lt, group_cat[lt.name], self.plan, step)
            if profile:
                nk = len(group_cat[lt.name])
                self.profiles.append(
                    OpProfile(
                        f"lookup {lt.name}",
                        nk * 8 + nk * lt.dim * 4,
                        nk * lt.dim * 4,
                        0,
                        max(time.perf_counter() - t0, 1e-9),
                    )
                )

        x = np.empty((n, self.feature_width + 1), dtype=np.float64)
        x[:, -1] = 1.0  # bias input
        cursor = {lt.name: 0 for lt in self.logicals}
        col = 0
        for pf in per_feature:
            f, lt, keys, offsets, _ = pf
            lo = cursor[lt.name]
            rows = group_rows[lt.name][lo : lo + len(keys)]
            cursor[lt.name] = lo + len(keys)
            t0 = time.perf_counter()
            pooled = segment_reduce(rows, offsets, mode="mean")
            if profile:
                r, wr, fl = reduce_traffic(len(rows), n, f.dim, "mean")
                self.profiles.append(
                    OpProfile(f"pool {f.column}", r, wr, fl, max(time.perf_counter() - t0, 1e-9))
                )
            x[:, col : col + f.dim] = pooled.astype(np.float64)
            pf[4] = col
            col += f.dim
        return x, group_cat, per_feature

    def backward(self, dlogits: np.ndarray, w: np.ndarray, group_cat, per_feature, step: int) -> None:
        """Spread pooled gradients back over rows and apply sparse Adam."""
        group_grads: dict[str, list] = {lt.name: [] for lt in self.logicals}
        for f, lt, keys, offsets, col0 in per_feature:
            dpooled = dlogits[:, None] * w[col0 : col0 + f.dim][None, :]
            lens = np.diff(offsets).astype(np.float64)
            safe = np.maximum(lens, 1.0)
            per_row = np.repeat(dpooled / safe[:, None], np.diff(offsets), axis=0)
            group_grads[lt.name].append(per_row.astype(np.float32))
        for lt in self.logicals:
            grads = (
                np.concatenate(group_grads[lt.name])
                if group_grads[lt.name]
                else np.empty((0, lt.dim), dtype=np.float32)
            )
            all_to_all_grad_update(
                lt, group_cat[lt.name], grads, self.plan, self.cfg.optimizer, step
            )


def train_toy(cfg: RunConfig, dataset: str, out_dir: str | None = None,
              collect_profiles: bool = True) -> TrainResult:
    """Run cfg.steps training steps over ``dataset``; returns the metrics."""
    pipe = _Pipeline(cfg)
    probe_plan = ShardPlan(cfg.probe_shards)
    w = np.zeros(pipe.feature_width + 1, dtype=np.float64)
    head_opt = DenseAdam(w.shape, cfg.optimizer)

    needed = [f.column for f in cfg.features] + [LABEL_COLUMN]
    metrics = []
    eval_metrics = []
    held_out = None

    for step, batch in enumerate(_batches(cfg, dataset, needed, cfg.steps), start=1):
        if held_out is None:
            held_out = batch
        labels = batch[LABEL_COLUMN].values.astype(np.float64)
        x, group_cat, per_feature = pipe.forward(batch, step, profile=collect_profiles)
        logits = x @ w
        loss = _log_loss(logits, labels)
        dlogits = (_sigmoid(logits) - labels) / len(labels)

        w = head_opt.step(w, x.T @ dlogits, step)
        pipe.backward(dlogits, w, group_cat, per_feature, step)

        uniq = sum(len(np.unique(group_cat[lt.name])) for lt in pipe.logicals)
        counts = np.zeros(cfg.probe_shards, dtype=np.int64)
        for lt in pipe.logicals:
            counts += load_stats(group_cat[lt.name], probe_plan).counts
        total = int(counts.sum())
        imbalance = float(counts.max()) / (total / cfg.probe_shards) if total else 1.0
        metrics.append((step, loss, uniq, imbalance))

        if cfg.evict_every and step % cfg.evict_every == 0:
            for lt in pipe.logicals:
                lt.evict(step)

        if cfg.eval_every and step % cfg.eval_every == 0:
            ex, _, _ = pipe.forward(held_out, step)
            ey = held_out[LABEL_COLUMN].values.astype(np.float64)
            eval_metrics.append((step, _log_loss(ex @ w, ey)))

    result = TrainResult(
        metrics=metrics,
        out_dir=out_dir,
        initial_loss=metrics[0][1] if metrics else float("nan"),
        final_loss=metrics[-1][1] if metrics else float("nan"),
    )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics(os.path.join(out_dir, METRICS_NAME), metrics)
        if eval_metrics:
            with open(os.path.join(out_dir, EVAL_METRICS_NAME), "w", encoding="utf-8") as f:
                f.write("step,loss\n")
                for s, l in eval_metrics:
                    f.write(f"{s},{l:.17g}\n")
        save_sharded(
            pipe.logicals,
            os.path.join(out_dir, CHECKPOINT_DIR),
            num_files=cfg.ckpt_files,
            global_step=cfg.steps,
        )
        if collect_profiles:
            hw = (
                HardwareSpec.from_json_file(cfg.hardware_spec)
                if cfg.hardware_spec
                else DEFAULT_HARDWARE
            )
            # Wall-time dependent: excluded from the determinism contract.
            with open(os.path.join(out_dir, ROOFLINE_NAME), "w", encoding="utf-8") as f:
                f.write(emit_report(pipe.profiles[:200], hw, format="csv"))
    return result


def write_metrics(path, metrics) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss,unique_ids,imbalance\n")
        for step, loss, uniq, imb in metrics:
            f.write(f"{step},{loss:.17g},{uniq},{imb:.17g}\n")
