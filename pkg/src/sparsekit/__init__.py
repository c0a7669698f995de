"""sparsekit: a desk-scale sparse-embedding training stack.

Conflict-free dynamic embedding tables, ragged feature engineering,
simulated all-to-all sharding, sparse Adam/AdamW, sharded SafeTensors
checkpoints, a columnar dataset format with a prefetching reader, and a
bandwidth-based roofline profiler with an operator benchmark harness.
"""

from .checkpoint import (
    CheckpointError,
    CheckpointManifest,
    inspect_checkpoint,
    load_sharded,
    read_safetensors,
    save_sharded,
    write_safetensors,
)
from .columnio import ColumnIOError, ColumnSchema, ColumnSpec, open_reader, write_dataset
from .config import FeatureSpec, RunConfig
from .embedding import BlockStore, EmbeddingTable, IDMap, initial_rows
from .features import (
    FusedPlan,
    bucketize,
    cross,
    fused_bucketize,
    fused_mod,
    hash_feature,
    mod_transform,
)
from .optim import AdamConfig, DenseAdam, sparse_adam_step
from .ragged import RaggedTensor
from .roofline import (
    DEFAULT_HARDWARE,
    HardwareSpec,
    OpProfile,
    bandwidth_intensity,
    classify,
    emit_report,
    mbu,
    mfu,
)
from .segments import segment_reduce, segment_tile
from .sharding import (
    LoadStats,
    LogicalTable,
    PartitionResult,
    ShardPlan,
    all_to_all_grad_update,
    all_to_all_lookup,
    load_stats,
    merge_tables_by_dim,
    unique_partition,
)
from .train import TrainResult, train_toy

__version__ = "0.1.0"
