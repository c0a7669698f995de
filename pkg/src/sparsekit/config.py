"""Run configuration for the CLI: one JSON file drives every subcommand.

The seed fixes every stochastic choice (data generation, benchmark
inputs, initializer rows), so reruns with the same config are
bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .bench import BenchConfig
from .datagen import GenSpec
from .optim import AdamConfig


@dataclass(frozen=True)
class FeatureSpec:
    """How one dataset column feeds one embedding table."""

    column: str
    table: str
    dim: int = 16
    transform: str = "none"  # "none" | "mod" | "bucketize" | "hash"
    modulus: int = 1_000_003
    boundaries: tuple = ()

    def __post_init__(self):
        if self.transform not in ("none", "mod", "bucketize", "hash"):
            raise ValueError(f"unknown transform {self.transform!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        d = dict(d)
        if "boundaries" in d:
            d["boundaries"] = tuple(d["boundaries"])
        return cls(**d)


def _default_features() -> tuple:
    return (
        FeatureSpec("cat0", table="cat0", dim=16, transform="mod", modulus=1_000_003),
        FeatureSpec("cat1", table="cat1", dim=16, transform="mod", modulus=1_000_003),
        FeatureSpec(
            "amount",
            table="amount_bucket",
            dim=8,
            transform="bucketize",
            boundaries=(0.2, 0.4, 0.6, 0.8),
        ),
    )


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    num_shards: int = 1
    batch_rows: int = 256
    steps: int = 200
    prefetch_depth: int = 2
    block_size: int = 4096
    evict_threshold: int | None = 400
    evict_every: int = 50
    eval_every: int = 0
    probe_shards: int = 8
    ckpt_files: int = 2
    max_row_len: int = 64
    dataset: str | None = None
    hardware_spec: str | None = None
    optimizer: AdamConfig = field(default_factory=lambda: AdamConfig(lr=0.05))
    features: tuple = field(default_factory=_default_features)
    gen: GenSpec = field(default_factory=GenSpec)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "optimizer" in d:
            d["optimizer"] = AdamConfig.from_dict(d["optimizer"])
        if "features" in d:
            d["features"] = tuple(FeatureSpec.from_dict(f) for f in d["features"])
        if "gen" in d:
            d["gen"] = GenSpec.from_dict(d["gen"])
        if "bench" in d:
            d["bench"] = BenchConfig.from_dict(d["bench"])
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def replace(self, **kwargs) -> "RunConfig":
        from dataclasses import replace as _replace

        return _replace(self, **kwargs)
