"""Sparse Adam / AdamW over BlockStore-resident rows.

Lazy semantics: only rows named in a step are updated; untouched rows
stay bit-identical (no moment decay, no weight decay). Bias correction
uses the global step shared by all rows, not per-row counters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import telemetry
from .embedding import BlockStore


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    variant: str = "adam"

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must be in [0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be > 0")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be >= 0")
        if self.variant not in ("adam", "adamw"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "AdamConfig":
        return cls(**d)


def sparse_adam_step(store: BlockStore, offsets, grads, cfg: AdamConfig, t: int) -> None:
    """Apply one bias-corrected Adam update to the rows at ``offsets``.

    Duplicate offsets must have been pre-aggregated upstream; ``t`` is the
    global step (>= 1) owned by the training pipeline. The adamw variant
    applies decoupled weight decay (p -= lr * wd * p) before the moment
    update. All arithmetic runs in the store dtype.
    """
    telemetry.bump("optim.sparse_adam_step")
    if t < 1:
        raise ValueError("global step t must be >= 1")
    offsets = np.asarray(offsets, dtype=np.int64)
    if len(np.unique(offsets)) != len(offsets):
        raise ValueError("sparse_adam_step requires distinct offsets")
    dt = store.dtype.type
    g = np.asarray(grads, dtype=store.dtype)
    if g.shape != (len(offsets), store.dim):
        raise ValueError(f"grads shape {g.shape} != ({len(offsets)}, {store.dim})")
    if len(offsets) == 0:
        return

    p = store.read(offsets)
    m, v = store.read_state(offsets)

    lr = dt(cfg.lr)
    b1 = dt(cfg.beta1)
    b2 = dt(cfg.beta2)
    eps = dt(cfg.eps)
    one = dt(1.0)
    bc1 = dt(1.0 - cfg.beta1**t)
    bc2 = dt(1.0 - cfg.beta2**t)

    if cfg.variant == "adamw" and cfg.weight_decay != 0.0:
        p = p - (lr * dt(cfg.weight_decay)) * p
    m = b1 * m + (one - b1) * g
    v = b2 * v + (one - b2) * (g * g)
    m_hat = m / bc1
    v_hat = v / bc2
    p = p - lr * m_hat / (np.sqrt(v_hat) + eps)

    store.write(offsets, p)
    store.write_state(offsets, m, v)


class DenseAdam:
    """Plain full Adam for a single dense parameter array (the toy model head)."""

    def __init__(self, shape, cfg: AdamConfig, dtype=np.float64):
        self.cfg = cfg
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)

    def step(self, params: np.ndarray, grads: np.ndarray, t: int) -> np.ndarray:
        cfg = self.cfg
        if cfg.variant == "adamw" and cfg.weight_decay != 0.0:
            params = params - cfg.lr * cfg.weight_decay * params
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grads
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * (grads * grads)
        m_hat = self.m / (1.0 - cfg.beta1**t)
        v_hat = self.v / (1.0 - cfg.beta2**t)
        return params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
