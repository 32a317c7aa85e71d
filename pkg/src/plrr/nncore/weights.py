"""Frozen base parameters of the decoder-only transformer.

The embedding matrix doubles as the LM-head projection (tied weights), so
the device-side parameter budget counts vocab*d once. All tensors are
float32 and treated as read-only after construction; training never
touches them unless the embedding is explicitly flagged trainable by the
caller of the backward pass.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig
from .rng import normal_f32


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    norm1: np.ndarray
    norm2: np.ndarray


@dataclass
class BaseWeights:
    cfg: ModelConfig
    embedding: np.ndarray  # vocab x d, also the LM-head projection
    layers: list[LayerWeights] = field(default_factory=list)
    final_norm: np.ndarray = None


def init_base_weights(cfg: ModelConfig, seed: int) -> BaseWeights:
    d, mlp = cfg.d, cfg.mlp_hidden
    emb = normal_f32(seed, "embedding", (cfg.vocab, d), 1.0)
    layers = []
    for i in range(cfg.n_layers):
        proj_std = d**-0.5
        layers.append(
            LayerWeights(
                wq=normal_f32(seed, f"layer{i}.wq", (d, d), proj_std),
                wk=normal_f32(seed, f"layer{i}.wk", (d, d), proj_std),
                wv=normal_f32(seed, f"layer{i}.wv", (d, d), proj_std),
                wo=normal_f32(seed, f"layer{i}.wo", (d, d), proj_std),
                w1=normal_f32(seed, f"layer{i}.w1", (d, mlp), proj_std),
                w2=normal_f32(seed, f"layer{i}.w2", (mlp, d), mlp**-0.5),
                norm1=np.ones(d, dtype=np.float32),
                norm2=np.ones(d, dtype=np.float32),
            )
        )
    return BaseWeights(cfg=cfg, embedding=emb, layers=layers, final_norm=np.ones(d, dtype=np.float32))


def snapshot(w: BaseWeights) -> dict[str, np.ndarray]:
    """Copies of every tensor, for frozen-weight invariance checks."""
    out = {"embedding": w.embedding.copy(), "final_norm": w.final_norm.copy()}
    for i, l in enumerate(w.layers):
        for name in ("wq", "wk", "wv", "wo", "w1", "w2", "norm1", "norm2"):
            out[f"layer{i}.{name}"] = getattr(l, name).copy()
    return out
