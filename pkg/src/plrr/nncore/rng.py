"""Per-tensor seeded random number generation.

Every weight tensor gets its own generator derived from (master seed,
tensor name), so adding or reordering tensors never shifts the streams of
the others. Reproducibility is promised within one installation only, not
across numpy versions or other implementations.
"""

import hashlib

import numpy as np


def tensor_rng(master_seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng([master_seed & 0xFFFFFFFF, *words])


def normal_f32(master_seed: int, name: str, shape, std: float) -> np.ndarray:
    rng = tensor_rng(master_seed, name)
    return (rng.standard_normal(shape) * std).astype(np.float32)
