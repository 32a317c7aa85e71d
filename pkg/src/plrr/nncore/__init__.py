from .config import ModelConfig
from .kernels import BACKEND
from .loss import masked_cross_entropy
from .model import (ForwardStash, KVCache, decoder_forward, embed,
                    forward_monolithic, generate_monolithic, lm_head)
from .weights import BaseWeights, init_base_weights

__all__ = [
    "ModelConfig", "BaseWeights", "init_base_weights", "BACKEND",
    "KVCache", "ForwardStash", "embed", "decoder_forward", "lm_head",
    "forward_monolithic", "generate_monolithic", "masked_cross_entropy",
]
