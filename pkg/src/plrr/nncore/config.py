"""Model architecture configuration."""

from dataclasses import dataclass, fields

from ..errors import InputError


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the decoder-only transformer.

    The hidden size must divide evenly into heads. ``mlp_hidden`` defaults
    to 4*d when left at 0.
    """

    d: int
    n_layers: int
    n_heads: int
    vocab: int
    max_seq: int
    mlp_hidden: int = 0
    rope_base: float = 10000.0
    rms_eps: float = 1e-5

    def __post_init__(self):
        if self.mlp_hidden == 0:
            object.__setattr__(self, "mlp_hidden", 4 * self.d)
        for name in ("d", "n_layers", "n_heads", "vocab", "max_seq", "mlp_hidden"):
            if getattr(self, name) < 1:
                raise InputError(f"ModelConfig.{name} must be >= 1")
        if self.d % self.n_heads != 0:
            raise InputError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if (self.d // self.n_heads) % 2 != 0:
            raise InputError("head dim must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
