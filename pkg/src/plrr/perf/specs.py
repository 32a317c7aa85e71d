"""Hardware, network and model-size inputs to the analytical model.

Model presets carry the parameter counts the memory/FLOPs tables need.
The quantizable counts were inverted from the published memory table; the
1B preset includes its embeddings in the quantized count while the larger
presets exclude theirs, and that inconsistency is preserved per preset
rather than corrected, since the goal is to reproduce the table.
"""

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

from ..errors import InputError


@dataclass(frozen=True)
class HardwareSpec:
    flops: float      # operations / second
    mem_bw: float     # bytes / second

    def __post_init__(self):
        if self.flops <= 0 or self.mem_bw <= 0:
            raise InputError("hardware spec must be positive")


@dataclass(frozen=True)
class NetworkSpec:
    b_d2c: float      # device-to-cloud bits / second
    b_c2d: float      # cloud-to-device bits / second

    def __post_init__(self):
        if self.b_d2c <= 0 or self.b_c2d <= 0:
            raise InputError("network bandwidths must be positive")


# flagship-phone class device, single datacenter accelerator, consumer 5G
DEFAULT_DEVICE = HardwareSpec(flops=15.8e12, mem_bw=42.7e9)
DEFAULT_CLOUD = HardwareSpec(flops=312e12, mem_bw=1935e9)
DEFAULT_NETWORK = NetworkSpec(b_d2c=60e6, b_c2d=100e6)


@dataclass(frozen=True)
class ModelPreset:
    name: str
    p_total: float
    p_quantizable: float
    d: int | None = None
    n_layers: int | None = None
    vocab: int | None = None
    tps_decoder_cloud: float | None = None

    def __post_init__(self):
        if self.p_quantizable > self.p_total:
            raise InputError("quantizable parameters exceed total")

    @property
    def p_device_embed(self) -> int:
        if self.d is None or self.vocab is None:
            raise InputError(f"preset {self.name} has no architecture dims")
        return self.vocab * self.d


_FLOAT_KEYS = {"p_total", "p_quantizable", "tps_decoder_cloud"}
_INT_KEYS = {"d", "n_layers", "vocab"}


def parse_preset(text: str) -> ModelPreset:
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"preset line {lineno} is not 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "name":
            kv[key] = value
        elif key in _FLOAT_KEYS:
            kv[key] = float(value)
        elif key in _INT_KEYS:
            kv[key] = int(value)
        else:
            raise InputError(f"unknown preset key {key!r}")
    try:
        return ModelPreset(**kv)
    except TypeError as e:
        raise InputError(f"incomplete preset: {e}") from None


def load_preset(name_or_path: str) -> ModelPreset:
    """Load a preset by shipped name (llama7, ...) or from a file path."""
    path = Path(name_or_path)
    if path.suffix == ".txt" and path.exists():
        return parse_preset(path.read_text())
    res = importlib.resources.files("plrr") / "presets" / f"{name_or_path}.txt"
    if not res.is_file():
        raise InputError(f"unknown preset {name_or_path!r}")
    return parse_preset(res.read_text())


def list_presets() -> list[str]:
    res = importlib.resources.files("plrr") / "presets"
    return sorted(p.name.removesuffix(".txt") for p in res.iterdir()
                  if p.name.endswith(".txt"))
