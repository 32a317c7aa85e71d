"""Text run configuration: `section.key = value` lines, `#` comments.

Unknown keys are rejected so typos fail loudly. Defaults produce a small
self-contained toy system suitable for the loopback commands.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

from .adapters import AdapterConfig
from .errors import InputError
from .nncore.config import ModelConfig


@dataclass
class ModelSection:
    d: int = 48
    n_layers: int = 2
    n_heads: int = 4
    mlp_hidden: int = 0
    vocab: int = 256
    max_seq: int = 64
    seed: int = 0


@dataclass
class AdapterSection:
    r_c2d: int = 24
    r_d2c: int = 24
    scale: float = 1.0
    adapted_layers: str = "all"
    trainable_m: bool = True
    trainable_a: bool = False
    trainable_b: bool = False
    seed: int = 1


@dataclass
class WireSection:
    dtype_bits: int = 32
    transport: str = "loopback"  # loopback | tcp
    listen_addr: str = "127.0.0.1:7433"
    connect_addr: str = "127.0.0.1:7433"


@dataclass
class TrainSection:
    lr: float = 0.05
    steps: int = 400
    warmup_ratio: float = 0.1
    batch_size: int = 32
    seq_len: int = 0          # 0: fit to the longest example
    train_embedding: bool = False


@dataclass
class PerfSection:
    preset: str = "llama7"
    emb_policy: str = "up_only"
    b_d2c: float = 60e6       # config key: perf.network.b_d2c
    b_c2d: float = 100e6      # config key: perf.network.b_c2d


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    wire: WireSection = field(default_factory=WireSection)
    train: TrainSection = field(default_factory=TrainSection)
    perf: PerfSection = field(default_factory=PerfSection)

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(d=m.d, n_layers=m.n_layers, n_heads=m.n_heads,
                           vocab=m.vocab, max_seq=m.max_seq, mlp_hidden=m.mlp_hidden)

    def adapter_config(self) -> AdapterConfig:
        a = self.adapter
        if a.adapted_layers.strip() == "all":
            layers = tuple(range(self.model.n_layers))
        else:
            try:
                layers = tuple(int(x) for x in a.adapted_layers.split(",") if x.strip())
            except ValueError:
                raise InputError(f"bad adapted_layers {a.adapted_layers!r}") from None
        return AdapterConfig(r_c2d=a.r_c2d, r_d2c=a.r_d2c, scale=a.scale,
                             adapted_layers=layers, trainable_m=a.trainable_m,
                             trainable_a=a.trainable_a, trainable_b=a.trainable_b,
                             init_seed=a.seed)

    def train_params(self) -> dict:
        t = self.train
        return {"lr": t.lr, "steps": t.steps, "warmup_ratio": t.warmup_ratio,
                "train_embedding": t.train_embedding}

    def to_dict(self) -> dict:
        out = {}
        for sec_field in fields(self):
            sec = getattr(self, sec_field.name)
            out[sec_field.name] = {f.name: getattr(sec, f.name) for f in fields(sec)}
        return out


_KEY_ALIASES = {("perf", "network.b_d2c"): "b_d2c", ("perf", "network.b_c2d"): "b_c2d"}
_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False,
                 "yes": True, "no": False}


def _convert(raw: str, current):
    if isinstance(current, bool):
        s = raw.strip().lower()
        if s not in _BOOL_STRINGS:
            raise InputError(f"expected boolean, got {raw!r}")
        return _BOOL_STRINGS[s]
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def apply_assignment(cfg: RunConfig, dotted: str, raw: str):
    section_name, _, key = dotted.strip().partition(".")
    if not key:
        raise InputError(f"config key {dotted!r} must be section.key")
    if not hasattr(cfg, section_name):
        raise InputError(f"unknown config section {section_name!r}")
    section = getattr(cfg, section_name)
    key = _KEY_ALIASES.get((section_name, key), key)
    if not hasattr(section, key):
        raise InputError(f"unknown config key {dotted!r}")
    try:
        value = _convert(raw, getattr(section, key))
    except ValueError:
        raise InputError(f"bad value {raw!r} for {dotted}") from None
    setattr(section, key, value)


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected 'section.key = value'")
            dotted, _, raw = line.partition("=")
            apply_assignment(cfg, dotted, raw)
    for item in overrides or []:
        if "=" not in item:
            raise InputError(f"override {item!r} must be section.key=value")
        dotted, _, raw = item.partition("=")
        apply_assignment(cfg, dotted, raw)
    return cfg
