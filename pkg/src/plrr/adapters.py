"""Low-rank residual adapters split between cloud and device.

Each adapted layer carries one shared down-projection A (d x r_c2d) plus
three up-projections B per target module (r_d2c x d), both frozen random
and resident on the cloud. The trainable middles M (r_c2d x r_d2c, one per
q/k/v) live on the device. A single A per layer keeps the downstream
transmission at one tensor per layer, since the q/k/v projections share
their input.

The asymmetric ranks exist because the two wire directions have different
bandwidth: the down-projected activations (rank r_c2d) travel cloud to
device, the M outputs (rank r_d2c) travel device to cloud.
"""

import io
import json
import logging
import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import InputError, InternalError
from .nncore.rng import normal_f32

log = logging.getLogger("plrr.adapters")

_CKPT_MAGIC = b"PLRM"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class AdapterConfig:
    r_c2d: int
    r_d2c: int
    adapted_layers: tuple[int, ...]
    scale: float = 1.0
    trainable_m: bool = True
    trainable_a: bool = False
    trainable_b: bool = False
    init_seed: int = 0

    def __post_init__(self):
        if self.r_c2d < 1 or self.r_d2c < 1:
            raise InputError("adapter ranks must be >= 1")
        layers = tuple(sorted(set(int(i) for i in self.adapted_layers)))
        object.__setattr__(self, "adapted_layers", layers)
        if any(i < 0 for i in layers):
            raise InputError("adapted layer indices must be >= 0")

    @property
    def n_adapted(self) -> int:
        return len(self.adapted_layers)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}


@dataclass
class CloudAdapterWeights:
    cfg: AdapterConfig
    a: dict[int, np.ndarray] = field(default_factory=dict)      # layer -> d x r_c2d
    b: dict[int, tuple] = field(default_factory=dict)            # layer -> (Bq, Bk, Bv), each r_d2c x d
    seed: int = 0


@dataclass
class DeviceAdapterWeights:
    cfg: AdapterConfig
    m: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)  # layer -> {q,k,v}: r_c2d x r_d2c
    paired_seed: int = 0

    def param_count(self) -> int:
        return sum(t.size for mods in self.m.values() for t in mods.values())


def init_adapters(cfg: AdapterConfig, d: int):
    """Fresh (cloud, device) pair. A ~ N(0, 1/d), B ~ N(0, 1/r_d2c), M = 0.

    Zero M means the adapted model starts exactly at the base model. Ranks
    at or above d are allowed (the ledger constants test uses them) but
    defeat the transmission savings, so they are flagged.
    """
    if cfg.r_c2d >= d or cfg.r_d2c >= d:
        log.warning("adapter rank >= hidden size %d; no transmission savings", d)
    cloud = _random_public(cfg, d, cfg.init_seed)
    device = DeviceAdapterWeights(cfg=cfg, paired_seed=cfg.init_seed)
    for li in cfg.adapted_layers:
        device.m[li] = {
            mod: np.zeros((cfg.r_c2d, cfg.r_d2c), dtype=np.float32) for mod in ("q", "k", "v")
        }
    return cloud, device


def _random_public(cfg: AdapterConfig, d: int, seed: int) -> CloudAdapterWeights:
    cloud = CloudAdapterWeights(cfg=cfg, seed=seed)
    a_std = d**-0.5
    b_std = cfg.r_d2c**-0.5
    for li in cfg.adapted_layers:
        cloud.a[li] = normal_f32(seed, f"adapter{li}.a", (d, cfg.r_c2d), a_std)
        cloud.b[li] = tuple(
            normal_f32(seed, f"adapter{li}.b{mod}", (cfg.r_d2c, d), b_std) for mod in ("q", "k", "v")
        )
    return cloud


def reinit_public(cloud: CloudAdapterWeights, new_seed: int, d: int | None = None) -> CloudAdapterWeights:
    """Fresh random A,B of identical shapes; the paired M is untouched."""
    if d is None:
        d = next(iter(cloud.a.values())).shape[0] if cloud.a else 0
    return _random_public(cloud.cfg, d, new_seed)


def apply_adapter(x: np.ndarray, a: np.ndarray, m: np.ndarray, b: np.ndarray,
                  scale: float = 1.0) -> np.ndarray:
    """Residual path of one target module: scale * ((x @ a) @ m) @ b."""
    if x.shape[1] != a.shape[0] or a.shape[1] != m.shape[0] or m.shape[1] != b.shape[0]:
        raise InputError("adapter shape chain d -> r_c2d -> r_d2c -> d broken")
    return np.float32(scale) * (((x @ a) @ m) @ b)


class LocalPort:
    """In-process adapter port: multiplies by M and keeps grads locally.

    Used by the monolithic oracle and by the device node's own evaluation.
    During training it stashes the per-layer M-inputs so backward can form
    grad(M) = z^T @ (grad at B input).
    """

    def __init__(self, device: DeviceAdapterWeights, record: bool = False):
        self.device = device
        self.record = record
        self.z_stash: dict[int, np.ndarray] = {}
        self._grads: dict[int, dict[str, np.ndarray]] = {}

    def project(self, layer: int, z: np.ndarray):
        mods = self.device.m[layer]
        if self.record:
            self.z_stash[layer] = z
        return z @ mods["q"], z @ mods["k"], z @ mods["v"]

    def backward(self, layer: int, dpq: np.ndarray, dpk: np.ndarray, dpv: np.ndarray):
        z = self.z_stash.get(layer)
        if z is None:
            raise InternalError(f"no recorded M-input for layer {layer}")
        mods = self.device.m[layer]
        self._grads[layer] = {"q": z.T @ dpq, "k": z.T @ dpk, "v": z.T @ dpv}
        return dpq @ mods["q"].T + dpk @ mods["k"].T + dpv @ mods["v"].T

    def reset_grads(self):
        self._grads = {}

    def take_grads(self) -> dict[int, dict[str, np.ndarray]]:
        g, self._grads = self._grads, {}
        return g


class CloudHook:
    """Cloud-side adapter state handed to the decoder stack.

    Bundles the frozen A/B weights with whichever port reaches M: a
    LocalPort in-process, or the split runtime's remote port that crosses
    the wire.
    """

    def __init__(self, cloud: CloudAdapterWeights, port):
        self.cloud = cloud
        self.port = port
        self.adapted_layers = frozenset(cloud.cfg.adapted_layers)
        self.scale = cloud.cfg.scale
        self.trainable_a = cloud.cfg.trainable_a
        self.trainable_b = cloud.cfg.trainable_b

    def a(self, layer: int) -> np.ndarray:
        return self.cloud.a[layer]

    def b(self, layer: int) -> tuple:
        return self.cloud.b[layer]


def local_hook(cloud: CloudAdapterWeights, device: DeviceAdapterWeights,
               record: bool = False) -> CloudHook:
    return CloudHook(cloud, LocalPort(device, record=record))


def cloud_param_count(cloud: CloudAdapterWeights, d: int) -> int:
    cfg = cloud.cfg
    return cfg.n_adapted * (d * cfg.r_c2d + 3 * cfg.r_d2c * d)


def device_param_count(cfg: AdapterConfig) -> int:
    return cfg.n_adapted * 3 * cfg.r_c2d * cfg.r_d2c


def save_private_checkpoint(path, device: DeviceAdapterWeights):
    """Versioned binary container: adapter config + M tensors + paired seed."""
    header = {
        "cfg": device.cfg.to_dict(),
        "paired_seed": device.paired_seed,
        "layers": sorted(device.m),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_CKPT_MAGIC)
    buf.write(struct.pack("<BI", _CKPT_VERSION, len(blob)))
    buf.write(blob)
    for li in sorted(device.m):
        for mod in ("q", "k", "v"):
            t = device.m[li][mod]
            buf.write(struct.pack("<II", *t.shape))
            buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_private_checkpoint(path) -> DeviceAdapterWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _CKPT_MAGIC:
        raise InputError("not a private adapter checkpoint")
    version, hlen = struct.unpack_from("<BI", raw, 4)
    if version != _CKPT_VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    off = 9
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    cfg_d = dict(header["cfg"])
    cfg_d["adapted_layers"] = tuple(cfg_d["adapted_layers"])
    cfg = AdapterConfig(**cfg_d)
    device = DeviceAdapterWeights(cfg=cfg, paired_seed=header["paired_seed"])
    for li in header["layers"]:
        mods = {}
        for mod in ("q", "k", "v"):
            r0, r1 = struct.unpack_from("<II", raw, off)
            off += 8
            n = r0 * r1 * 4
            mods[mod] = np.frombuffer(raw[off:off + n], dtype="<f4").reshape(r0, r1).copy()
            off += n
        device.m[li] = mods
    return device
