"""Closed-form memory, FLOPs, traffic and throughput model.

Conventions that the published numbers require: a megabyte is 10^6 bytes,
a kilobit 10^3 bits, parameters on the device are held at 16 bits in the
split deployment regardless of wire precision, and FLOPs per token are
twice the resident parameter count.
"""

import math
from dataclasses import dataclass

from ..errors import InputError
from ..wire.ledger import expected_payload_bits
from .specs import ModelPreset, NetworkSpec

MB = 1e6
PARAM_BYTES_SPLIT = 2  # device-resident parameters are 16-bit


def _split_device_params(preset: ModelPreset, r_c2d: int, r_d2c: int,
                         n_adapted: int) -> int:
    return preset.p_device_embed + n_adapted * 3 * r_c2d * r_d2c


def device_memory_bytes(preset: ModelPreset, mode: str, r_c2d: int = 128,
                        r_d2c: int = 128, n_adapted: int | None = None,
                        bits: int = 4) -> float:
    """Bytes of RAM to hold the device-resident parameters.

    mode 'split': tied embedding once plus the private middles, at 16-bit.
    mode 'full_device': the whole (quantizable) model at `bits` precision.
    """
    if mode == "split":
        n = preset.n_layers if n_adapted is None else n_adapted
        return PARAM_BYTES_SPLIT * _split_device_params(preset, r_c2d, r_d2c, n)
    if mode == "full_device":
        return preset.p_quantizable * bits / 8
    raise InputError(f"unknown memory mode {mode!r}")


def device_flops_per_token(preset: ModelPreset, mode: str, r_c2d: int = 128,
                           r_d2c: int = 128, n_adapted: int | None = None) -> float:
    """Operations per token on the device: 2x resident parameter count."""
    if mode == "split":
        n = preset.n_layers if n_adapted is None else n_adapted
        return 2.0 * _split_device_params(preset, r_c2d, r_d2c, n)
    if mode == "full_device":
        return 2.0 * preset.p_quantizable
    raise InputError(f"unknown FLOPs mode {mode!r}")


def resource_ratios(preset: ModelPreset, r_c2d: int = 128, r_d2c: int = 128,
                    baseline_bits: int = 3) -> tuple[float, float]:
    """(memory, FLOPs) of the split deployment relative to a quantized
    full-device deployment."""
    mem = device_memory_bytes(preset, "split", r_c2d, r_d2c)
    mem_full = device_memory_bytes(preset, "full_device", bits=baseline_bits)
    fl = device_flops_per_token(preset, "split", r_c2d, r_d2c)
    fl_full = device_flops_per_token(preset, "full_device")
    return mem / mem_full, fl / fl_full


def comm_bits_per_token(d: int, r_c2d: int, r_d2c: int, n_adapted: int,
                        wire_bits: int = 16, phase: str = "decode",
                        embed_grad: bool = False) -> tuple[int, int]:
    """(bits up, bits down) crossing the network per token."""
    return expected_payload_bits(phase, d, r_c2d, r_d2c, n_adapted,
                                 wire_bits, tokens=1, embed_grad=embed_grad)


def reduction_ratio(rank: int, d: int) -> float:
    """Shrinkage of the per-transmission base from d to the adapter rank."""
    return 1.0 - rank / d


def unit_comm_time(network: NetworkSpec, d: int, r_c2d: int, r_d2c: int,
                   n_adapted: int, wire_bits: int = 16,
                   emb_policy: str = "up_only") -> float:
    """Seconds of network time to push one token through the stack.

    Per adapted layer one rank-r_c2d tensor travels down and three
    rank-r_d2c tensors travel up; the token embedding term covers the
    decoder stack's input (and its output too under 'up_and_down')."""
    if emb_policy not in ("up_only", "up_and_down"):
        raise InputError(f"unknown embedding policy {emb_policy!r}")
    layer = n_adapted * wire_bits * (3 * r_d2c / network.b_d2c + r_c2d / network.b_c2d)
    emb = wire_bits * d / network.b_d2c
    if emb_policy == "up_and_down":
        emb += wire_bits * d / network.b_c2d
    return layer + emb


def unit_grad_time(network: NetworkSpec, d: int, r_c2d: int, r_d2c: int,
                   n_adapted: int, wire_bits: int = 16) -> float:
    """Backward-pass mirror of unit_comm_time.

    Gradients retrace the forward tensors in the opposite direction, so
    the 3*r_d2c bulk is billed at the faster cloud-to-device link and the
    r_c2d tensor at the uplink; the hidden-state gradient goes up and the
    embedding gradient comes down (the training cycle tunes the embedding).
    """
    layer = n_adapted * wire_bits * (3 * r_d2c / network.b_c2d + r_c2d / network.b_d2c)
    emb = wire_bits * d / network.b_d2c + wire_bits * d / network.b_c2d
    return layer + emb


def overhead_decomposition(network: NetworkSpec, d: int, r_c2d: int, r_d2c: int,
                           n_adapted: int, wire_bits: int = 16,
                           emb_policy: str = "up_only") -> dict:
    """Itemized unit_comm_time, in milliseconds; items sum to the total."""
    items = {
        "layer_up_ms": n_adapted * wire_bits * 3 * r_d2c / network.b_d2c * 1e3,
        "layer_down_ms": n_adapted * wire_bits * r_c2d / network.b_c2d * 1e3,
        "embed_up_ms": wire_bits * d / network.b_d2c * 1e3,
        "embed_down_ms": (wire_bits * d / network.b_c2d * 1e3
                          if emb_policy == "up_and_down" else 0.0),
    }
    items["total_ms"] = sum(items.values())
    return items


@dataclass(frozen=True)
class ThroughputInputs:
    """Measured base throughputs, tokens/second. Infinity means 'ignore'."""
    tps_decoder_cloud: float
    tps_lrrt_device: float = math.inf
    tps_lrrt_cloud: float = math.inf
    tps_lmhead_device: float = math.inf
    bs: int = 1
    l: int = 1

    def __post_init__(self):
        for f in ("tps_decoder_cloud", "tps_lrrt_device", "tps_lrrt_cloud",
                  "tps_lmhead_device"):
            if getattr(self, f) <= 0:
                raise InputError(f"{f} must be positive")


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def infer_tps(inputs: ThroughputInputs, t: float) -> float:
    """Harmonic composition of the stage throughputs plus wire time."""
    lrrt = _inv(inputs.tps_lrrt_device) + _inv(inputs.tps_lrrt_cloud)
    denom = _inv(inputs.tps_decoder_cloud) + lrrt + _inv(inputs.tps_lmhead_device) + t
    return 1.0 / denom


def train_tps(inputs: ThroughputInputs, t: float, t_prime: float) -> float:
    """As infer_tps with the gradient wire time added per token."""
    lrrt = _inv(inputs.tps_lrrt_device) + _inv(inputs.tps_lrrt_cloud)
    denom = (_inv(inputs.tps_decoder_cloud) + lrrt + _inv(inputs.tps_lmhead_device)
             + t + t_prime)
    return 1.0 / denom


def lora_layer_budget(target_fraction: float, tps_cloud: float,
                      network: NetworkSpec, d: int, wire_bits: int = 16,
                      emb_policy: str = "up_only") -> int:
    """Largest adapted-layer count keeping a full-rank (base d) adapter
    deployment at or above target_fraction of the cloud-only speed.

    Device-side compute is ignored; only the decoder throughput and the
    wire time enter. Returns 0 when even a single layer misses the target.
    """
    if not 0.0 < target_fraction < 1.0 + 1e-12:
        raise InputError("target fraction must be in (0, 1]")
    target = target_fraction * tps_cloud
    inputs = ThroughputInputs(tps_decoder_cloud=tps_cloud)
    n = 0
    while True:
        t = unit_comm_time(network, d, d, d, n + 1, wire_bits, emb_policy)
        if infer_tps(inputs, t) < target:
            return n
        n += 1
        if n > 100_000:
            raise InputError("layer budget search did not terminate")


def m_s_score(tps: float, tps_cloud: float, avg_score: float,
              no_tuning_score: float) -> float:
    """Speed-weighted tuning gain: (tps/tps_cloud) * (score - baseline)."""
    if tps_cloud <= 0:
        raise InputError("cloud throughput must be positive")
    return (tps / tps_cloud) * (avg_score - no_tuning_score)
