"""Estimate rows with the fixed reporting schema.

Every row carries the same columns (preset, mode, bits, memory_mb,
flops_g, t_ms, tprime_ms, tps) so JSON and CSV outputs stay aligned for
golden-file comparisons.
"""

import csv
import io

from .model import (ThroughputInputs, device_flops_per_token,
                    device_memory_bytes, infer_tps, unit_comm_time,
                    unit_grad_time)
from .specs import ModelPreset, NetworkSpec

COLUMNS = ["preset", "mode", "bits", "memory_mb", "flops_g", "t_ms", "tprime_ms", "tps"]


def _round(x, nd=4):
    return None if x is None else round(x, nd)


def estimate_rows(preset: ModelPreset, network: NetworkSpec, r_c2d: int,
                  r_d2c: int, wire_bits: int = 16, emb_policy: str = "up_only",
                  full_bits: tuple[int, ...] = (3, 4, 16)) -> list[dict]:
    rows = []
    for bits in full_bits:
        rows.append({
            "preset": preset.name,
            "mode": "full_device",
            "bits": bits,
            "memory_mb": _round(device_memory_bytes(preset, "full_device", bits=bits) / 1e6, 1),
            "flops_g": _round(device_flops_per_token(preset, "full_device") / 1e9, 2),
            "t_ms": None,
            "tprime_ms": None,
            "tps": None,
        })
    if preset.d is not None:
        t = unit_comm_time(network, preset.d, r_c2d, r_d2c, preset.n_layers,
                           wire_bits, emb_policy)
        tp = unit_grad_time(network, preset.d, r_c2d, r_d2c, preset.n_layers,
                            wire_bits)
        tps = None
        if preset.tps_decoder_cloud:
            tps = _round(infer_tps(ThroughputInputs(preset.tps_decoder_cloud), t), 2)
        rows.append({
            "preset": preset.name,
            "mode": "split",
            "bits": 16,
            "memory_mb": _round(device_memory_bytes(preset, "split", r_c2d, r_d2c) / 1e6, 1),
            "flops_g": _round(device_flops_per_token(preset, "split", r_c2d, r_d2c) / 1e9, 2),
            "t_ms": _round(t * 1e3),
            "tprime_ms": _round(tp * 1e3),
            "tps": tps,
        })
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in COLUMNS})
    return buf.getvalue()
