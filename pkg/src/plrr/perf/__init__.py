from .model import (ThroughputInputs, comm_bits_per_token, device_flops_per_token,
                    device_memory_bytes, infer_tps, lora_layer_budget, m_s_score,
                    overhead_decomposition, reduction_ratio, resource_ratios,
                    train_tps, unit_comm_time, unit_grad_time)
from .report import COLUMNS, estimate_rows, rows_to_csv
from .specs import (DEFAULT_CLOUD, DEFAULT_DEVICE, DEFAULT_NETWORK, HardwareSpec,
                    ModelPreset, NetworkSpec, list_presets, load_preset)

__all__ = [
    "HardwareSpec", "NetworkSpec", "ModelPreset", "load_preset", "list_presets",
    "DEFAULT_DEVICE", "DEFAULT_CLOUD", "DEFAULT_NETWORK",
    "device_memory_bytes", "device_flops_per_token", "resource_ratios",
    "comm_bits_per_token", "reduction_ratio", "unit_comm_time", "unit_grad_time",
    "overhead_decomposition", "ThroughputInputs", "infer_tps", "train_tps",
    "lora_layer_budget", "m_s_score", "COLUMNS", "estimate_rows", "rows_to_csv",
]
