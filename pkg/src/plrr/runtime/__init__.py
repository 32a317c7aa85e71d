"""Split runtime: cloud/device nodes, choreography, optimizer, experiments."""

from ..adapters import init_adapters
from ..nncore.weights import init_base_weights
from .cloud import CloudNode
from .device import DeviceNode, TrainingBatch
from .optim import AdamWState, adamw_step, linear_warmup_schedule
from .partition import CloudState, DeviceState, PartitionPlan, partition
from .session import Session, config_digest

__all__ = [
    "CloudNode", "DeviceNode", "TrainingBatch",
    "AdamWState", "adamw_step", "linear_warmup_schedule",
    "CloudState", "DeviceState", "PartitionPlan", "partition",
    "Session", "config_digest", "build_system",
]


def build_system(mcfg, acfg, wire_bits=32, seed=0, train_params=None,
                 cloud_tap=None):
    """Construct matching cloud and device nodes from one config pair."""
    w = init_base_weights(mcfg, seed)
    cloud_w, device_w = init_adapters(acfg, mcfg.d)
    plan = partition(w, cloud_w, device_w)
    digest = config_digest(mcfg, acfg, wire_bits)
    cloud = CloudNode(plan.cloud, digest, wire_bits, tap=cloud_tap)
    device = DeviceNode(plan.device, digest, wire_bits, train_params=train_params)
    return plan, cloud, device
