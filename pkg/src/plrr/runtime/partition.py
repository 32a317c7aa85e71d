"""Who holds what.

The device keeps the tied embedding (its LM head), the final norm it needs
to decode hidden states, the private M weights and optimizer state. The
cloud keeps the decoder stack and the frozen public A/B. Token ids,
labels and M never serialize toward the cloud; base weights never
serialize toward the device. The split here is structural: the device
state object simply does not reference the decoder layers.
"""

from dataclasses import dataclass, field

import numpy as np

from ..adapters import CloudAdapterWeights, DeviceAdapterWeights
from ..nncore.config import ModelConfig
from ..nncore.weights import BaseWeights
from .optim import AdamWState


@dataclass
class DeviceState:
    """Device half: embedding doubles as the LM head (tied weights)."""
    cfg: ModelConfig
    embedding: np.ndarray
    final_norm: np.ndarray
    adapters: DeviceAdapterWeights
    opt_state: AdamWState = field(default_factory=AdamWState)


@dataclass
class CloudState:
    """Cloud half: frozen decoder stack plus frozen public adapters."""
    weights: BaseWeights
    adapters: CloudAdapterWeights
    opt_state: AdamWState = field(default_factory=AdamWState)


@dataclass
class PartitionPlan:
    device: DeviceState
    cloud: CloudState


def partition(w: BaseWeights, cloud_adapters: CloudAdapterWeights,
              device_adapters: DeviceAdapterWeights) -> PartitionPlan:
    device = DeviceState(cfg=w.cfg, embedding=w.embedding,
                         final_norm=w.final_norm, adapters=device_adapters)
    return PartitionPlan(device=device, cloud=CloudState(weights=w, adapters=cloud_adapters))
