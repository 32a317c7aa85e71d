"""Session state and the handshake digest.

Both nodes hash their (model config, adapter config, wire precision)
tuple; a session is only established when the digests agree, so a device
paired against the wrong public weights or ranks is refused up front.
Hello nonces are single-use per cloud node to make replays detectable.
"""

import hashlib
import json
from dataclasses import dataclass, field

from ..adapters import AdapterConfig
from ..nncore.config import ModelConfig
from ..wire.ledger import TrafficLedger


def config_digest(mcfg: ModelConfig, acfg: AdapterConfig, wire_bits: int) -> str:
    blob = json.dumps(
        {"model": mcfg.to_dict(), "adapter": acfg.to_dict(), "wire_bits": wire_bits},
        sort_keys=True,
    ).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Session:
    session_id: int
    digest: str
    wire_bits: int
    phase: str = "prefill"  # prefill | decode | train
    ledger: TrafficLedger = field(default_factory=TrafficLedger)
    train_params: dict = field(default_factory=dict)
