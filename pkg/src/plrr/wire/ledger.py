"""Exact per-session traffic accounting.

Payload counters hold raw tensor data bits only; frame headers, tensor
descriptors and control payload bytes all land in the framing counters.
That split keeps the payload numbers directly comparable to the
closed-form per-token expressions, which never include framing.
"""

from dataclasses import dataclass, field


@dataclass
class TrafficLedger:
    bits_d2c_payload: int = 0
    bits_c2d_payload: int = 0
    bits_d2c_framing: int = 0
    bits_c2d_framing: int = 0
    n_c2d: dict = field(default_factory=dict)          # layer -> tensor sends
    n_d2c: dict = field(default_factory=dict)
    bits_c2d_by_layer: dict = field(default_factory=dict)
    bits_d2c_by_layer: dict = field(default_factory=dict)
    tokens_processed: int = 0
    overflow_events: int = 0

    def record(self, direction: str, frame_len: int, raw_bits: int,
               layer: int | None, n_tensors: int, overflow: int = 0):
        framing_bits = frame_len * 8 - raw_bits
        if direction == "d2c":
            self.bits_d2c_payload += raw_bits
            self.bits_d2c_framing += framing_bits
            if layer is not None and n_tensors:
                self.n_d2c[layer] = self.n_d2c.get(layer, 0) + n_tensors
                self.bits_d2c_by_layer[layer] = self.bits_d2c_by_layer.get(layer, 0) + raw_bits
        elif direction == "c2d":
            self.bits_c2d_payload += raw_bits
            self.bits_c2d_framing += framing_bits
            if layer is not None and n_tensors:
                self.n_c2d[layer] = self.n_c2d.get(layer, 0) + n_tensors
                self.bits_c2d_by_layer[layer] = self.bits_c2d_by_layer.get(layer, 0) + raw_bits
        else:
            raise ValueError(f"bad direction {direction}")
        self.overflow_events += overflow

    def adapted_layer_payload_bits(self) -> int:
        """Raw bits that crossed the wire for adapter exchanges, both ways."""
        return sum(self.bits_c2d_by_layer.values()) + sum(self.bits_d2c_by_layer.values())

    def to_dict(self) -> dict:
        return {
            "bits_d2c_payload": self.bits_d2c_payload,
            "bits_c2d_payload": self.bits_c2d_payload,
            "bits_d2c_framing": self.bits_d2c_framing,
            "bits_c2d_framing": self.bits_c2d_framing,
            "n_c2d": {str(k): v for k, v in sorted(self.n_c2d.items())},
            "n_d2c": {str(k): v for k, v in sorted(self.n_d2c.items())},
            "tokens_processed": self.tokens_processed,
            "overflow_events": self.overflow_events,
        }


@dataclass
class LedgerExpectation:
    ok: bool
    expected_d2c: int
    actual_d2c: int
    expected_c2d: int
    actual_c2d: int
    detail: str = ""


def expected_payload_bits(phase: str, d: int, r_c2d: int, r_d2c: int,
                          n_adapted: int, wire_bits: int, tokens: int = 1,
                          embed_grad: bool = False) -> tuple[int, int]:
    """Closed-form raw payload bits (d2c, c2d) for one protocol phase.

    decode counts per token; prefill counts a whole prompt of `tokens`
    rows (the final hidden crosses once, not per token); train counts a
    full step over bs*l = `tokens` rows, forward and backward.
    """
    layer_up = n_adapted * 3 * r_d2c
    layer_down = n_adapted * r_c2d
    if phase == "decode":
        d2c = wire_bits * tokens * (d + layer_up)
        c2d = wire_bits * tokens * (layer_down + d)
    elif phase == "prefill":
        d2c = wire_bits * tokens * (d + layer_up)
        c2d = wire_bits * (tokens * layer_down + d)
    elif phase == "train":
        d2c = wire_bits * tokens * (2 * d + layer_up + layer_down)
        c2d = wire_bits * tokens * (d + layer_down + layer_up + (d if embed_grad else 0))
    else:
        raise ValueError(f"unknown phase {phase}")
    return d2c, c2d


def ledger_check(ledger: TrafficLedger, phase: str, d: int, r_c2d: int, r_d2c: int,
                 n_adapted: int, wire_bits: int, tokens: int,
                 embed_grad: bool = False) -> LedgerExpectation:
    """Exact integer comparison of measured payload bits vs the formula."""
    exp_d2c, exp_c2d = expected_payload_bits(
        phase, d, r_c2d, r_d2c, n_adapted, wire_bits, tokens, embed_grad)
    ok = exp_d2c == ledger.bits_d2c_payload and exp_c2d == ledger.bits_c2d_payload
    detail = "" if ok else (
        f"d2c expected {exp_d2c} got {ledger.bits_d2c_payload}; "
        f"c2d expected {exp_c2d} got {ledger.bits_c2d_payload}")
    return LedgerExpectation(ok, exp_d2c, ledger.bits_d2c_payload,
                             exp_c2d, ledger.bits_c2d_payload, detail)
