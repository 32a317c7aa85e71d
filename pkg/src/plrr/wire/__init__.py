from .frames import (Frame, MessageType, decode_frame, encode_frame,
                     f16_to_f32, f32_to_f16_rne)
from .ledger import TrafficLedger, expected_payload_bits, ledger_check
from .transport import (CaptureTap, FrameChannel, SocketConn, loopback_pair,
                        read_capture)

__all__ = [
    "Frame", "MessageType", "decode_frame", "encode_frame",
    "f32_to_f16_rne", "f16_to_f32",
    "TrafficLedger", "expected_payload_bits", "ledger_check",
    "FrameChannel", "SocketConn", "loopback_pair", "CaptureTap", "read_capture",
]
