"""Binary frame format for tensors and control messages.

Fixed little-endian layout, 21-byte header:

    magic    4B  "PLRR"
    version  1B  (=1)
    msg_type 1B
    session  4B  u32
    seq      4B  u32
    layer    2B  u16, 0xFFFF when not layer-scoped
    module   1B  0=shared/none 1=q 2=k 3=v 4=qkv-bundle
    length   4B  u32 payload byte count
    payload  ...

Tensor payloads are one or more TensorPayload records back to back:
dtype byte (0=binary32, 1=binary16), ndims byte, ndims little-endian u32
dims, then the raw row-major data. Control payloads (hello, errors) are
UTF-8 JSON.
"""

import json
import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..errors import FramingError, ProtocolError

MAGIC = b"PLRR"
VERSION = 1
HEADER_LEN = 21
NO_LAYER = 0xFFFF

MOD_NONE, MOD_Q, MOD_K, MOD_V, MOD_QKV = 0, 1, 2, 3, 4


class MessageType(IntEnum):
    Hello = 1
    HelloAck = 2
    TokenEmbeds = 3
    DownAct = 4
    UpActs = 5
    LastHidden = 6
    FinalHiddenPos = 7
    GradLastHidden = 8
    GradDown = 9
    GradUp = 10
    GradEmbeds = 11
    Close = 12
    ErrorMsg = 13


D2C_TYPES = frozenset({
    MessageType.Hello, MessageType.TokenEmbeds, MessageType.UpActs,
    MessageType.GradLastHidden, MessageType.GradUp, MessageType.Close,
})
C2D_TYPES = frozenset({
    MessageType.HelloAck, MessageType.DownAct, MessageType.LastHidden,
    MessageType.FinalHiddenPos, MessageType.GradDown, MessageType.GradEmbeds,
    MessageType.Close, MessageType.ErrorMsg,
})

_HEADER = struct.Struct("<4sBBIIHBI")


@dataclass
class Frame:
    msg_type: int
    session_id: int = 0
    seq: int = 0
    layer: int = NO_LAYER
    module_tag: int = MOD_NONE
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, int(frame.msg_type), frame.session_id,
                        frame.seq, frame.layer, frame.module_tag,
                        len(frame.payload)) + frame.payload


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER_LEN:
        raise FramingError(f"frame truncated at {len(data)} bytes")
    magic, version, msg_type, session_id, seq, layer, module_tag, plen = \
        _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    if len(data) != HEADER_LEN + plen:
        raise FramingError("payload length does not match header")
    try:
        mt = MessageType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg_type}") from None
    return Frame(msg_type=mt, session_id=session_id, seq=seq, layer=layer,
                 module_tag=module_tag, payload=data[HEADER_LEN:])


def f32_to_f16_rne(x: np.ndarray) -> np.ndarray:
    """Round-to-nearest-even narrowing to IEEE binary16 (numpy's cast rule).

    Out-of-range values become infinities per IEEE; encode_tensor counts
    them for the ledger diagnostics instead of warning.
    """
    with np.errstate(over="ignore"):
        return np.asarray(x, dtype=np.float32).astype(np.float16)


def f16_to_f32(x: np.ndarray) -> np.ndarray:
    """Exact widening from binary16."""
    return np.asarray(x, dtype=np.float16).astype(np.float32)


DTYPE_F32, DTYPE_F16 = 0, 1


def encode_tensor(arr: np.ndarray, wire_bits: int) -> tuple[bytes, int, int]:
    """Serialize one tensor. Returns (bytes, raw data bits, overflow count).

    Overflows are finite float32 values that narrow to infinity on a
    16-bit wire; they are reported so the ledger can flag them.
    """
    a = np.ascontiguousarray(arr, dtype=np.float32)
    overflow = 0
    if wire_bits == 16:
        narrowed = f32_to_f16_rne(a)
        overflow = int(np.sum(np.isinf(narrowed) & np.isfinite(a)))
        raw = narrowed.astype("<f2").tobytes()
        dt = DTYPE_F16
    elif wire_bits == 32:
        raw = a.astype("<f4").tobytes()
        dt = DTYPE_F32
    else:
        raise ProtocolError(f"unsupported wire precision {wire_bits}")
    head = struct.pack("<BB", dt, a.ndim) + b"".join(
        struct.pack("<I", s) for s in a.shape)
    return head + raw, a.size * wire_bits, overflow


def decode_tensors(payload: bytes) -> tuple[list[np.ndarray], int, int]:
    """Parse back-to-back tensor records.

    Returns (float32 arrays, total raw data bits, descriptor byte count).
    """
    out = []
    off = 0
    raw_bits = 0
    desc_bytes = 0
    while off < len(payload):
        if off + 2 > len(payload):
            raise FramingError("tensor record truncated")
        dt, ndims = struct.unpack_from("<BB", payload, off)
        off += 2
        if off + 4 * ndims > len(payload):
            raise FramingError("tensor dims truncated")
        dims = struct.unpack_from(f"<{ndims}I", payload, off)
        off += 4 * ndims
        desc_bytes += 2 + 4 * ndims
        count = int(np.prod(dims)) if ndims else 1
        if dt == DTYPE_F32:
            nbytes, np_dt, bits = 4 * count, "<f4", 32
        elif dt == DTYPE_F16:
            nbytes, np_dt, bits = 2 * count, "<f2", 16
        else:
            raise ProtocolError(f"unknown tensor dtype {dt}")
        if off + nbytes > len(payload):
            raise FramingError("tensor data truncated")
        arr = np.frombuffer(payload[off:off + nbytes], dtype=np_dt).astype(np.float32)
        out.append(arr.reshape(dims))
        off += nbytes
        raw_bits += count * bits
    return out, raw_bits, desc_bytes


def control_payload(**kv) -> bytes:
    return json.dumps(kv, sort_keys=True).encode("utf-8")


def parse_control(payload: bytes) -> dict:
    try:
        return json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FramingError(f"bad control payload: {e}") from None
