"""Cloud node: serves the frozen decoder stack to device sessions.

Each connection is one session handled sequentially (one in-flight
request); multiple sessions may run concurrently on threads, sharing the
read-only weights. Per-session state (KV cache, stash, ledger) is
confined to its handler.
"""

import logging
import socket
import threading

import numpy as np

from ..adapters import CloudHook
from ..errors import PlrrError, ProtocolError
from ..nncore.backward import stack_backward
from ..nncore.model import ForwardStash, KVCache, decoder_forward
from ..wire.frames import (MOD_NONE, MOD_QKV, Frame, MessageType,
                           control_payload, encode_tensor, parse_control)
from ..wire.transport import FrameChannel, SocketConn
from .optim import adamw_step, linear_warmup_schedule
from .partition import CloudState
from .session import Session

log = logging.getLogger("plrr.cloud")


class RemoteDevicePort:
    """Adapter port that reaches the device-resident M over the wire.

    One DownAct send and one UpActs receive per adapted layer in forward;
    the mirrored GradDown/GradUp pair in backward. In train sessions the
    tensors travel as (bs, l, r) so either side can recover the batch
    geometry; compute stays 2-D.
    """

    def __init__(self, channel: FrameChannel, session: Session):
        self.channel = channel
        self.session = session
        self.shape3d: tuple[int, int] | None = None

    def _to_wire(self, t: np.ndarray) -> np.ndarray:
        if self.shape3d is not None:
            return t.reshape(*self.shape3d, t.shape[-1])
        return t

    def _from_wire(self, t: np.ndarray) -> np.ndarray:
        if self.shape3d is not None:
            return np.ascontiguousarray(t.reshape(-1, t.shape[-1]))
        return np.ascontiguousarray(t)

    def project(self, layer: int, z: np.ndarray):
        blob, bits, ovf = encode_tensor(self._to_wire(z), self.session.wire_bits)
        self.channel.send(
            Frame(msg_type=MessageType.DownAct, session_id=self.session.session_id,
                  layer=layer, module_tag=MOD_NONE, payload=blob),
            raw_bits=bits, n_tensors=1, layer_for_ledger=layer, overflow=ovf)
        frame, tensors, _ = self.channel.recv()
        if frame.msg_type != MessageType.UpActs or frame.layer != layer:
            raise ProtocolError(f"expected UpActs for layer {layer}")
        if len(tensors) != 3:
            raise ProtocolError("UpActs must bundle exactly three tensors")
        return tuple(self._from_wire(t) for t in tensors)

    def backward(self, layer: int, dpq: np.ndarray, dpk: np.ndarray, dpv: np.ndarray):
        payload = b""
        bits = 0
        ovf = 0
        for t in (dpq, dpk, dpv):
            blob, b, o = encode_tensor(self._to_wire(t), self.session.wire_bits)
            payload += blob
            bits += b
            ovf += o
        self.channel.send(
            Frame(msg_type=MessageType.GradDown, session_id=self.session.session_id,
                  layer=layer, module_tag=MOD_QKV, payload=payload),
            raw_bits=bits, n_tensors=3, layer_for_ledger=layer, overflow=ovf)
        frame, tensors, _ = self.channel.recv()
        if frame.msg_type != MessageType.GradUp or frame.layer != layer:
            raise ProtocolError(f"expected GradUp for layer {layer}")
        return self._from_wire(tensors[0])


class CloudNode:
    def __init__(self, state: CloudState, digest: str, wire_bits: int, tap=None):
        self.state = state
        self.digest = digest
        self.wire_bits = wire_bits
        self.tap = tap
        self._lock = threading.Lock()
        self._opt_lock = threading.Lock()
        self._seen_nonces: set[str] = set()
        self._next_sid = 1
        self.sessions_served = 0

    # -- session establishment -------------------------------------------------

    def _handshake(self, channel: FrameChannel) -> Session | None:
        frame, _, _ = channel.recv()
        if frame.msg_type != MessageType.Hello:
            raise ProtocolError("first frame must be Hello")
        info = parse_control(frame.payload)
        nonce = info.get("nonce", "")
        with self._lock:
            if nonce in self._seen_nonces:
                self._refuse(channel, "replayed hello nonce")
                return None
            self._seen_nonces.add(nonce)
            sid = self._next_sid
            self._next_sid += 1
        if info.get("digest") != self.digest:
            self._refuse(channel, "handshake digest mismatch")
            return None
        if info.get("wire_bits") != self.wire_bits:
            self._refuse(channel, "wire precision mismatch")
            return None
        session = Session(session_id=sid, digest=self.digest, wire_bits=self.wire_bits,
                          phase=info.get("phase", "prefill"),
                          train_params=info.get("train", {}))
        session.ledger = channel.ledger
        channel.send(Frame(msg_type=MessageType.HelloAck, session_id=sid,
                           payload=control_payload(session_id=sid, digest=self.digest)))
        return session

    def _refuse(self, channel: FrameChannel, reason: str):
        try:
            channel.send(Frame(msg_type=MessageType.ErrorMsg,
                               payload=reason.encode("utf-8")))
        except PlrrError:
            pass

    # -- serving ----------------------------------------------------------------

    def serve_channel(self, channel: FrameChannel):
        """Run one session to completion over an established channel."""
        try:
            session = self._handshake(channel)
            if session is None:
                return
            log.info("session %d open (phase=%s)", session.session_id, session.phase)
            hook = CloudHook(self.state.adapters, RemoteDevicePort(channel, session))
            cache = KVCache(self.state.weights.cfg)
            while True:
                frame, tensors, _ = channel.recv()
                if frame.msg_type == MessageType.Close:
                    break
                if frame.msg_type != MessageType.TokenEmbeds:
                    raise ProtocolError(f"unexpected {MessageType(frame.msg_type).name}")
                if session.phase == "train":
                    self._train_cycle(channel, session, hook, tensors[0])
                else:
                    self._inference_cycle(channel, session, hook, cache, tensors[0])
            self.sessions_served += 1
            log.info("session %d closed", session.session_id)
        except (PlrrError, OSError) as e:
            log.info("session aborted: %s", e)
            try:
                channel.send(Frame(msg_type=MessageType.ErrorMsg,
                                   payload=str(e).encode("utf-8")))
            except (PlrrError, OSError):
                pass
        finally:
            channel.close()

    def _inference_cycle(self, channel, session, hook, cache, embeds):
        if embeds.ndim != 2:
            raise ProtocolError("inference embeddings must be 2-D")
        hook.port.shape3d = None
        h = decoder_forward(embeds, self.state.weights, cache=cache, hook=hook)
        session.ledger.tokens_processed += embeds.shape[0]
        blob, bits, ovf = encode_tensor(h[-1:], session.wire_bits)
        channel.send(Frame(msg_type=MessageType.FinalHiddenPos,
                           session_id=session.session_id, payload=blob),
                     raw_bits=bits, n_tensors=1, overflow=ovf)

    def _train_cycle(self, channel, session, hook, embeds):
        if embeds.ndim != 3:
            raise ProtocolError("train embeddings must be (bs, l, d)")
        bs, l, d = embeds.shape
        hook.port.shape3d = (bs, l)
        flat = np.ascontiguousarray(embeds.reshape(bs * l, d))
        stash = ForwardStash()
        h = decoder_forward(flat, self.state.weights, cache=None, hook=hook,
                            segments=[l] * bs, stash=stash)
        session.ledger.tokens_processed += bs * l
        blob, bits, ovf = encode_tensor(h.reshape(bs, l, d), session.wire_bits)
        channel.send(Frame(msg_type=MessageType.LastHidden,
                           session_id=session.session_id, payload=blob),
                     raw_bits=bits, n_tensors=1, overflow=ovf)

        frame, tensors, _ = channel.recv()
        if frame.msg_type != MessageType.GradLastHidden:
            raise ProtocolError("expected GradLastHidden after LastHidden")
        d_final = np.ascontiguousarray(tensors[0].reshape(bs * l, d))
        dx0, da_map, db_map = stack_backward(stash, self.state.weights, hook, d_final)
        stash.clear()

        if session.train_params.get("train_embedding"):
            blob, bits, ovf = encode_tensor(dx0.reshape(bs, l, d), session.wire_bits)
            channel.send(Frame(msg_type=MessageType.GradEmbeds,
                               session_id=session.session_id, payload=blob),
                         raw_bits=bits, n_tensors=1, overflow=ovf)

        if da_map or db_map:
            self._apply_public_grads(session, da_map, db_map)

    def _apply_public_grads(self, session, da_map, db_map):
        tp = session.train_params
        params: dict[str, np.ndarray] = {}
        grads: dict[str, np.ndarray] = {}
        ad = self.state.adapters
        for li, g in da_map.items():
            params[f"a{li}"] = ad.a[li]
            grads[f"a{li}"] = g
        for li, gs in db_map.items():
            for mi, mod in enumerate(("q", "k", "v")):
                params[f"b{li}.{mod}"] = ad.b[li][mi]
                grads[f"b{li}.{mod}"] = gs[mi]
        with self._opt_lock:  # A/B are shared across sessions
            lr = linear_warmup_schedule(self.state.opt_state.step + 1,
                                        tp.get("steps", 1), tp.get("lr", 0.0),
                                        tp.get("warmup_ratio", 0.1))
            adamw_step(params, grads, self.state.opt_state, lr)

    # -- transports --------------------------------------------------------------

    def serve_loopback(self, conn) -> threading.Thread:
        """Serve one loopback connection on a daemon thread."""
        channel = FrameChannel(conn, "cloud", tap=self.tap)
        t = threading.Thread(target=self.serve_channel, args=(channel,), daemon=True)
        t.start()
        return t

    def serve_tcp(self, host: str, port: int, ready: threading.Event | None = None,
                  stop: threading.Event | None = None) -> int:
        """Accept TCP sessions until `stop` is set. Returns the bound port."""
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen()
        srv.settimeout(0.2)
        bound = srv.getsockname()[1]
        log.info("cloud listening on %s:%d", host, bound)
        if ready is not None:
            ready.set()
        try:
            while stop is None or not stop.is_set():
                try:
                    sock, addr = srv.accept()
                except socket.timeout:
                    continue
                log.info("connection from %s", addr)
                channel = FrameChannel(SocketConn(sock), "cloud", tap=self.tap)
                threading.Thread(target=self.serve_channel, args=(channel,),
                                 daemon=True).start()
        finally:
            srv.close()
        return bound
