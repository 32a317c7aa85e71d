"""Device node: embedding, LM head, private M, and the training driver.

The device initiates every phase. It ships token embeddings up, answers
per-layer DownAct frames with the three M-transformed tensors, decodes
hidden states through its tied LM head, and during training computes the
loss, returns the hidden-state gradient, accumulates grad(M) from the
mirrored exchange and applies its optimizer. A failed step changes
nothing: gradients are discarded and the optimizer is never invoked.
"""

import logging
import os
from dataclasses import dataclass

import numpy as np

from ..errors import HandshakeError, InputError, PlrrError, ProtocolError
from ..nncore.backward import head_backward
from ..nncore.loss import masked_cross_entropy
from ..nncore.model import embed, lm_head, _pick
from ..wire.frames import (MOD_QKV, Frame, MessageType, control_payload,
                           encode_tensor, parse_control)
from ..wire.transport import FrameChannel
from .optim import adamw_step, linear_warmup_schedule
from .partition import DeviceState
from .session import Session

log = logging.getLogger("plrr.device")


@dataclass
class TrainingBatch:
    """Padded (input, label, mask) matrices for one step.

    Built from (prompt, target) pairs: position t predicts token t+1, and
    only positions whose label falls inside the target span carry loss.
    Padding positions are masked out. Never leaves the device.
    """

    inputs: np.ndarray   # (bs, l) int64
    labels: np.ndarray   # (bs, l) int64
    mask: np.ndarray     # (bs, l) bool

    @property
    def bs(self) -> int:
        return self.inputs.shape[0]

    @property
    def l(self) -> int:
        return self.inputs.shape[1]

    @classmethod
    def from_pairs(cls, pairs, pad_id: int = 0, l: int | None = None):
        rows = []
        for prompt, target in pairs:
            seq = list(prompt) + list(target)
            if len(seq) < 2:
                raise InputError("example needs at least two tokens")
            rows.append((seq[:-1], seq[1:], len(prompt)))
        width = l if l is not None else max(len(r[0]) for r in rows)
        bs = len(rows)
        inputs = np.full((bs, width), pad_id, dtype=np.int64)
        labels = np.full((bs, width), pad_id, dtype=np.int64)
        mask = np.zeros((bs, width), dtype=bool)
        for i, (inp, lab, plen) in enumerate(rows):
            n = min(len(inp), width)
            inputs[i, :n] = inp[:n]
            labels[i, :n] = lab[:n]
            # labels at positions >= plen-1 are target tokens
            mask[i, max(plen - 1, 0):n] = True
        return cls(inputs=inputs, labels=labels, mask=mask)


class DeviceNode:
    def __init__(self, state: DeviceState, digest: str, wire_bits: int = 32,
                 train_params: dict | None = None):
        self.state = state
        self.digest = digest
        self.wire_bits = wire_bits
        self.train_params = dict(train_params or {})
        self.channel: FrameChannel | None = None
        self.session: Session | None = None
        self._last_hidden: np.ndarray | None = None
        self._step = 0
        self.last_m_grads: dict[int, dict[str, np.ndarray]] = {}

    # -- session -----------------------------------------------------------------

    def connect(self, conn, phase: str = "prefill", nonce: str | None = None,
                tap=None) -> Session:
        self.channel = FrameChannel(conn, "device", tap=tap)
        if nonce is None:
            nonce = os.urandom(8).hex()
        hello = control_payload(digest=self.digest, nonce=nonce,
                                wire_bits=self.wire_bits, phase=phase,
                                train=self.train_params)
        self.channel.send(Frame(msg_type=MessageType.Hello, payload=hello))
        try:
            frame, _, _ = self.channel.recv()
        except ProtocolError as e:
            raise HandshakeError(str(e)) from None
        if frame.msg_type != MessageType.HelloAck:
            raise HandshakeError("expected HelloAck")
        ack = parse_control(frame.payload)
        self.session = Session(session_id=ack["session_id"], digest=self.digest,
                               wire_bits=self.wire_bits, phase=phase,
                               train_params=self.train_params)
        self.session.ledger = self.channel.ledger
        log.info("session %d established", self.session.session_id)
        return self.session

    def close(self):
        if self.channel is not None:
            try:
                self.channel.send(Frame(msg_type=MessageType.Close,
                                        session_id=self.session.session_id if self.session else 0))
            except PlrrError:
                pass
            self.channel.close()
            self.channel = None

    def _require_session(self):
        if self.channel is None or self.session is None:
            raise ProtocolError("no established session")

    # -- adapter exchange ---------------------------------------------------------

    def _answer_down_act(self, frame, tensors, z_stash=None):
        z3 = tensors[0]
        z = np.ascontiguousarray(z3.reshape(-1, z3.shape[-1]))
        li = frame.layer
        mods = self.state.adapters.m.get(li)
        if mods is None:
            raise ProtocolError(f"cloud asked for unadapted layer {li}")
        if z_stash is not None:
            z_stash[li] = z
        payload = b""
        bits = 0
        for mod in ("q", "k", "v"):
            p = z @ mods[mod]
            blob, b, _ = encode_tensor(p.reshape(*z3.shape[:-1], p.shape[-1]),
                                       self.wire_bits)
            payload += blob
            bits += b
        self.channel.send(
            Frame(msg_type=MessageType.UpActs, session_id=self.session.session_id,
                  layer=li, module_tag=MOD_QKV, payload=payload),
            raw_bits=bits, n_tensors=3, layer_for_ledger=li)

    def _run_forward(self, x_wire: np.ndarray, z_stash=None,
                     want=MessageType.FinalHiddenPos) -> np.ndarray:
        """Ship embeddings, answer per-layer exchanges, return the hidden."""
        blob, bits, ovf = encode_tensor(x_wire, self.wire_bits)
        self.channel.send(Frame(msg_type=MessageType.TokenEmbeds,
                                session_id=self.session.session_id, payload=blob),
                          raw_bits=bits, n_tensors=1, overflow=ovf)
        while True:
            frame, tensors, _ = self.channel.recv()
            if frame.msg_type == MessageType.DownAct:
                self._answer_down_act(frame, tensors, z_stash)
            elif frame.msg_type == want:
                return tensors[0]
            else:
                raise ProtocolError(
                    f"unexpected {MessageType(frame.msg_type).name} during forward")

    # -- inference ------------------------------------------------------------------

    def prefill(self, tokens) -> np.ndarray:
        """Feed the prompt; returns the last position's hidden state (1 x d)."""
        self._require_session()
        x = embed(tokens, self.state)
        hidden = self._run_forward(x)
        self.session.ledger.tokens_processed += len(tokens)
        self.session.phase = "decode"
        self._last_hidden = hidden
        return hidden

    def decode_step(self, temperature: float = 0.0, rng=None) -> int:
        """Decode one token from the current hidden state and advance."""
        self._require_session()
        if self._last_hidden is None:
            raise ProtocolError("decode_step before prefill")
        tok = _pick(self.logits()[0], temperature, rng)
        x = embed([tok], self.state)
        self._last_hidden = self._run_forward(x)
        self.session.ledger.tokens_processed += 1
        return tok

    def logits(self) -> np.ndarray:
        return lm_head(self._last_hidden, self.state)

    def generate(self, prompt, n_steps: int, temperature: float = 0.0, rng=None):
        """Prefill plus n_steps decodes. Returns (ids, per-step logits)."""
        self.prefill(prompt)
        out, step_logits = [], []
        for _ in range(n_steps):
            step_logits.append(self.logits()[0].copy())
            out.append(self.decode_step(temperature, rng))
        return out, step_logits

    # -- training ---------------------------------------------------------------------

    def train_step(self, batch: TrainingBatch) -> float:
        """One forward/backward/update cycle. Atomic: a transport or
        protocol failure leaves M, embedding and optimizer state untouched."""
        self._require_session()
        if self.session.phase != "train":
            raise ProtocolError("session was not opened in the train phase")
        bs, l = batch.bs, batch.l
        flat_inputs = batch.inputs.reshape(-1)
        x = embed(flat_inputs, self.state)

        z_stash: dict[int, np.ndarray] = {}
        hidden3 = self._run_forward(x.reshape(bs, l, -1), z_stash=z_stash,
                                    want=MessageType.LastHidden)
        hidden = np.ascontiguousarray(hidden3.reshape(bs * l, -1))
        self.session.ledger.tokens_processed += bs * l

        logits = lm_head(hidden, self.state)
        loss, grad_logits = masked_cross_entropy(
            logits, batch.labels.reshape(-1), batch.mask.reshape(-1))
        d_hidden, d_emb_head = head_backward(hidden, self.state, grad_logits)

        blob, bits, ovf = encode_tensor(d_hidden.reshape(bs, l, -1), self.wire_bits)
        self.channel.send(Frame(msg_type=MessageType.GradLastHidden,
                                session_id=self.session.session_id, payload=blob),
                          raw_bits=bits, n_tensors=1, overflow=ovf)

        m_grads: dict[int, dict[str, np.ndarray]] = {}
        pending = sorted(self.state.adapters.m, reverse=True)
        train_embedding = bool(self.train_params.get("train_embedding"))
        d_emb = None
        for li in pending:
            frame, tensors, _ = self.channel.recv()
            if frame.msg_type != MessageType.GradDown or frame.layer != li:
                raise ProtocolError(f"expected GradDown for layer {li}")
            z = z_stash[li]
            mods = self.state.adapters.m[li]
            dps = [np.ascontiguousarray(t.reshape(-1, t.shape[-1])) for t in tensors]
            m_grads[li] = {mod: z.T @ dp for mod, dp in zip(("q", "k", "v"), dps)}
            dz = sum(dp @ mods[mod].T for mod, dp in zip(("q", "k", "v"), dps))
            blob, bits, _ = encode_tensor(dz.reshape(bs, l, -1), self.wire_bits)
            self.channel.send(
                Frame(msg_type=MessageType.GradUp, session_id=self.session.session_id,
                      layer=li, module_tag=MOD_QKV, payload=blob),
                raw_bits=bits, n_tensors=1, layer_for_ledger=li)
        if train_embedding:
            frame, tensors, _ = self.channel.recv()
            if frame.msg_type != MessageType.GradEmbeds:
                raise ProtocolError("expected GradEmbeds")
            dx0 = tensors[0].reshape(bs * l, -1)
            d_emb = d_emb_head.astype(np.float64)
            np.add.at(d_emb, flat_inputs, dx0.astype(np.float64))
            d_emb = d_emb.astype(np.float32)

        self.last_m_grads = m_grads
        self._apply_update(m_grads, d_emb)
        return loss

    def _apply_update(self, m_grads, d_emb):
        self._step += 1
        tp = self.train_params
        lr = linear_warmup_schedule(self._step, tp.get("steps", 1),
                                    tp.get("lr", 0.0), tp.get("warmup_ratio", 0.1))
        params: dict[str, np.ndarray] = {}
        grads: dict[str, np.ndarray] = {}
        if self.state.adapters.cfg.trainable_m:
            for li, mods in m_grads.items():
                for mod, g in mods.items():
                    params[f"m{li}.{mod}"] = self.state.adapters.m[li][mod]
                    grads[f"m{li}.{mod}"] = g
        if d_emb is not None:
            params["embedding"] = self.state.embedding
            grads["embedding"] = d_emb
        if grads:
            adamw_step(params, grads, self.state.opt_state, lr)
