"""Decoder-only transformer forward pass.

Pre-norm blocks: RMS norm, causal self-attention with rotary position
encoding on q/k, SiLU two-matrix MLP. The same stack serves three callers:
the monolithic reference oracle, the cloud node of the split runtime, and
the training forward (which records an activation stash for the manual
backward pass).

Adapted layers route through an adapter hook: the stack computes the
shared down-projection z = u @ A once per layer, asks the hook's port for
the three M-transformed tensors, and adds scale * (p_m @ B_m) to each of
the q/k/v projections. A null hook (None) skips the residual path
entirely.
"""

import numpy as np

from ..errors import CapacityError, InputError, InternalError
from .config import ModelConfig
from .kernels import causal_softmax, rmsnorm_fwd, rope_apply, silu_fwd
from .weights import BaseWeights


class KVCache:
    """Per-layer key/value rows for incremental decoding.

    Buffers are preallocated at max_seq; new rows are written in place and
    committed only after every layer of a forward pass succeeds, so a
    failed pass leaves the cache untouched.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.length = 0
        self.k = [np.zeros((cfg.max_seq, cfg.d), dtype=np.float32) for _ in range(cfg.n_layers)]
        self.v = [np.zeros((cfg.max_seq, cfg.d), dtype=np.float32) for _ in range(cfg.n_layers)]


class ForwardStash:
    """Activations recorded during a training forward, consumed by backward."""

    def __init__(self):
        self.layers: list[dict] = []
        self.segments: list[int] | None = None
        self.positions: np.ndarray | None = None
        self.tokens: np.ndarray | None = None
        self.x0: np.ndarray | None = None
        self.final_x: np.ndarray | None = None

    def clear(self):
        self.__init__()


def embed(tokens, w: BaseWeights) -> np.ndarray:
    """Token-id lookup into the tied embedding table. Returns len x d."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1:
        raise InputError("token sequence must be one-dimensional")
    if ids.size == 0:
        return np.zeros((0, w.cfg.d), dtype=np.float32)
    if ids.min() < 0 or ids.max() >= w.cfg.vocab:
        raise InputError(f"token id out of range [0, {w.cfg.vocab})")
    return w.embedding[ids].copy()


def _segment_bounds(segments: list[int], total: int):
    if sum(segments) != total:
        raise InputError("segment lengths must sum to the activation row count")
    bounds = []
    start = 0
    for n in segments:
        bounds.append((start, start + n))
        start += n
    return bounds


def decoder_forward(acts: np.ndarray, w: BaseWeights, cache: KVCache | None = None,
                    hook=None, segments: list[int] | None = None,
                    stash: ForwardStash | None = None) -> np.ndarray:
    """Run the full decoder stack over activations (rows x d).

    With a cache, rows extend one in-flight sequence and attention covers
    the cached prefix; without one, each segment is an independent
    sequence starting at position 0. Output is the last layer's hidden
    state, before the final norm.
    """
    cfg = w.cfg
    x = np.ascontiguousarray(acts, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise InputError(f"activations must be (rows, {cfg.d})")
    t = x.shape[0]
    if segments is None:
        segments = [t]
    bounds = _segment_bounds(segments, t)

    if cache is not None:
        if len(segments) != 1:
            raise InputError("a KV cache carries exactly one sequence")
        if cache.length + t > cfg.max_seq:
            raise CapacityError(f"sequence would exceed max_seq={cfg.max_seq}")
        offset = cache.length
        positions = np.arange(offset, offset + t, dtype=np.int64)
    else:
        offset = 0
        positions = np.concatenate(
            [np.arange(n, dtype=np.int64) for n in segments]
        ) if t else np.zeros(0, dtype=np.int64)

    adapted = hook.adapted_layers if hook is not None else frozenset()
    hd = cfg.head_dim
    inv_sqrt_hd = np.float32(1.0 / np.sqrt(hd))

    if stash is not None:
        stash.clear()
        stash.segments = list(segments)
        stash.positions = positions
        stash.x0 = x

    for li, lw in enumerate(w.layers):
        rec = {} if stash is not None else None
        u, inv1 = rmsnorm_fwd(x, lw.norm1, cfg.rms_eps)
        q = u @ lw.wq
        k = u @ lw.wk
        v = u @ lw.wv
        if li in adapted:
            z = np.ascontiguousarray(u @ hook.a(li))
            pq, pk, pv = hook.port.project(li, z)
            scale = np.float32(hook.scale)
            bq, bk, bv = hook.b(li)
            q = q + scale * (pq @ bq)
            k = k + scale * (pk @ bk)
            v = v + scale * (pv @ bv)
            if rec is not None:
                rec.update(z=z, pq=pq, pk=pk, pv=pv)
        q = rope_apply(np.ascontiguousarray(q), positions, cfg.n_heads, cfg.rope_base, 1.0)
        k = rope_apply(np.ascontiguousarray(k), positions, cfg.n_heads, cfg.rope_base, 1.0)
        v = np.ascontiguousarray(v)

        if cache is not None:
            cache.k[li][offset:offset + t] = k
            cache.v[li][offset:offset + t] = v
            k_all = cache.k[li][: offset + t]
            v_all = cache.v[li][: offset + t]
        else:
            k_all, v_all = k, v

        attn = np.empty_like(x)
        probs = [] if rec is not None else None
        for s0, s1 in bounds:
            seg_probs = []
            n = s1 - s0
            if cache is not None:
                ks, vs = k_all, v_all
            else:
                ks, vs = k_all[s0:s1], v_all[s0:s1]
            for h in range(cfg.n_heads):
                c0, c1 = h * hd, (h + 1) * hd
                scores = np.ascontiguousarray((q[s0:s1, c0:c1] @ ks[:, c0:c1].T) * inv_sqrt_hd)
                p = causal_softmax(scores, offset)
                attn[s0:s1, c0:c1] = p @ vs[:, c0:c1]
                seg_probs.append(p)
            if probs is not None:
                probs.append(seg_probs)
        o = attn @ lw.wo
        x2 = x + o
        m_in, inv2 = rmsnorm_fwd(x2, lw.norm2, cfg.rms_eps)
        a1 = np.ascontiguousarray(m_in @ lw.w1)
        f = silu_fwd(a1)
        x3 = x2 + f @ lw.w2

        if rec is not None:
            rec.update(x_in=x, u=u, inv1=inv1, q=q, k=k, v=v, probs=probs,
                       attn=attn, x2=x2, m_in=m_in, inv2=inv2, a1=a1, f=f)
            stash.layers.append(rec)
        x = x3

    if cache is not None:
        cache.length += t
    if stash is not None:
        stash.final_x = x
    if not np.isfinite(x).all():
        raise InternalError("non-finite activations out of decoder stack")
    return x


def lm_head(acts: np.ndarray, w: BaseWeights) -> np.ndarray:
    """Final RMS norm then projection by the tied embedding: rows x vocab."""
    x = np.ascontiguousarray(acts, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != w.cfg.d:
        raise InputError(f"activations must be (rows, {w.cfg.d})")
    y, _ = rmsnorm_fwd(x, w.final_norm, w.cfg.rms_eps)
    return y @ w.embedding.T


def forward_monolithic(tokens, w: BaseWeights, hook=None,
                       stash: ForwardStash | None = None,
                       segments: list[int] | None = None) -> np.ndarray:
    """Full in-process forward: embed -> decoder stack -> lm head."""
    x0 = embed(tokens, w)
    h = decoder_forward(x0, w, cache=None, hook=hook, segments=segments, stash=stash)
    if stash is not None:
        stash.tokens = np.asarray(tokens, dtype=np.int64)
    return lm_head(h, w)


def generate_monolithic(tokens, w: BaseWeights, hook=None, n_steps: int = 16,
                        temperature: float = 0.0, rng: np.random.Generator | None = None):
    """Greedy (or temperature-sampled) generation with a local KV cache.

    Returns (generated ids, per-step logits rows) so oracle tests can
    compare position-wise logits, not just token ids.
    """
    cache = KVCache(w.cfg)
    x = embed(tokens, w)
    h = decoder_forward(x, w, cache=cache, hook=hook)
    logits = lm_head(h[-1:], w)
    out, step_logits = [], []
    for _ in range(n_steps):
        tok = _pick(logits[0], temperature, rng)
        out.append(tok)
        step_logits.append(logits[0].copy())
        x = embed([tok], w)
        h = decoder_forward(x, w, cache=cache, hook=hook)
        logits = lm_head(h, w)
    return out, step_logits


def _pick(logits_row: np.ndarray, temperature: float, rng) -> int:
    if temperature <= 0.0:
        return int(np.argmax(logits_row))
    z = logits_row.astype(np.float64) / temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int((rng or np.random.default_rng()).choice(len(p), p=p))
