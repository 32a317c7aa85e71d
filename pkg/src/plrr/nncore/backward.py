"""Manual reverse-mode gradients through the decoder stack.

Two halves mirror the runtime partition: head_backward covers the device
side (final norm + tied LM head), stack_backward covers the cloud side
(every decoder layer, in reverse). The monolithic backward_full composes
them. Frozen tensors never receive gradients; the adapter hook's port is
asked to backpropagate through M, which is where grad(M) lands.
"""

import numpy as np

from ..errors import InternalError
from .kernels import rmsnorm_bwd, rmsnorm_fwd, rope_apply, silu_bwd, softmax_bwd
from .model import ForwardStash
from .weights import BaseWeights


def head_backward(final_hidden: np.ndarray, w: BaseWeights, grad_logits: np.ndarray):
    """Backward through lm_head. Returns (grad final_hidden, grad embedding-from-head)."""
    x = np.ascontiguousarray(final_hidden, dtype=np.float32)
    y, inv = rmsnorm_fwd(x, w.final_norm, w.cfg.rms_eps)
    d_emb = grad_logits.T @ y
    d_y = np.ascontiguousarray(grad_logits @ w.embedding)
    d_x, _ = rmsnorm_bwd(x, w.final_norm, inv, d_y)
    return d_x, d_emb


def stack_backward(stash: ForwardStash, w: BaseWeights, hook, d_final: np.ndarray):
    """Backward through every decoder layer using the recorded stash.

    Returns (grad of layer-0 input rows, {layer: dA}, {layer: (dBq,dBk,dBv)}).
    The A/B grad maps are empty unless the hook's trainable flags are set;
    grad(M) accumulates inside the hook's port.
    """
    cfg = w.cfg
    if stash.final_x is None or len(stash.layers) != cfg.n_layers:
        raise InternalError("stash does not cover the full stack")
    bounds = []
    start = 0
    for n in stash.segments:
        bounds.append((start, start + n))
        start += n
    hd = cfg.head_dim
    inv_sqrt_hd = np.float32(1.0 / np.sqrt(hd))
    adapted = hook.adapted_layers if hook is not None else frozenset()

    dx = np.ascontiguousarray(d_final, dtype=np.float32)
    da_map: dict[int, np.ndarray] = {}
    db_map: dict[int, tuple] = {}

    for li in range(cfg.n_layers - 1, -1, -1):
        lw = w.layers[li]
        rec = stash.layers[li]
        if rec is None:
            raise InternalError(f"missing stash for layer {li}")

        # x3 = x2 + silu(m_in @ w1) @ w2, m_in = rmsnorm(x2)
        df = dx @ lw.w2.T
        da1 = silu_bwd(rec["a1"], np.ascontiguousarray(df))
        dm_in = np.ascontiguousarray(da1 @ lw.w1.T)
        dm_x2, _ = rmsnorm_bwd(rec["x2"], lw.norm2, rec["inv2"], dm_in)
        dx2 = dx + dm_x2

        # x2 = x_in + attn @ wo
        d_attn = np.ascontiguousarray(dx2 @ lw.wo.T)
        q, k, v = rec["q"], rec["k"], rec["v"]
        dq = np.empty_like(q)
        dk = np.empty_like(k)
        dv = np.empty_like(v)
        for si, (s0, s1) in enumerate(bounds):
            for h in range(cfg.n_heads):
                c0, c1 = h * hd, (h + 1) * hd
                p = rec["probs"][si][h]
                d_attn_h = d_attn[s0:s1, c0:c1]
                dp = np.ascontiguousarray(d_attn_h @ v[s0:s1, c0:c1].T)
                dv[s0:s1, c0:c1] = p.T @ d_attn_h
                ds = softmax_bwd(p, dp)
                dq[s0:s1, c0:c1] = (ds @ k[s0:s1, c0:c1]) * inv_sqrt_hd
                dk[s0:s1, c0:c1] = (ds.T @ q[s0:s1, c0:c1]) * inv_sqrt_hd
        dq = rope_apply(dq, stash.positions, cfg.n_heads, cfg.rope_base, -1.0)
        dk = rope_apply(dk, stash.positions, cfg.n_heads, cfg.rope_base, -1.0)

        du = dq @ lw.wq.T + dk @ lw.wk.T + dv @ lw.wv.T
        if li in adapted:
            scale = np.float32(hook.scale)
            bq, bk, bv = hook.b(li)
            dpq = scale * (dq @ bq.T)
            dpk = scale * (dk @ bk.T)
            dpv = scale * (dv @ bv.T)
            if hook.trainable_b:
                db_map[li] = (scale * (rec["pq"].T @ dq),
                              scale * (rec["pk"].T @ dk),
                              scale * (rec["pv"].T @ dv))
            dz = hook.port.backward(li, dpq, dpk, dpv)
            du = du + dz @ hook.a(li).T
            if hook.trainable_a:
                da_map[li] = rec["u"].T @ dz

        dn_x, _ = rmsnorm_bwd(rec["x_in"], lw.norm1, rec["inv1"], np.ascontiguousarray(du))
        dx = dx2 + dn_x

    return dx, da_map, db_map


def backward_full(stash: ForwardStash, w: BaseWeights, hook, grad_logits: np.ndarray,
                  train_embedding: bool = False) -> dict:
    """Monolithic reverse pass from logits gradient to every trainable tensor.

    Always returns {'m': {layer: {'q','k','v'}}}; adds 'embedding' when
    flagged and 'a'/'b' when the hook's ablation flags are set.
    """
    if hook is not None and hasattr(hook.port, "reset_grads"):
        hook.port.reset_grads()
    d_final, d_emb_head = head_backward(stash.final_x, w, grad_logits)
    dx0, da_map, db_map = stack_backward(stash, w, hook, d_final)

    out: dict = {"m": hook.port.take_grads() if hook is not None else {}}
    if train_embedding:
        d_emb = d_emb_head.astype(np.float64)
        np.add.at(d_emb, stash.tokens, dx0.astype(np.float64))
        out["embedding"] = d_emb.astype(np.float32)
    if da_map:
        out["a"] = da_map
    if db_map:
        out["b"] = db_map
    return out
