"""Straight-line reference transformer used only as a test oracle.

Independent second implementation of the same equations: per-position and
per-head python loops, no KV cache, no segment batching, no shared kernel
code. With dtype=float32 the storage discipline matches the production
path (agreement to float32 rounding); with dtype=float64 it serves as the
high-precision target for finite-difference gradient checks.
"""

import numpy as np


def ref_rmsnorm(x, g, eps, dtype):
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        row = x[i].astype(np.float64)
        r = np.sqrt((row * row).mean() + eps)
        out[i] = ((row / r) * g.astype(np.float64)).astype(dtype)
    return out


def ref_rope_row(row, pos, n_heads, base, dtype):
    d = row.shape[0]
    hd = d // n_heads
    half = hd // 2
    out = row.astype(np.float64).copy()
    for h in range(n_heads):
        for i in range(half):
            theta = float(pos) * base ** (-2.0 * i / hd)
            c, s = np.cos(theta), np.sin(theta)
            a = out[h * hd + 2 * i]
            b = out[h * hd + 2 * i + 1]
            out[h * hd + 2 * i] = a * c - b * s
            out[h * hd + 2 * i + 1] = a * s + b * c
    return out.astype(dtype)


def ref_forward(tokens, w, cloud=None, device=None, dtype=np.float32):
    """Embed + full decoder stack + lm head, one position at a time."""
    cfg = w.cfg
    n = len(tokens)
    x = (np.stack([w.embedding[t] for t in tokens]) if n
         else np.zeros((0, cfg.d), np.float32)).astype(dtype)
    hd = cfg.head_dim
    adapted = set(cloud.cfg.adapted_layers) if cloud is not None else set()

    for li, lw in enumerate(w.layers):
        u = ref_rmsnorm(x, lw.norm1, cfg.rms_eps, dtype)
        q = (u @ lw.wq.astype(dtype)).astype(dtype)
        k = (u @ lw.wk.astype(dtype)).astype(dtype)
        v = (u @ lw.wv.astype(dtype)).astype(dtype)
        if li in adapted:
            z = (u @ cloud.a[li].astype(dtype)).astype(dtype)
            scale = dtype(cloud.cfg.scale)
            for mi, mod in enumerate(("q", "k", "v")):
                p = (z @ device.m[li][mod].astype(dtype)).astype(dtype)
                res = scale * (p @ cloud.b[li][mi].astype(dtype)).astype(dtype)
                if mod == "q":
                    q = q + res
                elif mod == "k":
                    k = k + res
                else:
                    v = v + res
        qr = np.stack([ref_rope_row(q[t], t, cfg.n_heads, cfg.rope_base, dtype) for t in range(n)])
        kr = np.stack([ref_rope_row(k[t], t, cfg.n_heads, cfg.rope_base, dtype) for t in range(n)])

        attn = np.zeros_like(x)
        for t in range(n):
            for h in range(cfg.n_heads):
                c0, c1 = h * hd, (h + 1) * hd
                scores = np.array(
                    [dtype(qr[t, c0:c1] @ kr[s, c0:c1]) / np.sqrt(hd) for s in range(t + 1)],
                    dtype=np.float64,
                )
                scores = scores.astype(dtype).astype(np.float64)
                e = np.exp(scores - scores.max())
                p = e / e.sum()
                acc = np.zeros(hd, dtype=np.float64)
                for s in range(t + 1):
                    acc += dtype(p[s]) * v[s, c0:c1].astype(np.float64)
                attn[t, c0:c1] = acc.astype(dtype)
        o = (attn @ lw.wo.astype(dtype)).astype(dtype)
        x2 = (x + o).astype(dtype)
        m_in = ref_rmsnorm(x2, lw.norm2, cfg.rms_eps, dtype)
        a1 = (m_in @ lw.w1.astype(dtype)).astype(dtype)
        sig = 1.0 / (1.0 + np.exp(-a1.astype(np.float64)))
        f = (a1.astype(np.float64) * sig).astype(dtype)
        x = (x2 + (f @ lw.w2.astype(dtype)).astype(dtype)).astype(dtype)

    fn = ref_rmsnorm(x, w.final_norm, cfg.rms_eps, dtype)
    return x, (fn @ w.embedding.T.astype(dtype)).astype(dtype)


def ref_masked_ce(logits, targets, mask):
    """Float64 masked cross entropy, loss only."""
    z = logits.astype(np.float64)
    total, count = 0.0, 0
    for t in range(z.shape[0]):
        if not mask[t]:
            continue
        row = z[t] - z[t].max()
        total += np.log(np.exp(row).sum()) - row[targets[t]]
        count += 1
    return total / count
