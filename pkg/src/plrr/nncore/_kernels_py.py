"""Pure numpy implementations of the hot per-token kernels.

Fallback backend when the compiled extension is unavailable. Reductions
accumulate in float64 so both backends agree to float32 rounding; outputs
are float32 row-major.
"""

import numpy as np

BACKEND = "pure"


def rmsnorm_fwd(x: np.ndarray, g: np.ndarray, eps: float):
    """Row-wise RMS normalization. Returns (y, inv_rms) with inv_rms float64."""
    xs = x.astype(np.float64)
    inv = 1.0 / np.sqrt(np.mean(xs * xs, axis=1) + eps)
    y = (xs * inv[:, None] * g.astype(np.float64)).astype(np.float32)
    return y, inv


def rmsnorm_bwd(x: np.ndarray, g: np.ndarray, inv: np.ndarray, dy: np.ndarray):
    """Gradient of rmsnorm_fwd w.r.t. x and g."""
    xs = x.astype(np.float64)
    dys = dy.astype(np.float64)
    gs = g.astype(np.float64)
    d = x.shape[1]
    dot = np.sum(dys * gs * xs, axis=1)  # per-row sum(dy*g*x)
    dx = inv[:, None] * dys * gs - (inv**3 * dot / d)[:, None] * xs
    dg = np.sum(dys * xs * inv[:, None], axis=0)
    return dx.astype(np.float32), dg.astype(np.float32)


def rope_apply(x: np.ndarray, positions: np.ndarray, n_heads: int, base: float, sign: float):
    """Rotate adjacent pairs within each head by pos-dependent angles.

    sign=+1 applies the encoding, sign=-1 inverts it (used by backward,
    since the rotation is orthogonal).
    """
    n, d = x.shape
    hd = d // n_heads
    half = hd // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) * 2.0 / hd)
    ang = sign * positions.astype(np.float64)[:, None] * freqs[None, :]  # n x half
    cos = np.cos(ang)
    sin = np.sin(ang)
    xs = x.astype(np.float64).reshape(n, n_heads, half, 2)
    x0 = xs[..., 0]
    x1 = xs[..., 1]
    out = np.empty_like(xs)
    out[..., 0] = x0 * cos[:, None, :] - x1 * sin[:, None, :]
    out[..., 1] = x0 * sin[:, None, :] + x1 * cos[:, None, :]
    return out.reshape(n, d).astype(np.float32)


def causal_softmax(scores: np.ndarray, offset: int):
    """Row-wise max-subtracted softmax over the causal prefix.

    Row t may attend to columns [0, offset+t]; masked entries come back 0.
    scores is (T x S) with S >= offset + T.
    """
    t, s = scores.shape
    cols = np.arange(s)[None, :]
    valid = cols <= (offset + np.arange(t))[:, None]
    z = scores.astype(np.float64)
    z = np.where(valid, z, -np.inf)
    m = np.max(z, axis=1, keepdims=True)
    e = np.exp(z - m)
    p = e / np.sum(e, axis=1, keepdims=True)
    return p.astype(np.float32)


def softmax_bwd(p: np.ndarray, dp: np.ndarray):
    """Gradient through a row softmax; masked entries (p==0) yield 0."""
    ps = p.astype(np.float64)
    dps = dp.astype(np.float64)
    inner = np.sum(dps * ps, axis=1, keepdims=True)
    return (ps * (dps - inner)).astype(np.float32)


def silu_fwd(x: np.ndarray):
    xs = x.astype(np.float64)
    sig = 1.0 / (1.0 + np.exp(-xs))
    return (xs * sig).astype(np.float32)


def silu_bwd(x: np.ndarray, dy: np.ndarray):
    xs = x.astype(np.float64)
    sig = 1.0 / (1.0 + np.exp(-xs))
    grad = sig * (1.0 + xs * (1.0 - sig))
    return (dy.astype(np.float64) * grad).astype(np.float32)
