# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot per-token kernels.

Same contracts as _kernels_py; reductions accumulate in double so results
agree with the pure backend to float32 rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, exp, sin, sqrt

cnp.import_array()

BACKEND = "compiled"


def rmsnorm_fwd(cnp.float32_t[:, ::1] x, cnp.float32_t[::1] g, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double acc, r
    y_arr = np.empty((n, d), dtype=np.float32)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef cnp.float32_t[:, ::1] y = y_arr
    cdef double[::1] inv = inv_arr
    for i in range(n):
        acc = 0.0
        for j in range(d):
            acc += <double> x[i, j] * <double> x[i, j]
        r = 1.0 / sqrt(acc / d + eps)
        inv[i] = r
        for j in range(d):
            y[i, j] = <cnp.float32_t> (<double> x[i, j] * r * <double> g[j])
    return y_arr, inv_arr


def rmsnorm_bwd(cnp.float32_t[:, ::1] x, cnp.float32_t[::1] g,
                double[::1] inv, cnp.float32_t[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double dot, r, coef
    dx_arr = np.empty((n, d), dtype=np.float32)
    dg_arr = np.zeros(d, dtype=np.float64)
    cdef cnp.float32_t[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg_arr
    for i in range(n):
        r = inv[i]
        dot = 0.0
        for j in range(d):
            dot += <double> dy[i, j] * <double> g[j] * <double> x[i, j]
        coef = r * r * r * dot / d
        for j in range(d):
            dx[i, j] = <cnp.float32_t> (r * <double> dy[i, j] * <double> g[j] - coef * <double> x[i, j])
            dg[j] += <double> dy[i, j] * <double> x[i, j] * r
    return dx_arr, dg_arr.astype(np.float32)


def rope_apply(cnp.float32_t[:, ::1] x, cnp.int64_t[::1] positions,
               Py_ssize_t n_heads, double base, double sign):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, h, k
    cdef Py_ssize_t hd = d // n_heads, half = hd // 2
    cdef double ang, c, s, x0, x1, pos
    freqs_arr = base ** (-np.arange(half, dtype=np.float64) * 2.0 / hd)
    cdef double[::1] freqs = freqs_arr
    out_arr = np.empty((n, d), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    for i in range(n):
        pos = <double> positions[i]
        for h in range(n_heads):
            for k in range(half):
                ang = sign * pos * freqs[k]
                c = cos(ang)
                s = sin(ang)
                x0 = <double> x[i, h * hd + 2 * k]
                x1 = <double> x[i, h * hd + 2 * k + 1]
                out[i, h * hd + 2 * k] = <cnp.float32_t> (x0 * c - x1 * s)
                out[i, h * hd + 2 * k + 1] = <cnp.float32_t> (x0 * s + x1 * c)
    return out_arr


def causal_softmax(cnp.float32_t[:, ::1] scores, Py_ssize_t offset):
    cdef Py_ssize_t t = scores.shape[0], s = scores.shape[1], i, j, lim
    cdef double m, acc, v
    p_arr = np.zeros((t, s), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] p = p_arr
    cdef double[::1] row = np.empty(s, dtype=np.float64)
    for i in range(t):
        lim = offset + i + 1
        if lim > s:
            lim = s
        m = <double> scores[i, 0]
        for j in range(1, lim):
            v = <double> scores[i, j]
            if v > m:
                m = v
        acc = 0.0
        for j in range(lim):
            v = exp(<double> scores[i, j] - m)
            row[j] = v
            acc += v
        for j in range(lim):
            p[i, j] = <cnp.float32_t> (row[j] / acc)
    return p_arr


def softmax_bwd(cnp.float32_t[:, ::1] p, cnp.float32_t[:, ::1] dp):
    cdef Py_ssize_t n = p.shape[0], s = p.shape[1], i, j
    cdef double inner
    out_arr = np.empty((n, s), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] out = out_arr
    for i in range(n):
        inner = 0.0
        for j in range(s):
            inner += <double> dp[i, j] * <double> p[i, j]
        for j in range(s):
            out[i, j] = <cnp.float32_t> (<double> p[i, j] * (<double> dp[i, j] - inner))
    return out_arr


def silu_fwd(cnp.float32_t[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, sig
    y_arr = np.empty((n, d), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] y = y_arr
    for i in range(n):
        for j in range(d):
            v = <double> x[i, j]
            sig = 1.0 / (1.0 + exp(-v))
            y[i, j] = <cnp.float32_t> (v * sig)
    return y_arr


def silu_bwd(cnp.float32_t[:, ::1] x, cnp.float32_t[:, ::1] dy):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double v, sig
    dx_arr = np.empty((n, d), dtype=np.float32)
    cdef cnp.float32_t[:, ::1] dx = dx_arr
    for i in range(n):
        for j in range(d):
            v = <double> x[i, j]
            sig = 1.0 / (1.0 + exp(-v))
            dx[i, j] = <cnp.float32_t> (<double> dy[i, j] * (sig * (1.0 + v * (1.0 - sig))))
    return dx_arr
