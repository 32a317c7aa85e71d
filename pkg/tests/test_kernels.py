"""Kernel-level oracles plus compiled/pure backend parity."""

import numpy as np
import pytest

from plrr.nncore import _kernels_py as pyk
from plrr.nncore import kernels

try:
    from plrr.nncore import _kernels_cy as cyk
    BACKENDS = [pyk, cyk]
except ImportError:
    cyk = None
    BACKENDS = [pyk]


def _rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
class TestKernelOracles:
    def test_rmsnorm_matches_definition(self, impl, rng):
        x = _rand(rng, 5, 24)
        g = _rand(rng, 24)
        y, inv = impl.rmsnorm_fwd(x, g, 1e-5)
        for i in range(5):
            r = np.sqrt(np.mean(x[i].astype(np.float64) ** 2) + 1e-5)
            np.testing.assert_allclose(y[i], x[i] / r * g, rtol=2e-6, atol=2e-6)
            assert inv[i] == pytest.approx(1.0 / r, rel=1e-12)

    def test_rmsnorm_backward_finite_differences(self, impl, rng):
        x = _rand(rng, 3, 10)
        g = _rand(rng, 10)
        dy = _rand(rng, 3, 10)
        _, inv = impl.rmsnorm_fwd(x, g, 1e-5)
        dx, dg = impl.rmsnorm_bwd(x, g, inv, dy)

        def loss(xv, gv):
            y, _ = pyk.rmsnorm_fwd(xv.astype(np.float32), gv.astype(np.float32), 1e-5)
            return float(np.sum(y.astype(np.float64) * dy))

        eps = 1e-3
        for idx in [(0, 1), (1, 5), (2, 9)]:
            xp, xm = x.copy(), x.copy()
            xp[idx] += eps
            xm[idx] -= eps
            num = (loss(xp, g) - loss(xm, g)) / (2 * eps)
            assert dx[idx] == pytest.approx(num, rel=1e-3, abs=1e-4)
        for j in [0, 7]:
            gp, gm = g.copy(), g.copy()
            gp[j] += eps
            gm[j] -= eps
            num = (loss(x, gp) - loss(x, gm)) / (2 * eps)
            assert dg[j] == pytest.approx(num, rel=1e-3, abs=1e-4)

    def test_rope_preserves_norm_and_inverts(self, impl, rng):
        x = _rand(rng, 6, 16)
        pos = np.arange(3, 9, dtype=np.int64)
        y = impl.rope_apply(x, pos, 2, 10000.0, 1.0)
        np.testing.assert_allclose(
            np.linalg.norm(y, axis=1), np.linalg.norm(x, axis=1), rtol=1e-5)
        back = impl.rope_apply(y, pos, 2, 10000.0, -1.0)
        np.testing.assert_allclose(back, x, rtol=1e-5, atol=1e-6)

    def test_rope_position_zero_is_identity(self, impl, rng):
        x = _rand(rng, 2, 8)
        y = impl.rope_apply(x, np.zeros(2, dtype=np.int64), 2, 10000.0, 1.0)
        np.testing.assert_allclose(y, x, atol=1e-7)

    def test_causal_softmax_rows(self, impl, rng):
        scores = _rand(rng, 4, 7)
        p = impl.causal_softmax(scores, 3)
        for t in range(4):
            lim = 3 + t + 1
            assert np.all(p[t, lim:] == 0.0)
            assert p[t, :lim].sum() == pytest.approx(1.0, abs=1e-6)
            ref = np.exp(scores[t, :lim] - scores[t, :lim].max())
            np.testing.assert_allclose(p[t, :lim], ref / ref.sum(), rtol=1e-5)

    def test_softmax_backward_finite_differences(self, impl, rng):
        scores = _rand(rng, 3, 5)
        dp = _rand(rng, 3, 5)
        p = impl.causal_softmax(scores, 4)  # offset high enough that no column is masked
        ds = impl.softmax_bwd(p, dp)

        eps = 1e-3
        for idx in [(0, 0), (1, 3), (2, 4)]:
            sp, sm = scores.copy(), scores.copy()
            sp[idx] += eps
            sm[idx] -= eps
            lp = float(np.sum(pyk.causal_softmax(sp, 4).astype(np.float64) * dp))
            lm = float(np.sum(pyk.causal_softmax(sm, 4).astype(np.float64) * dp))
            assert ds[idx] == pytest.approx((lp - lm) / (2 * eps), rel=2e-3, abs=1e-4)

    def test_silu_values_and_gradient(self, impl, rng):
        x = _rand(rng, 4, 6)
        y = impl.silu_fwd(x)
        sig = 1.0 / (1.0 + np.exp(-x.astype(np.float64)))
        np.testing.assert_allclose(y, x * sig, rtol=1e-5, atol=1e-6)

        dy = _rand(rng, 4, 6)
        dx = impl.silu_bwd(x, dy)
        eps = 1e-3
        for idx in [(0, 0), (3, 5)]:
            xp, xm = x.copy(), x.copy()
            xp[idx] += eps
            xm[idx] -= eps
            num = (float(np.sum(pyk.silu_fwd(xp).astype(np.float64) * dy))
                   - float(np.sum(pyk.silu_fwd(xm).astype(np.float64) * dy))) / (2 * eps)
            assert dx[idx] == pytest.approx(num, rel=1e-3, abs=1e-4)


@pytest.mark.skipif(cyk is None, reason="compiled kernels not built")
def test_backend_parity(rng):
    x = rng.standard_normal((17, 48)).astype(np.float32)
    g = rng.standard_normal(48).astype(np.float32)
    dy = rng.standard_normal((17, 48)).astype(np.float32)
    pos = np.arange(17, dtype=np.int64)

    yp, ip = pyk.rmsnorm_fwd(x, g, 1e-5)
    yc, ic = cyk.rmsnorm_fwd(x, g, 1e-5)
    np.testing.assert_allclose(yc, yp, rtol=2e-6, atol=2e-7)
    np.testing.assert_allclose(ic, ip, rtol=1e-12)
    np.testing.assert_allclose(cyk.rmsnorm_bwd(x, g, ic, dy)[0],
                               pyk.rmsnorm_bwd(x, g, ip, dy)[0], rtol=2e-5, atol=2e-6)
    np.testing.assert_allclose(cyk.rope_apply(x, pos, 4, 10000.0, 1.0),
                               pyk.rope_apply(x, pos, 4, 10000.0, 1.0), rtol=2e-6, atol=2e-7)
    sc = rng.standard_normal((9, 13)).astype(np.float32)
    np.testing.assert_allclose(cyk.causal_softmax(sc, 4), pyk.causal_softmax(sc, 4),
                               rtol=2e-6, atol=2e-7)
    np.testing.assert_allclose(cyk.silu_fwd(x), pyk.silu_fwd(x), rtol=2e-6, atol=2e-7)


def test_selected_backend_exports():
    assert kernels.BACKEND in ("pure", "compiled")
    assert callable(kernels.rmsnorm_fwd)
