"""Kernel backend selection.

Imports the compiled extension when present, otherwise the pure numpy
implementation. Set PLRR_FORCE_PURE=1 to force the fallback (used by the
benchmark and by backend-parity tests). Everything downstream imports the
kernel functions from here, so one process always runs one backend.
"""

import os

from . import _kernels_py

if os.environ.get("PLRR_FORCE_PURE") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND

rmsnorm_fwd = _impl.rmsnorm_fwd
rmsnorm_bwd = _impl.rmsnorm_bwd
rope_apply = _impl.rope_apply
causal_softmax = _impl.causal_softmax
softmax_bwd = _impl.softmax_bwd
silu_fwd = _impl.silu_fwd
silu_bwd = _impl.silu_bwd
