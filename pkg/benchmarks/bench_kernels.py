"""Compare the compiled kernel core against the pure numpy fallback.

Micro-benchmarks time both implementations in one process; the end-to-end
decode benchmark re-launches the interpreter with PLRR_FORCE_PURE=1 so the
whole stack runs on the fallback. Run as:

    python benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

import numpy as np

from plrr.nncore import _kernels_py as pyk

try:
    from plrr.nncore import _kernels_cy as cyk
except ImportError:
    cyk = None


def timeit(fn, *args, repeats=2000):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def micro():
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'shape':<14}{'pure us':>10}{'compiled us':>13}{'speedup':>9}")
    for rows, cols in [(1, 64), (16, 64), (128, 256), (512, 1024)]:
        x = rng.standard_normal((rows, cols)).astype(np.float32)
        g = rng.standard_normal(cols).astype(np.float32)
        dy = rng.standard_normal((rows, cols)).astype(np.float32)
        pos = np.arange(rows, dtype=np.int64)
        scores = rng.standard_normal((rows, rows + 8)).astype(np.float32)
        _, inv = pyk.rmsnorm_fwd(x, g, 1e-5)
        cases = [
            ("rmsnorm_fwd", lambda k: k.rmsnorm_fwd(x, g, 1e-5)),
            ("rmsnorm_bwd", lambda k: k.rmsnorm_bwd(x, g, inv, dy)),
            ("rope_apply", lambda k: k.rope_apply(x, pos, 4, 10000.0, 1.0)),
            ("causal_softmax", lambda k: k.causal_softmax(scores, 8)),
            ("silu_fwd", lambda k: k.silu_fwd(x)),
        ]
        repeats = max(200, 20000 // max(rows, 1))
        for name, call in cases:
            t_py = timeit(lambda: call(pyk), repeats=repeats)
            if cyk is None:
                print(f"{name:<28}{f'{rows}x{cols}':<14}{t_py*1e6:>10.1f}{'n/a':>13}{'':>9}")
                continue
            t_cy = timeit(lambda: call(cyk), repeats=repeats)
            print(f"{name:<28}{f'{rows}x{cols}':<14}{t_py*1e6:>10.1f}"
                  f"{t_cy*1e6:>13.1f}{t_py/t_cy:>8.1f}x")


END_TO_END = r"""
import time
import numpy as np
from plrr.nncore import BACKEND
from plrr.nncore.config import ModelConfig
from plrr.nncore.model import generate_monolithic
from plrr.nncore.weights import init_base_weights
from plrr.adapters import AdapterConfig, init_adapters, local_hook

mcfg = ModelConfig(d=48, n_layers=2, n_heads=4, vocab=256, max_seq=96)
w = init_base_weights(mcfg, 0)
acfg = AdapterConfig(r_c2d=24, r_d2c=24, adapted_layers=(0, 1), init_seed=1)
cloud, device = init_adapters(acfg, mcfg.d)
hook = local_hook(cloud, device)
generate_monolithic([1, 2, 3], w, hook=hook, n_steps=16)  # warm up
t0 = time.perf_counter()
steps = 0
for _ in range(8):
    generate_monolithic([1, 2, 3], w, hook=hook, n_steps=64)
    steps += 64
dt = time.perf_counter() - t0
print(f"{BACKEND}: {steps / dt:.0f} tokens/s (toy decode, d=48 N=2)")
"""


def end_to_end():
    sys.stdout.flush()
    for force_pure in ("0", "1"):
        env = dict(os.environ, PLRR_FORCE_PURE=force_pure)
        subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True)


if __name__ == "__main__":
    print("== kernel micro-benchmarks ==")
    micro()
    print("\n== end-to-end toy decode ==")
    end_to_end()
