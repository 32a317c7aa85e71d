import numpy as np
import pytest

from plrr.adapters import AdapterConfig, init_adapters
from plrr.nncore.config import ModelConfig
from plrr.nncore.weights import init_base_weights


def toy_model(d=16, n_layers=2, n_heads=2, vocab=32, max_seq=64, seed=7, mlp_hidden=0):
    cfg = ModelConfig(d=d, n_layers=n_layers, n_heads=n_heads, vocab=vocab,
                      max_seq=max_seq, mlp_hidden=mlp_hidden)
    return cfg, init_base_weights(cfg, seed)


def toy_adapters(cfg, r_c2d=4, r_d2c=4, layers=None, seed=11, **kw):
    acfg = AdapterConfig(r_c2d=r_c2d, r_d2c=r_d2c,
                         adapted_layers=tuple(layers if layers is not None else range(cfg.n_layers)),
                         init_seed=seed, **kw)
    return acfg, *init_adapters(acfg, cfg.d)


def randomize_m(device, rng, std=0.3):
    for mods in device.m.values():
        for mod in mods:
            mods[mod] = (rng.standard_normal(mods[mod].shape) * std).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    reports = []
    for key in ("passed", "failed"):
        reports += [r for r in terminalreporter.stats.get(key, [])
                    if "test_acceptance" in r.nodeid and r.when == "call"]
    if not reports:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for r in sorted(reports, key=lambda r: r.nodeid):
        mark = "PASS" if r.passed else "FAIL"
        terminalreporter.write_line(f"[{mark}] {r.nodeid.split('::')[-1]}")
