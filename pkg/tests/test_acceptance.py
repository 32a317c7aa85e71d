"""Acceptance suite: every exit criterion at its stated tolerance.

One test per criterion; the terminal summary prints a pass/fail line for
each. Budgets: criterion 7 under 30 s, criterion 8 under 60 s, criterion
9 under 5 min; the whole suite runs in well under that.
"""

import time

import numpy as np
import pytest

from conftest import randomize_m
from plrr.adapters import AdapterConfig, local_hook
from plrr.nncore.backward import backward_full
from plrr.nncore.config import ModelConfig
from plrr.nncore.loss import masked_cross_entropy
from plrr.nncore.model import ForwardStash, forward_monolithic, generate_monolithic
from plrr.perf import (DEFAULT_NETWORK, ThroughputInputs, comm_bits_per_token,
                       device_flops_per_token, device_memory_bytes, infer_tps,
                       load_preset, lora_layer_budget, reduction_ratio,
                       resource_ratios, train_tps, unit_comm_time)
from plrr.runtime import build_system
from plrr.runtime.device import TrainingBatch
from plrr.runtime.integrity import run_integrity_experiment
from plrr.wire.frames import C2D_TYPES, D2C_TYPES, MessageType
from plrr.wire.transport import CaptureTap, loopback_pair
from reference_impl import ref_forward


def _split_pair(mcfg, acfg, wire_bits=32, seed=0, train_params=None, tap=None,
                phase="prefill"):
    plan, cloud, device = build_system(mcfg, acfg, wire_bits=wire_bits, seed=seed,
                                       train_params=train_params)
    dev_conn, cloud_conn = loopback_pair(timeout=60.0)
    cloud.serve_loopback(cloud_conn)
    device.connect(dev_conn, phase=phase, tap=tap)
    return plan, device


def test_criterion_01_memory_table():
    # split rows at printed precision, quantized full rows within 0.5%
    split_expect = {"llama7": 265.3, "llama13": 331.6, "llama30": 431.9}
    for name, want in split_expect.items():
        mb = device_memory_bytes(load_preset(name), "split", 128, 128) / 1e6
        assert round(mb, 1) == want, name
    assert device_memory_bytes(load_preset("llama7"), "split", 128, 128) == 265_289_728
    full_expect = {("llama7", 3): 2477.7, ("llama7", 4): 3303.5,
                   ("llama13", 3): 4819.4, ("llama30", 3): 12118.2}
    for (name, bits), want in full_expect.items():
        mb = device_memory_bytes(load_preset(name), "full_device", bits=bits) / 1e6
        assert abs(mb - want) / want <= 0.005, (name, bits)


def test_criterion_02_flops_table_and_ratios():
    split_expect = {"llama7": 0.27, "llama13": 0.33, "llama30": 0.43}
    full_expect = {"llama7": 13.2, "llama13": 25.7, "llama30": 64.6}
    for name, want in split_expect.items():
        g = device_flops_per_token(load_preset(name), "split", 128, 128) / 1e9
        assert round(g, 2) == want, name
    for name, want in full_expect.items():
        g = device_flops_per_token(load_preset(name), "full_device") / 1e9
        assert round(g, 1) == want, name
    mem_ratio, flops_ratio = resource_ratios(load_preset("llama7"))
    assert abs(mem_ratio * 100 - 10.6) <= 0.15
    assert abs(flops_ratio * 100 - 2.0) <= 0.05


def test_criterion_03_traffic_constants_analytical_and_live():
    # analytical operation
    d2c, c2d = comm_bits_per_token(d=0, r_c2d=128, r_d2c=128, n_adapted=1, wire_bits=16)
    assert d2c + c2d == 8192
    d2c, c2d = comm_bits_per_token(d=0, r_c2d=4096, r_d2c=4096, n_adapted=1, wire_bits=16)
    assert d2c + c2d == 262_144

    # live toy sessions scaled to the same rank parameters, 16-bit wire
    mcfg = ModelConfig(d=16, n_layers=1, n_heads=2, vocab=32, max_seq=8)
    for rank, want in ((128, 8192), (4096, 262_144)):
        acfg = AdapterConfig(r_c2d=rank, r_d2c=rank, adapted_layers=(0,), init_seed=2)
        plan, device = _split_pair(mcfg, acfg, wire_bits=16)
        device.prefill([3])  # one token through one adapted layer
        led = device.session.ledger
        assert led.adapted_layer_payload_bits() == want, rank
        assert led.n_c2d[0] == 1 and led.n_d2c[0] == 3
        device.close()


def test_criterion_04_reduction_ratio_exact():
    assert reduction_ratio(128, 4096) == 1.0 - 128 / 4096
    assert round(reduction_ratio(128, 4096) * 100, 2) == 96.88


def test_criterion_05_overhead_figure():
    published = {"llama7": 5.1, "llama13": 6.4, "llama30": 9.3}
    for name, want in published.items():
        p = load_preset(name)
        ms = unit_comm_time(DEFAULT_NETWORK, p.d, 128, 128, p.n_layers,
                            wire_bits=16, emb_policy="up_only") * 1e3
        assert abs(ms - want) / want <= 0.15, (name, ms)


def test_criterion_06_layer_budget():
    assert lora_layer_budget(0.70, 37.2, DEFAULT_NETWORK, d=4096) == 2


def test_criterion_07_oracle_equivalence_random_configs():
    t0 = time.time()
    rng = np.random.default_rng(2025)
    cases = [(16, 2, 2), (16, 4, 4), (32, 2, 8), (32, 4, 2), (16, 2, 4), (32, 2, 4)]
    for i, (d, n_layers, r) in enumerate(cases):
        mcfg = ModelConfig(d=d, n_layers=n_layers, n_heads=2, vocab=64, max_seq=64)
        acfg = AdapterConfig(r_c2d=r, r_d2c=r, adapted_layers=tuple(range(n_layers)),
                             init_seed=100 + i)
        plan, device = _split_pair(mcfg, acfg, wire_bits=32, seed=200 + i)
        randomize_m(plan.device.adapters, rng)
        prompt = rng.integers(0, 64, size=4).tolist()
        ids, logits = device.generate(prompt, n_steps=16)
        device.close()
        hook = local_hook(plan.cloud.adapters, plan.device.adapters)
        mono_ids, mono_logits = generate_monolithic(prompt, plan.cloud.weights,
                                                    hook=hook, n_steps=16)
        assert ids == mono_ids, f"config {i}: token mismatch"
        worst = max(np.max(np.abs(a - b)) for a, b in zip(logits, mono_logits))
        assert worst <= 1e-5, f"config {i}: logit diff {worst}"
    assert time.time() - t0 < 30.0


def test_criterion_08_gradient_fidelity():
    t0 = time.time()
    rng = np.random.default_rng(31)
    mcfg = ModelConfig(d=16, n_layers=2, n_heads=2, vocab=32, max_seq=64)
    acfg = AdapterConfig(r_c2d=4, r_d2c=3, adapted_layers=(0, 1), init_seed=9)
    tp = {"lr": 0.05, "steps": 4, "warmup_ratio": 0.1}
    plan, device = _split_pair(mcfg, acfg, train_params=tp, phase="train")
    randomize_m(plan.device.adapters, rng)
    pairs = [([1, 2, 3], [4, 5]), ([6, 7, 8], [9, 10])]
    batch = TrainingBatch.from_pairs(pairs)

    # monolithic reverse-mode gradient
    hook = local_hook(plan.cloud.adapters, plan.device.adapters, record=True)
    stash = ForwardStash()
    logits = forward_monolithic(batch.inputs.reshape(-1), plan.cloud.weights,
                                hook=hook, stash=stash, segments=[batch.l] * batch.bs)
    _, grad_logits = masked_cross_entropy(logits, batch.labels.reshape(-1),
                                          batch.mask.reshape(-1))
    mono = backward_full(stash, plan.cloud.weights, hook, grad_logits)

    # the same gradient through the split choreography; the optimizer then
    # mutates M, so restore the snapshot before finite-differencing
    m_snap = {li: {k: v.copy() for k, v in mods.items()}
              for li, mods in plan.device.adapters.m.items()}
    device.train_step(batch)
    split = device.last_m_grads
    device.close()
    for li, mods in m_snap.items():
        for mod, t in mods.items():
            plan.device.adapters.m[li][mod][:] = t

    def fd_loss():
        total, count = 0.0, 0
        for bi in range(batch.bs):
            _, lg = ref_forward(batch.inputs[bi].tolist(), plan.cloud.weights,
                                plan.cloud.adapters, plan.device.adapters,
                                dtype=np.float64)
            z = lg - lg.max(axis=1, keepdims=True)
            lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            for t in range(batch.l):
                if batch.mask[bi, t]:
                    total -= lp[t, batch.labels[bi, t]]
                    count += 1
        return total / count

    eps = 1e-3
    for li in acfg.adapted_layers:
        for mod in ("q", "k", "v"):
            g_mono = mono["m"][li][mod]
            g_split = split[li][mod]
            denom = max(np.max(np.abs(g_mono)), 1e-12)
            assert np.max(np.abs(g_split - g_mono)) / denom <= 1e-5, (li, mod)
            m = plan.device.adapters.m[li][mod]
            coords = [(0, 0), (1, 1), (2, 2), (3, 0), (1, 2)]
            for idx in coords:
                orig = m[idx]
                m[idx] = orig + eps
                fp = fd_loss()
                m[idx] = orig - eps
                fm = fd_loss()
                m[idx] = orig
                num = (fp - fm) / (2 * eps)
                assert g_mono[idx] == pytest.approx(num, rel=1e-3, abs=1e-7), (li, mod, idx)
                assert g_split[idx] == pytest.approx(num, rel=1e-3, abs=1e-7), (li, mod, idx)
    assert time.time() - t0 < 60.0


def test_criterion_09_training_efficacy_and_integrity():
    t0 = time.time()
    rep = run_integrity_experiment(task_seed=17, model_seed=0, n_rounds=20)
    assert rep.final_train_loss < 0.05
    assert rep.matched_loss < 0.05
    assert rep.perturbed_mean > rep.matched_loss
    assert rep.perturbed_mean >= 0.5 * rep.untrained_loss
    assert len(rep.perturbed_losses) == 20
    assert np.isfinite(rep.perturbed_sd)
    assert time.time() - t0 < 300.0


def test_criterion_10_zero_init_neutrality():
    mcfg = ModelConfig(d=16, n_layers=2, n_heads=2, vocab=32, max_seq=64)
    acfg = AdapterConfig(r_c2d=4, r_d2c=4, adapted_layers=(0, 1), init_seed=5)
    plan, device = _split_pair(mcfg, acfg, wire_bits=32)  # M = 0 after init
    ids, logits = device.generate([1, 2, 3], n_steps=8)
    device.close()
    base_ids, base_logits = generate_monolithic([1, 2, 3], plan.cloud.weights,
                                                hook=None, n_steps=8)
    zero_hook = local_hook(plan.cloud.adapters, plan.device.adapters)
    zero_ids, zero_logits = generate_monolithic([1, 2, 3], plan.cloud.weights,
                                                hook=zero_hook, n_steps=8)
    assert ids == base_ids == zero_ids
    for a, b, c in zip(logits, base_logits, zero_logits):
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(b, c)


def test_criterion_11_tps_formula_properties():
    inputs = ThroughputInputs(tps_decoder_cloud=100, tps_lrrt_device=1000,
                              tps_lrrt_cloud=1000, tps_lmhead_device=500)
    # limiting cases
    cloud_only = ThroughputInputs(tps_decoder_cloud=37.2)
    assert infer_tps(cloud_only, 0.0) == pytest.approx(37.2, rel=1e-12)
    assert infer_tps(ThroughputInputs(100, 2000, 2000, 500), 0.007) == \
        pytest.approx(50.0, rel=1e-12)
    # monotonicity in every argument
    assert infer_tps(inputs, 0.002) > infer_tps(inputs, 0.004)
    assert infer_tps(ThroughputInputs(110, 1000, 1000, 500), 0.002) > \
        infer_tps(inputs, 0.002)
    assert infer_tps(ThroughputInputs(100, 1100, 1000, 500), 0.002) > \
        infer_tps(inputs, 0.002)
    assert infer_tps(ThroughputInputs(100, 1000, 1000, 550), 0.002) > \
        infer_tps(inputs, 0.002)
    # never above any component
    assert infer_tps(inputs, 0.0) <= 100
    # training at t' > 0 is slower; equal at t' = 0
    assert train_tps(inputs, 0.004, 0.003) < infer_tps(inputs, 0.004)
    assert train_tps(inputs, 0.004, 0.0) == pytest.approx(infer_tps(inputs, 0.004))
    # exact linear slopes of t and payload bits in rank and layer count
    slope_r = unit_comm_time(DEFAULT_NETWORK, 0, 2, 2, 1, 16) / 2
    for r in (4, 8, 64, 128):
        assert unit_comm_time(DEFAULT_NETWORK, 0, r, r, 1, 16) == \
            pytest.approx(slope_r * r, rel=1e-12)
    slope_n = unit_comm_time(DEFAULT_NETWORK, 0, 128, 128, 1, 16)
    for n in (2, 3, 32):
        assert unit_comm_time(DEFAULT_NETWORK, 0, 128, 128, n, 16) == \
            pytest.approx(slope_n * n, rel=1e-12)
    bits_1 = sum(comm_bits_per_token(0, 64, 64, 1, 16))
    for k in (2, 5):
        assert sum(comm_bits_per_token(0, 64 * k, 64 * k, 1, 16)) == bits_1 * k
        assert sum(comm_bits_per_token(0, 64, 64, k, 16)) == bits_1 * k


def test_criterion_12_data_locality_wire_tap():
    rng = np.random.default_rng(77)
    mcfg = ModelConfig(d=16, n_layers=2, n_heads=2, vocab=32, max_seq=64)
    acfg = AdapterConfig(r_c2d=4, r_d2c=4, adapted_layers=(0, 1), init_seed=3)
    m_marker = np.float32(123456.78125)
    w_marker = np.float32(-98765.4375)

    # full generation run
    tap_gen = CaptureTap()
    plan, device = _split_pair(mcfg, acfg, tap=tap_gen)
    randomize_m(plan.device.adapters, rng)
    plan.device.adapters.m[0]["q"][0, 0] = m_marker
    plan.cloud.weights.layers[0].wq[0, 0] = w_marker
    device.generate([1, 2, 3], n_steps=8)
    device.close()

    # full training run
    tap_train = CaptureTap()
    tp = {"lr": 0.05, "steps": 3, "warmup_ratio": 0.1}
    plan2, device2 = _split_pair(mcfg, acfg, train_params=tp, phase="train",
                                 tap=tap_train)
    randomize_m(plan2.device.adapters, rng)
    plan2.device.adapters.m[0]["q"][0, 0] = m_marker
    plan2.cloud.weights.layers[0].wq[0, 0] = w_marker
    batch = TrainingBatch.from_pairs([([1, 2, 3], [4, 5]), ([6, 7], [8, 9, 10])])
    for _ in range(3):
        device2.train_step(batch)
    device2.close()

    records = tap_gen.records + tap_train.records
    assert len(records) > 20
    for direction, frame, data in records:
        allowed = D2C_TYPES if direction == "d2c" else C2D_TYPES
        assert frame.msg_type in allowed, f"{direction} {frame.msg_type}"
        payload = data[21:]
        assert m_marker.tobytes() not in payload, "private M leaked"
        assert w_marker.tobytes() not in payload, "base weight leaked"
        if frame.msg_type not in (MessageType.Hello, MessageType.HelloAck):
            assert np.asarray(batch.inputs[0], dtype="<i8").tobytes() not in data
            assert np.asarray(batch.labels[0], dtype="<i8").tobytes() not in data
