"""Command-line surface.

Subcommands: serve-cloud, run-device, train, estimate, ablate-integrity,
selftest, verify-capture. Exit codes: 0 ok, 1 runtime error, 2
handshake/config error, 3 selftest failure. Set PLRR_LOG to error, info
or debug to control logging.
"""

import argparse
import json
import logging
import os
import socket
import sys
import time

import numpy as np

from . import __version__
from .adapters import save_private_checkpoint
from .errors import ConfigError, HandshakeError, InputError, PlrrError
from .perf import (DEFAULT_NETWORK, NetworkSpec, estimate_rows, list_presets,
                   load_preset, lora_layer_budget, overhead_decomposition,
                   rows_to_csv)
from .runconfig import RunConfig, load_config
from .runtime import build_system
from .runtime.device import TrainingBatch
from .runtime.integrity import run_integrity_experiment
from .wire.frames import C2D_TYPES, D2C_TYPES, MessageType
from .wire.transport import SocketConn, loopback_pair, read_capture

log = logging.getLogger("plrr.cli")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_SELFTEST = 3


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("PLRR_LOG", "error"), logging.ERROR)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")


def write_report(path, command: str, inputs: dict, results: dict):
    """Byte-stable report: sorted keys, fixed separators, trailing newline."""
    doc = {"schema_version": 1, "command": command, "inputs": inputs,
           "results": results}
    text = json.dumps(doc, sort_keys=True, indent=2, separators=(",", ": "))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _load_cfg(args) -> RunConfig:
    try:
        return load_config(args.config, args.set)
    except (InputError, OSError) as e:
        raise ConfigError(str(e)) from None


def _parse_ids(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise InputError(f"bad token id list {text!r}") from None


def _parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise InputError(f"address must be host:port, got {addr!r}")
    return host, int(port)


def _load_pairs(path: str) -> list[tuple[list[int], list[int]]]:
    pairs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "|" not in line:
                    raise InputError(f"{path}:{lineno}: expected 'prompt | target'")
                left, _, right = line.partition("|")
                pairs.append((_parse_ids(left), _parse_ids(right)))
    except OSError as e:
        raise InputError(f"cannot read dataset: {e}") from None
    if not pairs:
        raise InputError(f"dataset {path} holds no examples")
    return pairs


def _connect_tcp(addr: str) -> SocketConn:
    host, port = _parse_addr(addr)
    try:
        sock = socket.create_connection((host, port), timeout=30.0)
    except OSError as e:
        raise HandshakeError(f"cannot connect to {addr}: {e}") from None
    return SocketConn(sock)


def _make_device(cfg: RunConfig, train=False):
    mcfg, acfg = cfg.model_config(), cfg.adapter_config()
    plan, cloud, device = build_system(
        mcfg, acfg, wire_bits=cfg.wire.dtype_bits, seed=cfg.model.seed,
        train_params=cfg.train_params() if train else None)
    return plan, cloud, device


# -- commands ------------------------------------------------------------------


def cmd_serve_cloud(args) -> int:
    cfg = _load_cfg(args)
    mcfg, acfg = cfg.model_config(), cfg.adapter_config()
    _, cloud, _ = build_system(mcfg, acfg, wire_bits=cfg.wire.dtype_bits,
                               seed=cfg.model.seed)
    host, port = _parse_addr(args.listen or cfg.wire.listen_addr)
    print(f"serving cloud node on {host}:{port} (digest {cloud.digest[:12]}...)")
    try:
        cloud.serve_tcp(host, port)
    except KeyboardInterrupt:
        print("interrupted")
    return EXIT_OK


def cmd_run_device(args) -> int:
    cfg = _load_cfg(args)
    prompt = _parse_ids(args.prompt)
    plan, cloud, device = _make_device(cfg)
    addr = args.connect or (cfg.wire.connect_addr if cfg.wire.transport == "tcp" else None)
    if addr:
        conn = _connect_tcp(addr)
    else:
        dev_conn, cloud_conn = loopback_pair(timeout=120.0)
        cloud.serve_loopback(cloud_conn)
        conn = dev_conn
    device.connect(conn)
    ids, _ = device.generate(prompt, args.n_tokens)
    device.close()
    print("generated:", " ".join(str(i) for i in ids))

    led = device.session.ledger
    results = {"generated_ids": ids, "ledger": led.to_dict()}
    if args.ledger_out:
        with open(args.ledger_out, "w", encoding="utf-8") as fh:
            json.dump(led.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    if args.report:
        write_report(args.report, "run-device",
                     {"config": cfg.to_dict(), "prompt": prompt,
                      "n_tokens": args.n_tokens}, results)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.steps is not None:
        cfg.train.steps = args.steps
    pairs = _load_pairs(args.data)
    plan, cloud, device = _make_device(cfg, train=True)
    if args.connect:
        conn = _connect_tcp(args.connect)
    else:
        dev_conn, cloud_conn = loopback_pair(timeout=600.0)
        cloud.serve_loopback(cloud_conn)
        conn = dev_conn
    device.connect(conn, phase="train")
    width = cfg.train.seq_len if cfg.train.seq_len else None
    bs = cfg.train.batch_size
    batches = [TrainingBatch.from_pairs(pairs[i:i + bs], l=width)
               for i in range(0, len(pairs), bs)]
    curve = []
    t0 = time.time()
    for step in range(1, cfg.train.steps + 1):
        loss = device.train_step(batches[(step - 1) % len(batches)])
        curve.append(loss)
        if step == 1 or step % 50 == 0 or step == cfg.train.steps:
            log.info("step %d loss %.5f", step, loss)
    device.close()
    dt = time.time() - t0
    print(f"trained {cfg.train.steps} steps in {dt:.1f}s; "
          f"final loss {curve[-1]:.5f}")
    if args.loss_csv:
        with open(args.loss_csv, "w", encoding="utf-8") as fh:
            fh.write("step,loss\n")
            for i, loss in enumerate(curve, 1):
                fh.write(f"{i},{loss:.8f}\n")
    if args.checkpoint_out:
        save_private_checkpoint(args.checkpoint_out, plan.device.adapters)
        print(f"private checkpoint written to {args.checkpoint_out}")
    if args.report:
        write_report(args.report, "train",
                     {"config": cfg.to_dict(), "dataset": args.data},
                     {"final_loss": curve[-1], "steps": cfg.train.steps,
                      "ledger": device.session.ledger.to_dict()
                      if device.session else {}})
    return EXIT_OK


def cmd_estimate(args) -> int:
    try:
        preset = load_preset(args.preset)
    except InputError as e:
        raise ConfigError(str(e)) from None
    network = NetworkSpec(b_d2c=args.b_d2c, b_c2d=args.b_c2d)
    r_c2d = args.r_c2d or args.rank
    r_d2c = args.r_d2c or args.rank
    inputs = {"preset": args.preset, "rank_c2d": r_c2d, "rank_d2c": r_d2c,
              "wire_bits": args.wire_bits, "b_d2c": args.b_d2c, "b_c2d": args.b_c2d,
              "emb_policy": args.emb_policy}
    results = {}

    if args.lora_budget:
        if preset.d is None:
            print("error: preset lacks architecture dims", file=sys.stderr)
            return EXIT_CONFIG
        tps_cloud = args.tps_cloud or preset.tps_decoder_cloud
        budget = lora_layer_budget(args.target, tps_cloud, network, preset.d,
                                   args.wire_bits, args.emb_policy)
        results["lora_budget_layers"] = budget
        inputs.update(target=args.target, tps_cloud=tps_cloud)
        print(f"layer budget at {args.target:.0%} of {tps_cloud} TPS: {budget}")
    elif args.overhead:
        if preset.d is None:
            print("error: preset lacks architecture dims", file=sys.stderr)
            return EXIT_CONFIG
        items = overhead_decomposition(network, preset.d, r_c2d, r_d2c,
                                       preset.n_layers, args.wire_bits,
                                       args.emb_policy)
        results["overhead"] = items
        for key, val in items.items():
            print(f"{key:>16}: {val:8.3f}")
    else:
        rows = estimate_rows(preset, network, r_c2d, r_d2c, args.wire_bits,
                             args.emb_policy)
        results["rows"] = rows
        header = f"{'mode':>12} {'bits':>4} {'memory_mb':>10} {'flops_g':>8} {'t_ms':>7} {'tprime_ms':>9} {'tps':>6}"
        print(header)
        for r in rows:
            print(f"{r['mode']:>12} {r['bits']:>4} {r['memory_mb']:>10} "
                  f"{r['flops_g']:>8} {str(r['t_ms']):>7} {str(r['tprime_ms']):>9} "
                  f"{str(r['tps']):>6}")
        if args.csv:
            with open(args.csv, "w", encoding="utf-8") as fh:
                fh.write(rows_to_csv(rows))
    if args.report:
        write_report(args.report, "estimate", inputs, results)
    return EXIT_OK


def cmd_ablate_integrity(args) -> int:
    rep = run_integrity_experiment(task_seed=args.task_seed,
                                   model_seed=args.model_seed,
                                   n_rounds=args.rounds)
    print(f"matched loss    : {rep.matched_loss:.4f}")
    print(f"untrained loss  : {rep.untrained_loss:.4f}")
    print(f"perturbed loss  : {rep.perturbed_mean:.4f} +/- {rep.perturbed_sd:.4f} "
          f"({args.rounds} reinits)")
    ok = rep.perturbed_mean > rep.matched_loss
    print("pairing integrity:", "CONFIRMED" if ok else "NOT CONFIRMED")
    if args.report:
        write_report(args.report, "ablate-integrity",
                     {"task_seed": args.task_seed, "model_seed": args.model_seed,
                      "rounds": args.rounds},
                     rep.to_dict())
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_verify_capture(args) -> int:
    frames = read_capture(args.file)
    last_seq = {}
    for f in frames:
        direction = ("d2c" if f.msg_type in D2C_TYPES and f.msg_type not in C2D_TYPES
                     else "c2d" if f.msg_type in C2D_TYPES and f.msg_type not in D2C_TYPES
                     else "either")
        if direction != "either":
            prev = last_seq.get(direction, -1)
            if f.seq <= prev:
                print(f"error: {direction} sequence regressed at seq {f.seq}",
                      file=sys.stderr)
                return EXIT_RUNTIME
            last_seq[direction] = f.seq
    print(f"capture ok: {len(frames)} frames, "
          f"types {sorted({MessageType(f.msg_type).name for f in frames})}")
    return EXIT_OK


# -- selftest ------------------------------------------------------------------


def _selftest_checks():
    from .adapters import AdapterConfig, local_hook
    from .nncore.backward import backward_full
    from .nncore.config import ModelConfig
    from .nncore.loss import masked_cross_entropy
    from .nncore.model import ForwardStash, forward_monolithic, generate_monolithic

    rng = np.random.default_rng(7)

    def oracle_equivalence():
        for seed in (11, 12):
            mcfg = ModelConfig(d=16, n_layers=2, n_heads=2, vocab=32, max_seq=64)
            acfg = AdapterConfig(r_c2d=4, r_d2c=4, adapted_layers=(0, 1), init_seed=seed)
            plan, cloud, device = build_system(mcfg, acfg, seed=seed)
            for mods in plan.device.adapters.m.values():
                for mod in mods:
                    mods[mod] = (rng.standard_normal(mods[mod].shape) * 0.3).astype(np.float32)
            dev_conn, cloud_conn = loopback_pair(timeout=30.0)
            cloud.serve_loopback(cloud_conn)
            device.connect(dev_conn)
            ids, logits = device.generate([1, 2, 3], n_steps=8)
            device.close()
            hook = local_hook(plan.cloud.adapters, plan.device.adapters)
            mono_ids, mono_logits = generate_monolithic([1, 2, 3], plan.cloud.weights,
                                                        hook=hook, n_steps=8)
            if ids != mono_ids:
                return False
            if max(np.max(np.abs(a - b)) for a, b in zip(logits, mono_logits)) > 1e-5:
                return False
        return True

    def gradient_fidelity():
        mcfg = ModelConfig(d=16, n_layers=2, n_heads=2, vocab=32, max_seq=64)
        acfg = AdapterConfig(r_c2d=4, r_d2c=4, adapted_layers=(0, 1), init_seed=5)
        tp = {"lr": 0.05, "steps": 4, "warmup_ratio": 0.1}
        plan, cloud, device = build_system(mcfg, acfg, train_params=tp)
        for mods in plan.device.adapters.m.values():
            for mod in mods:
                mods[mod] = (rng.standard_normal(mods[mod].shape) * 0.3).astype(np.float32)
        batch = TrainingBatch.from_pairs([([1, 2, 3], [4, 5]), ([6, 7], [8, 9])])
        hook = local_hook(plan.cloud.adapters, plan.device.adapters, record=True)
        stash = ForwardStash()
        logits = forward_monolithic(batch.inputs.reshape(-1), plan.cloud.weights,
                                    hook=hook, stash=stash,
                                    segments=[batch.l] * batch.bs)
        _, gl = masked_cross_entropy(logits, batch.labels.reshape(-1),
                                     batch.mask.reshape(-1))
        mono = backward_full(stash, plan.cloud.weights, hook, gl)
        dev_conn, cloud_conn = loopback_pair(timeout=30.0)
        cloud.serve_loopback(cloud_conn)
        device.connect(dev_conn, phase="train")
        device.train_step(batch)
        device.close()
        state = plan.device.opt_state
        for li in acfg.adapted_layers:
            for mod in ("q", "k", "v"):
                g_split = state.m[f"m{li}.{mod}"] / 0.1
                g_mono = mono["m"][li][mod]
                denom = max(np.max(np.abs(g_mono)), 1e-12)
                if np.max(np.abs(g_split - g_mono)) / denom > 1e-5:
                    return False
        return True

    def ledger_exactness():
        mcfg = ModelConfig(d=16, n_layers=2, n_heads=2, vocab=32, max_seq=64)
        acfg = AdapterConfig(r_c2d=4, r_d2c=4, adapted_layers=(0, 1), init_seed=5)
        plan, cloud, device = build_system(mcfg, acfg)
        dev_conn, cloud_conn = loopback_pair(timeout=30.0)
        cloud.serve_loopback(cloud_conn)
        device.connect(dev_conn)
        device.generate([1, 2, 3, 4], n_steps=4)
        device.close()
        led = device.session.ledger
        exp_d2c = 32 * (4 * (16 + 2 * 3 * 4) + 4 * (16 + 2 * 3 * 4))
        exp_c2d = 32 * ((4 * 2 * 4 + 16) + 4 * (2 * 4 + 16))
        return (led.bits_d2c_payload, led.bits_c2d_payload) == (exp_d2c, exp_c2d)

    def frame_fuzz():
        from .wire.frames import Frame, decode_frame, encode_frame
        types = list(MessageType)
        for _ in range(500):
            f = Frame(msg_type=types[int(rng.integers(len(types)))],
                      session_id=int(rng.integers(2**32)),
                      seq=int(rng.integers(2**32)),
                      layer=int(rng.integers(2**16)),
                      module_tag=int(rng.integers(5)),
                      payload=rng.bytes(int(rng.integers(64))))
            g = decode_frame(encode_frame(f))
            if g.payload != f.payload or g.seq != f.seq:
                return False
        return True

    return [("oracle-equivalence", oracle_equivalence),
            ("gradient-fidelity", gradient_fidelity),
            ("ledger-exactness", ledger_exactness),
            ("frame-round-trip", frame_fuzz)]


def cmd_selftest(args) -> int:
    failures = 0
    t0 = time.time()
    for name, check in _selftest_checks():
        try:
            ok = check()
        except Exception as e:  # a crashed check is a failed check
            log.exception("selftest %s crashed", name)
            ok = False
            print(f"[FAIL] {name}: {e}")
            failures += 1
            continue
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        failures += 0 if ok else 1
    print(f"selftest {'passed' if not failures else 'FAILED'} "
          f"in {time.time() - t0:.1f}s")
    return EXIT_OK if failures == 0 else EXIT_SELFTEST


# -- argument parsing -----------------------------------------------------------


def _config_help() -> str:
    lines = ["configuration keys and defaults (file lines or --set):"]
    for section, keys in RunConfig().to_dict().items():
        for key, value in keys.items():
            dotted = {("perf", "b_d2c"): "perf.network.b_d2c",
                      ("perf", "b_c2d"): "perf.network.b_c2d"}.get(
                          (section, key), f"{section}.{key}")
            lines.append(f"  {dotted} = {value}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="plrr",
        description="Split transformer runtime with low-rank residual "
                    "transmission and its analytical performance model.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"plrr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config(sp):
        sp.add_argument("--config", help="run configuration file (section.key = value)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set model.d=32")

    sp = sub.add_parser("serve-cloud", help="serve the decoder stack over TCP")
    add_config(sp)
    sp.add_argument("--listen", help="host:port (default from config)")
    sp.set_defaults(func=cmd_serve_cloud)

    sp = sub.add_parser("run-device", help="generate tokens from a prompt")
    add_config(sp)
    sp.add_argument("--connect", help="cloud host:port (default: in-process loopback)")
    sp.add_argument("--prompt", required=True, help="comma/space separated token ids")
    sp.add_argument("--n-tokens", type=int, default=16)
    sp.add_argument("--ledger-out", help="write traffic ledger JSON here")
    sp.add_argument("--report", help="write a full report JSON here")
    sp.set_defaults(func=cmd_run_device)

    sp = sub.add_parser("train", help="tune the private adapters on a dataset")
    add_config(sp)
    sp.add_argument("--connect", help="cloud host:port (default: in-process loopback)")
    sp.add_argument("--data", required=True, help="lines of 'prompt ids | target ids'")
    sp.add_argument("--steps", type=int, help="override train.steps")
    sp.add_argument("--loss-csv", help="write per-step loss CSV here")
    sp.add_argument("--checkpoint-out", help="write the private M checkpoint here")
    sp.add_argument("--report", help="write a report JSON here")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("estimate", help="analytical memory/FLOPs/latency/TPS model")
    sp.add_argument("--preset", required=True,
                    help=f"model preset ({', '.join(list_presets())}) or a .txt path")
    sp.add_argument("--rank", type=int, default=128)
    sp.add_argument("--r-c2d", type=int)
    sp.add_argument("--r-d2c", type=int)
    sp.add_argument("--wire-bits", type=int, default=16, choices=(16, 32))
    sp.add_argument("--b-d2c", type=float, default=DEFAULT_NETWORK.b_d2c)
    sp.add_argument("--b-c2d", type=float, default=DEFAULT_NETWORK.b_c2d)
    sp.add_argument("--emb-policy", choices=("up_only", "up_and_down"),
                    default="up_only")
    sp.add_argument("--overhead", action="store_true",
                    help="print the latency decomposition")
    sp.add_argument("--lora-budget", action="store_true",
                    help="solve the full-rank adapter layer budget")
    sp.add_argument("--target", type=float, default=0.7)
    sp.add_argument("--tps-cloud", type=float,
                    help="cloud decoding TPS (default: preset calibration)")
    sp.add_argument("--csv", help="write estimate rows as CSV here")
    sp.add_argument("--report", help="write a report JSON here")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("ablate-integrity",
                        help="train M, then reinitialize the public pair")
    sp.add_argument("--rounds", type=int, default=20)
    sp.add_argument("--task-seed", type=int, default=17)
    sp.add_argument("--model-seed", type=int, default=0)
    sp.add_argument("--report", help="write a report JSON here")
    sp.set_defaults(func=cmd_ablate_integrity)

    sp = sub.add_parser("selftest", help="oracle, gradient and ledger spot checks")
    sp.set_defaults(func=cmd_selftest)

    sp = sub.add_parser("verify-capture", help="validate a recorded frame capture")
    sp.add_argument("file")
    sp.set_defaults(func=cmd_verify_capture)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HandshakeError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PlrrError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
