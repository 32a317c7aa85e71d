"""Command-line surface: loopback, TCP, reports, exit codes."""

import json
import socket
import time

import pytest

from plrr.cli import main

TINY = [
    "--set", "model.d=16", "--set", "model.n_layers=2", "--set", "model.n_heads=2",
    "--set", "model.vocab=32", "--set", "model.max_seq=64",
    "--set", "adapter.r_c2d=4", "--set", "adapter.r_d2c=4",
]


def run_cli(args):
    return main(args)


class TestRunDevice:
    def test_loopback_generation_deterministic(self, tmp_path, capsys):
        args = ["run-device", "--prompt", "1,2,3", "--n-tokens", "8",
                "--ledger-out", str(tmp_path / "led.json"),
                "--report", str(tmp_path / "rep.json")] + TINY
        assert run_cli(args) == 0
        out1 = capsys.readouterr().out
        assert run_cli(args) == 0
        out2 = capsys.readouterr().out
        assert out1 == out2
        assert "generated:" in out1
        led = json.loads((tmp_path / "led.json").read_text())
        assert led["bits_d2c_payload"] > 0
        rep = json.loads((tmp_path / "rep.json").read_text())
        assert rep["schema_version"] == 1
        assert len(rep["results"]["generated_ids"]) == 8

    def test_ledger_matches_formula(self, tmp_path):
        led_path = tmp_path / "led.json"
        n_tokens = 6
        assert run_cli(["run-device", "--prompt", "1 2 3", "--n-tokens",
                        str(n_tokens), "--ledger-out", str(led_path)] + TINY) == 0
        led = json.loads(led_path.read_text())
        from plrr.wire.ledger import expected_payload_bits
        pre_d2c, pre_c2d = expected_payload_bits("prefill", 16, 4, 4, 2, 32, tokens=3)
        dec_d2c, dec_c2d = expected_payload_bits("decode", 16, 4, 4, 2, 32, tokens=n_tokens)
        assert led["bits_d2c_payload"] == pre_d2c + dec_d2c
        assert led["bits_c2d_payload"] == pre_c2d + dec_c2d

    def test_report_validates_against_schema(self, tmp_path):
        jsonschema = pytest.importorskip("jsonschema")
        rep_path = tmp_path / "rep.json"
        assert run_cli(["run-device", "--prompt", "1", "--n-tokens", "2",
                        "--report", str(rep_path)] + TINY) == 0
        import importlib.resources
        schema = json.loads(
            (importlib.resources.files("plrr") / "report_schema.json").read_text())
        jsonschema.validate(json.loads(rep_path.read_text()), schema)


class TestTrainCli:
    def _dataset(self, tmp_path):
        data = tmp_path / "pairs.txt"
        data.write_text("1 2 3 | 4 5\n6 7 | 8 9 10\n# comment line\n")
        return data

    def test_train_writes_checkpoint_and_curve(self, tmp_path, capsys):
        data = self._dataset(tmp_path)
        ckpt = tmp_path / "m.plrm"
        csv_path = tmp_path / "loss.csv"
        args = ["train", "--data", str(data), "--steps", "10",
                "--checkpoint-out", str(ckpt), "--loss-csv", str(csv_path)] + TINY
        assert run_cli(args) == 0
        capsys.readouterr()
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "step,loss" and len(lines) == 11
        from plrr.adapters import load_private_checkpoint
        loaded = load_private_checkpoint(ckpt)
        assert loaded.cfg.r_c2d == 4

    def test_loss_curve_bit_identical_across_runs(self, tmp_path, capsys):
        data = self._dataset(tmp_path)
        c1, c2 = tmp_path / "a.csv", tmp_path / "b.csv"
        base = ["train", "--data", str(data), "--steps", "10"] + TINY
        assert run_cli(base + ["--loss-csv", str(c1)]) == 0
        assert run_cli(base + ["--loss-csv", str(c2)]) == 0
        capsys.readouterr()
        assert c1.read_bytes() == c2.read_bytes()

    def test_missing_dataset_is_runtime_error(self, tmp_path, capsys):
        assert run_cli(["train", "--data", str(tmp_path / "nope.txt")] + TINY) == 1


class TestEstimateCli:
    def test_memory_row(self, capsys, tmp_path):
        csv_path = tmp_path / "est.csv"
        assert run_cli(["estimate", "--preset", "llama7", "--rank", "128",
                        "--csv", str(csv_path)]) == 0
        out = capsys.readouterr().out
        assert "265.3" in out
        assert "memory_mb" in csv_path.read_text()

    def test_overhead_within_band(self, capsys):
        assert run_cli(["estimate", "--preset", "llama30", "--overhead"]) == 0
        total = [l for l in capsys.readouterr().out.splitlines() if "total_ms" in l][0]
        assert abs(float(total.split(":")[1]) - 9.3) / 9.3 <= 0.15

    def test_lora_budget(self, capsys):
        assert run_cli(["estimate", "--preset", "llama7", "--lora-budget",
                        "--target", "0.7", "--tps-cloud", "37.2"]) == 0
        assert "budget" in capsys.readouterr().out.lower()

    def test_unknown_preset_exit_2(self, capsys):
        assert run_cli(["estimate", "--preset", "llama999"]) == 2


class TestConfigHandling:
    def test_config_file_and_overrides(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("model.d = 16\nmodel.n_heads = 2\nmodel.vocab = 32\n"
                       "adapter.r_c2d = 4\nadapter.r_d2c = 4\n"
                       "perf.network.b_d2c = 60e6\n# comment\n")
        assert run_cli(["run-device", "--config", str(cfg), "--prompt", "1",
                        "--n-tokens", "1"]) == 0
        capsys.readouterr()

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("model.banana = 7\n")
        assert run_cli(["run-device", "--config", str(cfg), "--prompt", "1",
                        "--n-tokens", "1"]) == 2

    def test_bad_value_exit_2(self, capsys):
        assert run_cli(["run-device", "--prompt", "1", "--n-tokens", "1",
                        "--set", "model.d=banana"]) == 2


class TestSelftest:
    def test_green(self, capsys):
        t0 = time.time()
        assert run_cli(["selftest"]) == 0
        assert time.time() - t0 < 60
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 4 and "[FAIL]" not in out


class TestTcp:
    def test_tcp_end_to_end_cli(self, tmp_path, capsys):
        import threading
        from plrr.runconfig import load_config
        from plrr.runtime import build_system

        overrides = ["model.d=16", "model.n_heads=2", "model.vocab=32",
                     "adapter.r_c2d=4", "adapter.r_d2c=4"]
        cfg = load_config(None, overrides)
        _, cloud, _ = build_system(cfg.model_config(), cfg.adapter_config(),
                                   wire_bits=cfg.wire.dtype_bits, seed=cfg.model.seed)

        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.bind(("127.0.0.1", 0))
        port = srv.getsockname()[1]
        srv.close()

        ready = threading.Event()
        stop = threading.Event()
        t = threading.Thread(target=cloud.serve_tcp,
                             args=("127.0.0.1", port, ready, stop), daemon=True)
        t.start()
        assert ready.wait(5.0)

        args = ["run-device", "--connect", f"127.0.0.1:{port}", "--prompt", "1,2,3",
                "--n-tokens", "6"] + [x for pair in
                                      (("--set", o) for o in overrides) for x in pair]
        assert run_cli(args) == 0
        tcp_out = capsys.readouterr().out

        loop_args = ["run-device", "--prompt", "1,2,3", "--n-tokens", "6"] + \
            [x for pair in (("--set", o) for o in overrides) for x in pair]
        assert run_cli(loop_args) == 0
        loop_out = capsys.readouterr().out
        assert tcp_out.splitlines()[0] == loop_out.splitlines()[0]
        stop.set()
        t.join(2.0)

    def test_digest_mismatch_exit_2(self, capsys):
        import threading
        from plrr.runconfig import load_config
        from plrr.runtime import build_system

        overrides = ["model.d=16", "model.n_heads=2", "model.vocab=32",
                     "adapter.r_c2d=4", "adapter.r_d2c=4"]
        cfg = load_config(None, overrides)
        _, cloud, _ = build_system(cfg.model_config(), cfg.adapter_config(),
                                   wire_bits=cfg.wire.dtype_bits, seed=cfg.model.seed)
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.bind(("127.0.0.1", 0))
        port = srv.getsockname()[1]
        srv.close()
        ready = threading.Event()
        stop = threading.Event()
        t = threading.Thread(target=cloud.serve_tcp,
                             args=("127.0.0.1", port, ready, stop), daemon=True)
        t.start()
        assert ready.wait(5.0)

        mismatched = overrides + ["adapter.seed=99"]
        args = ["run-device", "--connect", f"127.0.0.1:{port}", "--prompt", "1",
                "--n-tokens", "1"] + [x for pair in
                                      (("--set", o) for o in mismatched) for x in pair]
        assert run_cli(args) == 2
        err = capsys.readouterr().err
        assert "digest mismatch" in err
        stop.set()
        t.join(2.0)


class TestIntegrityCli:
    def test_report_schema_and_outcome(self, tmp_path, capsys):
        jsonschema = pytest.importorskip("jsonschema")
        rep_path = tmp_path / "integrity.json"
        assert run_cli(["ablate-integrity", "--rounds", "3",
                        "--report", str(rep_path)]) == 0
        out = capsys.readouterr().out
        assert "CONFIRMED" in out
        import importlib.resources
        schema = json.loads(
            (importlib.resources.files("plrr") / "report_schema.json").read_text())
        rep = json.loads(rep_path.read_text())
        jsonschema.validate(rep, schema)
        res = rep["results"]
        assert res["perturbed_mean_loss"] > res["matched_loss"]


class TestVerifyCapture:
    def test_round_trip(self, tmp_path, capsys):
        from plrr.runconfig import load_config
        from plrr.runtime import build_system
        from plrr.wire.transport import CaptureTap, loopback_pair

        cfg = load_config(None, ["model.d=16", "model.n_heads=2", "model.vocab=32",
                                 "adapter.r_c2d=4", "adapter.r_d2c=4"])
        tap = CaptureTap()
        plan, cloud, device = build_system(cfg.model_config(), cfg.adapter_config(),
                                           seed=0)
        dev_conn, cloud_conn = loopback_pair(timeout=10.0)
        cloud.serve_loopback(cloud_conn)
        device.connect(dev_conn, tap=tap)
        device.generate([1, 2], n_steps=3)
        device.close()
        cap = tmp_path / "session.plrrcap"
        tap.write(cap)
        assert run_cli(["verify-capture", str(cap)]) == 0
        assert "capture ok" in capsys.readouterr().out
