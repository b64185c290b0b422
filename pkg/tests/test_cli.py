"""End-to-end behaviour of the ``ssmnet`` command line."""
import csv
import io
import json

import numpy as np
import pytest

from ssmnet import audio
from ssmnet.bench import CSV_HEADER, SWEEP_VALUES
from ssmnet.cli import main
from ssmnet.network import dump_config, preset


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


class TestPlan:
    def test_bottleneck_baseline(self):
        code, text = run("plan", "--variant", "bottleneck", "--H", "16", "--H-out", "32",
                         "--N", "256", "--M", "16", "--L", "2048", "--batch", "256")
        assert code == 0
        assert "chosen plan (FullKernel)" in text
        assert "total predicted FLOPs" in text and "peak intermediate elements" in text
        assert "shape branch: FullKernel" in text and "fft_early=False" in text

    def test_depthwise(self):
        code, text = run("plan", "--variant", "depthwise", "--H", "4", "--N", "2", "--L", "8")
        assert code == 0 and "NaturalOrder" in text and "shape branch" not in text

    def test_missing_required_option(self, capsys):
        assert run("plan", "--variant", "bottleneck", "--H", "4", "--L", "8")[0] == 2

    def test_invalid_dims(self, capsys):
        code, _ = run("plan", "--variant", "grouped", "--H", "8", "--G", "3", "--N", "2",
                      "--L", "8")
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_too_tight_bound(self, capsys):
        code, _ = run("plan", "--variant", "bottleneck", "--H", "4", "--N", "2", "--L", "8",
                      "--max-ndim", "2")
        assert code == 2 and "max_ndim" in capsys.readouterr().err


class TestVerify:
    def test_passes_and_is_deterministic(self):
        a = run("verify", "--seed", "11")
        b = run("verify", "--seed", "11")
        assert a[0] == 0 and "all suites passed" in a[1]
        strip = lambda t: [l.split(" time=")[0] for l in t.splitlines()]
        assert strip(a[1]) == strip(b[1])

    def test_seed_from_environment(self, monkeypatch):
        monkeypatch.setenv("CENTAURUS_SEED", "5")
        assert "seed=5" in run("verify")[1]

    def test_bad_environment_seed(self, monkeypatch, capsys):
        monkeypatch.setenv("CENTAURUS_SEED", "x")
        assert run("verify")[0] == 2

    def test_perturbed_kernel_fails(self):
        code, text = run("verify", "--seed", "0", "--perturb-kernel")
        assert code == 1 and "FAIL" in text


class TestBench:
    def test_csv_without_timing(self, tmp_path):
        path = tmp_path / "n.csv"
        code, text = run("bench", "--axis", "N", "--csv", str(path), "--no-time")
        assert code == 0
        lines = path.read_text().splitlines()
        body = [l for l in lines if not l.startswith("#")]
        rows = list(csv.reader(body))
        assert tuple(rows[0]) == CSV_HEADER
        assert [int(r[0]) for r in rows[1:]] == list(SWEEP_VALUES)
        for r in rows[1:]:
            assert float(r[2]) <= float(r[1])

    def test_unwritable_path(self, tmp_path, capsys):
        code, _ = run("bench", "--axis", "N", "--csv", str(tmp_path / "no" / "x.csv"),
                      "--no-time")
        assert code == 2


class TestCount:
    def test_preset_json(self):
        code, text = run("count", "--preset", "kws_hybrid_small", "--json")
        assert code == 0
        d = json.loads(text)
        assert d["total_params"] == 26_464

    def test_config_file_table(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"sample_rate_hz": 16000,
                                    "layers": [{"variant": "depthwise", "H": 1, "N": 1}]}))
        code, text = run("count", "--config", str(path))
        assert code == 0 and "total params: 3" in text and "144000" in text

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"sample_rate_hz": 16000,
                                    "layers": [{"variant": "grouped", "H": 8, "G": 3}]}))
        assert run("count", "--config", str(path))[0] == 2
        assert "layer 0" in capsys.readouterr().err

    def test_needs_exactly_one_source(self, capsys):
        assert run("count")[0] == 2


class TestRun:
    def test_silence_through_dns(self, tmp_path):
        wav, out = tmp_path / "s.wav", tmp_path / "y.f32"
        audio.write_wav(wav, np.zeros(16000), 16000)
        code, _ = run("run", "--preset", "dns_hourglass", "--input", str(wav),
                      "--output", str(out))
        assert code == 0
        y = audio.read_raw(out)
        assert y.size == 16000 and np.all(np.isfinite(y))

    def test_offline_matches_stream(self, tmp_path):
        wav = tmp_path / "n.wav"
        audio.write_wav(wav, 0.3 * np.random.default_rng(0).standard_normal(1000), 16000)
        outs = []
        for mode in ("offline", "stream"):
            path = tmp_path / f"{mode}.f32"
            assert run("run", "--preset", "kws_hybrid_small", "--input", str(wav),
                       "--mode", mode, "--output", str(path), "--seed", "3")[0] == 0
            outs.append(audio.read_raw(path))
        assert outs[0].size == 4 * 64                     # ceil(1000 / 256) frames x 64
        np.testing.assert_allclose(outs[0], outs[1], rtol=0, atol=1e-5)

    def test_raw_input(self, tmp_path):
        raw, out = tmp_path / "x.raw", tmp_path / "y.f32"
        audio.write_raw(raw, np.zeros(512))
        assert run("run", "--preset", "kws_hybrid_small", "--input", str(raw),
                   "--output", str(out))[0] == 0
        assert audio.read_raw(out).size == 2 * 64

    def test_stereo_rejected(self, tmp_path, capsys):
        import wave
        path = tmp_path / "st.wav"
        with wave.open(str(path), "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(np.zeros(200, "<i2").tobytes())
        assert run("run", "--preset", "kws_hybrid_small", "--input", str(path),
                   "--output", str(tmp_path / "y"))[0] == 2

    def test_rate_mismatch(self, tmp_path, capsys):
        wav = tmp_path / "r.wav"
        audio.write_wav(wav, np.zeros(100), 8000)
        assert run("run", "--preset", "kws_hybrid_small", "--input", str(wav),
                   "--output", str(tmp_path / "y"))[0] == 2
        assert "sample rate" in capsys.readouterr().err

    def test_config_file(self, tmp_path):
        cfg, wav, out = tmp_path / "c.json", tmp_path / "a.wav", tmp_path / "y.f32"
        cfg.write_text(dump_config(preset("kws_hybrid_small")))
        audio.write_wav(wav, np.zeros(256), 16000)
        assert run("run", "--config", str(cfg), "--input", str(wav), "--output", str(out))[0] == 0


def test_no_command_is_usage_error(capsys):
    assert run()[0] == 2


def test_help_exits_zero(capsys):
    assert run("--help")[0] == 0
