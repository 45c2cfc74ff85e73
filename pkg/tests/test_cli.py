"""End-to-end command line runs, exercised in-process via main(argv)."""

import os

import numpy as np
import pytest

from event2vec.cli import main
from event2vec.analysis import read_ppm
from event2vec.config import RunConfig, config_text
from event2vec.events import SensorGeometry
from event2vec.io import decode_weighted, encode_binary, generate_synthetic, SyntheticSpec
from event2vec.train import read_metrics

TINY = dict(train_streams=12, test_streams=8, rate_per_ms=2.0,
            duration_ms=50.0, sample_length=32, dim=8, dim_ff=16,
            n_heads=2, n_blocks=2, n_classes=4, batch_size=8,
            epochs=2, warmup_epochs=1, seed=3)


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(config_text(RunConfig(**TINY)))
    return str(path)


@pytest.fixture(scope="module")
def trained_cli(cfg_file, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli_run"))
    assert main(["train", "--config", cfg_file, "--out", out]) == 0
    return out


class TestTrainEval:
    def test_train_produces_run(self, trained_cli):
        assert os.path.isfile(os.path.join(trained_cli, "ckpt", "best.ev2c"))
        records = read_metrics(trained_cli)
        assert any(r["split"] == "test" for r in records)

    def test_eval_matches_logged_accuracy(self, trained_cli, cfg_file,
                                          capsys):
        ckpt = os.path.join(trained_cli, "ckpt", "last.ev2c")
        assert main(["eval", "--config", cfg_file,
                     "--checkpoint", ckpt]) == 0
        out = capsys.readouterr().out
        acc = float(out.split("accuracy=")[1].strip())
        last = [r for r in read_metrics(trained_cli)
                if r["split"] == "test"][-1]
        assert acc == pytest.approx(float(last["accuracy"]), abs=1e-6)

    def test_eval_train_split(self, trained_cli, cfg_file, capsys):
        ckpt = os.path.join(trained_cli, "ckpt", "last.ev2c")
        assert main(["eval", "--config", cfg_file, "--checkpoint", ckpt,
                     "--split", "train"]) == 0
        assert "split=train" in capsys.readouterr().out

    def test_set_overrides(self, cfg_file, tmp_path, capsys):
        out = str(tmp_path / "short")
        assert main(["train", "--config", cfg_file, "--out", out,
                     "--set", "epochs=1", "--set", "warmup_epochs=0"]) == 0
        records = read_metrics(out)
        assert max(int(r["epoch"]) for r in records) == 0


class TestProbePretrain:
    def test_probe_command(self, trained_cli, cfg_file, capsys):
        ckpt = os.path.join(trained_cli, "ckpt", "best.ev2c")
        assert main(["probe", "--config", cfg_file, "--checkpoint", ckpt,
                     "--blocks", "1"]) == 0
        out = capsys.readouterr().out
        assert "probe blocks=1" in out
        assert "test_accuracy=" in out

    def test_pretrain_command(self, cfg_file, tmp_path, capsys):
        out = str(tmp_path / "ssl")
        assert main(["pretrain", "--config", cfg_file, "--out", out,
                     "--set", "epochs=1", "--set", "warmup_epochs=0"]) == 0
        assert "pretrain loss" in capsys.readouterr().out
        assert os.path.isfile(os.path.join(out, "ckpt", "last.ev2c"))


class TestCluster:
    def test_cluster_file_to_file(self, tmp_path, capsys):
        geom = SensorGeometry(32, 32)
        stream, _ = generate_synthetic(
            SyntheticSpec(class_id=0, rate_per_ms=20.0, duration_ms=50.0,
                          seed=0), geom)
        src = str(tmp_path / "in.ev2v")
        dst = str(tmp_path / "out.ev2w")
        encode_binary(stream, geom, src)
        assert main(["cluster", "--in", src, "--out", dst,
                     "--L", "64", "--iters", "3"]) == 0
        ws, got_geom = decode_weighted(dst)
        assert len(ws) <= 64
        assert int(ws.rho.sum()) == len(stream)
        assert (got_geom.width, got_geom.height) == (32, 32)
        assert "->" in capsys.readouterr().out

    def test_cluster_missing_input(self, tmp_path, capsys):
        assert main(["cluster", "--in", str(tmp_path / "no.ev2v"),
                     "--out", str(tmp_path / "o.ev2w"), "--L", "8"]) == 1


class TestBenchViz:
    def test_bench_writes_report(self, cfg_file, tmp_path, capsys):
        out = str(tmp_path / "bench")
        assert main(["bench", "--config", cfg_file, "--out", out,
                     "--reps", "2", "--n-single", "2"]) == 0
        text = capsys.readouterr().out
        assert "train_samples_per_s" in text
        path = os.path.join(out, "bench.txt")
        assert os.path.isfile(path)
        assert "metric mean std" in open(path, encoding="utf-8").read()

    def test_viz_embed_outputs(self, trained_cli, cfg_file, tmp_path,
                               capsys):
        ckpt = os.path.join(trained_cli, "ckpt", "best.ev2c")
        out = str(tmp_path / "viz")
        assert main(["viz-embed", "--config", cfg_file,
                     "--checkpoint", ckpt, "--out", out]) == 0
        for name in ("rgb_p0.ppm", "rgb_p1.ppm", "cosine.ppm"):
            img = read_ppm(os.path.join(out, name))
            assert img.shape == (64, 64, 3)
        for name in ("field_p0.csv", "field_p1.csv"):
            lines = open(os.path.join(out, name),
                         encoding="utf-8").read().splitlines()
            assert lines[0] == "x,y,u,v"
            assert len(lines) == 1 + 64 * 64


class TestErrors:
    def test_unknown_config_key_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("dimension = 32\n")
        code = main(["train", "--config", str(bad),
                     "--out", str(tmp_path / "r")])
        assert code == 2
        err = capsys.readouterr().err
        assert "config error" in err
        assert "valid keys" in err and "sample_length" in err

    def test_bad_override_exit_2(self, tmp_path, capsys):
        code = main(["train", "--set", "epochs=zero",
                     "--out", str(tmp_path / "r")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_missing_config_file_exit_1(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "absent.cfg"),
                     "--out", str(tmp_path / "r")])
        assert code == 1
        assert "i/o error" in capsys.readouterr().err
