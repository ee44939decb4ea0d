import csv
import json

import numpy as np
import pytest

from _tiny import TINY
from dacal.checkpoint import save_checkpoint
from dacal.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from dacal.config import load_config
from dacal.data import synthetic_paired
from dacal.image_ops import read_image, write_image
from dacal.trainer import MetricsWriter, train_supervised


def sets(*items):
    out = []
    for item in items:
        out += ["--set", item]
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    args = ["train"] + sets(*TINY, "trainer.mode=\"supervised\"", f"run.out_dir=\"{out.as_posix()}\"")
    assert main(args) == EXIT_OK
    return out


class TestTrain:
    def test_smoke_writes_artifacts(self, trained):
        names = {p.name for p in trained.iterdir()}
        assert {"stage1.ckpt", "metrics.csv", "config.toml", "run_manifest.json"} <= names
        manifest = json.loads((trained / "run_manifest.json").read_text())
        assert manifest["command"] == "train" and "stage1.ckpt" in manifest["artifacts"]
        rows = list(csv.DictReader(open(trained / "metrics.csv")))
        assert rows and rows[-1]["psnr_val"] != ""
        assert load_config(trained / "config.toml", env={}).trainer.low_height == 16

    def test_missing_config(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "nope.toml")]) == EXIT_USAGE
        assert "not found" in capsys.readouterr().err

    def test_unknown_key_named(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[trainer]\nlearning_rate = 0.1\n")
        assert main(["train", "--config", str(cfg)]) == EXIT_USAGE
        assert "trainer.learning_rate" in capsys.readouterr().err

    def test_stage2_needs_checkpoint(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[data]\nsynthetic = \"identity\"\n")
        assert main(["train", "--config", str(cfg)] + sets("trainer.stage=2", f"run.out_dir=\"{tmp_path.as_posix()}\"")) == EXIT_USAGE
        assert "checkpoint" in capsys.readouterr().err

    def test_conflicting_mode_stage(self, capsys):
        assert main(["train"] + sets("trainer.mode=\"video\"", "trainer.stage=2")) == EXIT_USAGE

    def test_no_data(self, tmp_path):
        assert main(["train"] + sets(f"run.out_dir=\"{tmp_path.as_posix()}\"")) == EXIT_USAGE

    def test_pipeline(self, tmp_path):
        args = ["train", "--pipeline"] + sets(*TINY, "trainer.mode=\"supervised\"", "trainer.max_steps=2",
                                              f"run.out_dir=\"{tmp_path.as_posix()}\"")
        assert main(args) == EXIT_OK
        assert all((tmp_path / f"stage{s}.ckpt").exists() for s in (1, 2, 3))

    def test_stage2_from_cli_checkpoint(self, trained, tmp_path):
        args = ["train"] + sets(*TINY, "trainer.stage=2", f"trainer.previous_checkpoint=\"{(trained / 'stage1.ckpt').as_posix()}\"",
                                f"run.out_dir=\"{tmp_path.as_posix()}\"")
        assert main(args) == EXIT_OK
        assert (tmp_path / "stage2.ckpt").exists()

    def test_seed_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DACAL_SEED", "5")
        assert main(["train"] + sets(*TINY, "trainer.max_steps=1", f"run.out_dir=\"{tmp_path.as_posix()}\"")) == EXIT_OK
        assert json.loads((tmp_path / "run_manifest.json").read_text())["seed"] == 5


class TestEnhance:
    def test_odd_size(self, trained, tmp_path):
        img = np.random.default_rng(0).uniform(size=(45, 67, 3))
        write_image(tmp_path / "in.png", img)
        assert main(["enhance", str(trained / "stage1.ckpt"), str(tmp_path / "in.png"), str(tmp_path / "out.png")]) == EXIT_OK
        assert read_image(tmp_path / "out.png").shape == (45, 67, 3)

    def test_video_frame_count(self, trained, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        for t in range(4):
            write_image(frames / f"frame_{t:04d}.png", np.full((20, 24, 3), t / 4))
        out = tmp_path / "out"
        assert main(["enhance", "--video", str(trained / "stage1.ckpt"), str(frames), str(out)]) == EXIT_OK
        got = sorted(out.iterdir())
        assert len(got) == 4 and read_image(got[0]).shape == (20, 24, 3)

    def test_unreadable_input(self, trained, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"no image")
        assert main(["enhance", str(trained / "stage1.ckpt"), str(bad), str(tmp_path / "o.png")]) == EXIT_RUNTIME

    def test_bad_checkpoint(self, tmp_path):
        bad = tmp_path / "x.ckpt"
        bad.write_bytes(b"junk")
        write_image(tmp_path / "in.png", np.zeros((8, 8, 3)))
        assert main(["enhance", str(bad), str(tmp_path / "in.png"), str(tmp_path / "o.png")]) == EXIT_RUNTIME


def write_pairs(root, xs, ys):
    for i, (x, y) in enumerate(zip(xs, ys)):
        write_image(root / "low" / f"{i:03d}.png", x)
        write_image(root / "high" / f"{i:03d}.png", y)


class TestEval:
    def test_ground_truth_vs_itself(self, tmp_path):
        imgs = synthetic_paired("identity", 2, 1, 32, 32).x
        write_pairs(tmp_path / "test", imgs, imgs)
        assert main(["eval", str(tmp_path / "test"), "--out", str(tmp_path / "ev")]) == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "ev" / "eval.csv")))
        assert rows[-1]["name"] == "mean"
        assert float(rows[-1]["psnr_full"]) == float("inf") and float(rows[-1]["psnr_down"]) == float("inf")
        assert float(rows[-1]["msssim_full"]) == 1.0

    def test_unpaired_dir(self, tmp_path):
        write_image(tmp_path / "test" / "low" / "a.png", np.zeros((8, 8, 3)))
        write_image(tmp_path / "test" / "high" / "b.png", np.zeros((8, 8, 3)))
        assert main(["eval", str(tmp_path / "test")]) == EXIT_RUNTIME

    def test_matches_trainer_validation(self, tmp_path):
        cfg = load_config(overrides=TINY + ["trainer.epochs_per_stage=5", "trainer.low_height=32",
                                           "trainer.low_width=32"], env={})
        data = synthetic_paired("gamma", 4, 2, 32, 32)
        m = MetricsWriter(None)
        ckpt = train_supervised(data, cfg, None, m)
        save_checkpoint(ckpt, tmp_path / "s1.ckpt")
        write_pairs(tmp_path / "test", data.val_x, data.val_y)
        for run in ("a", "b"):
            assert main(["eval", str(tmp_path / "test"), "--checkpoint", str(tmp_path / "s1.ckpt"),
                         "--out", str(tmp_path / run)]) == EXIT_OK
        a = (tmp_path / "a" / "eval.csv").read_bytes()
        assert a == (tmp_path / "b" / "eval.csv").read_bytes()
        mean = list(csv.DictReader(open(tmp_path / "a" / "eval.csv")))[-1]
        trainer_psnr = [r["psnr_val"] for r in m.rows if r["psnr_val"] != ""][-1]
        assert abs(float(mean["psnr_full"]) - trainer_psnr) < 0.01


def test_toy_short(tmp_path):
    args = ["toy"] + sets("toy.iterations=20", "toy.checkpoints=[10, 20]", "toy.hidden=16", "toy.batch_size=32",
                          "toy.eval_samples=100", f"run.out_dir=\"{tmp_path.as_posix()}\"")
    assert main(args) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "toy" / "summary.csv")))
    assert [(r["variant"], r["iteration"]) for r in rows] == [
        ("wgan_gp", "10"), ("wgan_gp", "20"), ("adaswgan", "10"), ("adaswgan", "20")]
    assert (tmp_path / "toy" / "adaswgan_figure.png").exists()
    assert (tmp_path / "toy" / "run_manifest.json").exists()


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
