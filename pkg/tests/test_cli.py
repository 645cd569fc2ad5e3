import hashlib
from pathlib import Path

import numpy as np
import pytest

from sepsiq.cli import main
from sepsiq.oracle import TabularMDP, save_mdp
from sepsiq.train import TrainConfig


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small end-to-end run shared by the CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data_dir = root / "d"
    run_dir = root / "run"
    assert run("gen-data", "--seed", "7", "--patients", "60", "--out", str(data_dir)) == 0

    config = TrainConfig(
        total_steps=300,
        batch_size=32,
        learning_rate=1e-3,
        target_sync_period=100,
        log_every=100,
        seed=7,
    )
    config_path = root / "c.cfg"
    config_path.write_text(config.to_text())
    assert (
        run(
            "train",
            "--config", str(config_path),
            "--data", str(data_dir / "train.csv"),
            "--val", str(data_dir / "validation.csv"),
            "--bins", str(data_dir / "bins.txt"),
            "--out", str(run_dir),
        )
        == 0
    )
    assert (
        run(
            "eval",
            "--checkpoint", str(run_dir / "final.ckpt"),
            "--data", str(data_dir / "test.csv"),
            "--out", str(run_dir),
        )
        == 0
    )
    return root, data_dir, run_dir


class TestGenData:
    def test_writes_expected_files(self, pipeline):
        _, data_dir, _ = pipeline
        names = sorted(p.name for p in data_dir.iterdir())
        assert names == [
            "bins.txt",
            "sim_params.cfg",
            "test.csv",
            "train.csv",
            "validation.csv",
        ]

    def test_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("gen-data", "--seed", "3", "--patients", "40", "--out", str(a)) == 0
        assert run("gen-data", "--seed", "3", "--patients", "40", "--out", str(b)) == 0
        for name in ("train.csv", "validation.csv", "test.csv", "bins.txt"):
            assert sha256(a / name) == sha256(b / name), name

    def test_different_seed_different_data(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run("gen-data", "--seed", "3", "--patients", "40", "--out", str(a))
        run("gen-data", "--seed", "4", "--patients", "40", "--out", str(b))
        assert sha256(a / "train.csv") != sha256(b / "train.csv")


class TestTrainEval:
    def test_train_writes_checkpoint_and_metrics(self, pipeline):
        _, _, run_dir = pipeline
        assert (run_dir / "final.ckpt").exists()
        assert (run_dir / "metrics.csv").exists()
        header = (run_dir / "metrics.csv").read_text().splitlines()[0]
        assert header.startswith("step,total_loss")

    def test_eval_emits_six_histograms_and_four_curves(self, pipeline):
        _, _, run_dir = pipeline
        hists = sorted(p.name for p in run_dir.glob("hist_*.csv"))
        curves = sorted(p.name for p in run_dir.glob("curve_*.csv"))
        assert hists == [
            "hist_high_model.csv",
            "hist_high_physician.csv",
            "hist_low_model.csv",
            "hist_low_physician.csv",
            "hist_medium_model.csv",
            "hist_medium_physician.csv",
        ]
        assert curves == [
            "curve_iv_high.csv",
            "curve_iv_medium.csv",
            "curve_vp_high.csv",
            "curve_vp_medium.csv",
        ]

    def test_checkpoint_carries_bins_and_stats(self, pipeline):
        from sepsiq.checkpoint import load_checkpoint

        _, data_dir, run_dir = pipeline
        ckpt = load_checkpoint(run_dir / "final.ckpt")
        assert ckpt.binners is not None
        assert ckpt.norm_stats.means.shape == (48,)
        parsed = TrainConfig.from_text(ckpt.config_text)
        assert parsed.total_steps == 300


class TestPlot:
    def test_renders_svg_per_csv(self, pipeline, tmp_path):
        _, _, run_dir = pipeline
        out = tmp_path / "plots"
        assert run("plot", "--data", str(run_dir), "--out", str(out)) == 0
        svgs = sorted(p.name for p in out.glob("*.svg"))
        assert len(svgs) == 10
        assert "hist_low_physician.svg" in svgs
        assert "curve_vp_medium.svg" in svgs
        content = (out / "hist_low_physician.svg").read_text()
        assert "<svg" in content

    def test_plot_without_inputs_fails_cleanly(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = run("plot", "--data", str(empty), "--out", str(tmp_path / "o"))
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestOracleCheck:
    @pytest.fixture(scope="class")
    def fixture_path(self, tmp_path_factory):
        rng = np.random.default_rng(2)
        transitions = rng.random((3, 2, 3))
        transitions /= transitions.sum(axis=2, keepdims=True)
        rewards = rng.uniform(0.0, 1.0, size=(3, 2))
        mdp = TabularMDP(transitions, rewards, np.zeros(3, dtype=bool), gamma=0.5)
        path = tmp_path_factory.mktemp("fixtures") / "tiny.mdp"
        save_mdp(path, mdp)
        return path

    def test_pass_and_fail_exit_codes(self, fixture_path, capsys):
        argv = [
            "oracle-check",
            "--fixture", str(fixture_path),
            "--transitions", "1500",
            "--steps", "4000",
            "--seed", "1",
        ]
        assert main(argv + ["--tolerance", "0.5"]) == 0
        assert "PASS" in capsys.readouterr().out
        assert main(argv + ["--tolerance", "1e-9"]) == 1
        assert "FAIL" in capsys.readouterr().out


class TestErrorHandling:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data", "--seed", "1", "--patients", "5", "--frob", "x"])
        assert exc.value.code == 2

    def test_missing_file_exits_1_with_one_line_error(self, tmp_path, capsys):
        code = main(
            [
                "train",
                "--config", str(tmp_path / "nope.cfg"),
                "--data", str(tmp_path / "nope.csv"),
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert len(err.strip().splitlines()) == 1

    def test_invalid_config_exits_1(self, tmp_path, capsys):
        config_path = tmp_path / "bad.cfg"
        config_path.write_text("gamma = 2.0\n")
        data_path = tmp_path / "d.csv"
        code = main(
            [
                "gen-data", "--seed", "1", "--patients", "5",
                "--out", str(tmp_path / "d"),
            ]
        )
        assert code == 0
        code = main(
            [
                "train",
                "--config", str(config_path),
                "--data", str(tmp_path / "d" / "train.csv"),
                "--out", str(tmp_path / "out"),
            ]
        )
        del data_path
        assert code == 1
        assert "error:" in capsys.readouterr().err
