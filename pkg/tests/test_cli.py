import csv
import subprocess
import sys

import numpy as np
import pytest

from irformer import cli
from irformer.blocks import init_params
from irformer.checkpoint import TrainState, load_checkpoint, save_checkpoint
from irformer.config import ModelConfig
from irformer.gradcheck import GradCheckReport
from irformer.optim import AdamWState

SMALL = ["--set", "data.resolution=16", "--set", "model.efm_scales=2,4"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert run("synth", 3, root, "--size", 24, "--seed", 7) == 0
    return root


def train_args(out, *extra):
    return ["train", *SMALL, "--set", f"out.dir={out}", *extra]


def test_analyze(capsys):
    assert run("analyze") == 0
    out = capsys.readouterr().out
    assert "total" in out and "live ParamStore count: 5562 (match)" in out
    assert "MACs @ 256x256" in out and "ratio" in out
    assert run("analyze", "--resolution", 128) == 0
    assert "live ParamStore count: 5562 (match)" in capsys.readouterr().out


def test_usage_errors(tmp_path):
    assert run("analyze", "--set", "bogus.key=1") == 1
    assert run("analyze", "--set", "noequals") == 1
    assert run("train", "--set", f"out.dir={tmp_path}") == 1  # no data.root and no --synthetic
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("train", "--epochs", "many")
    assert exc.value.code == 1


def test_runtime_errors(tmp_path):
    assert run("eval", tmp_path / "missing.irfk", tmp_path) == 2
    assert run("train", *SMALL, "--set", f"data.root={tmp_path}", "--set", f"out.dir={tmp_path / 'o'}") == 2


def test_train_eval_infer(tmp_path, dataset, capsys):
    out = tmp_path / "run"
    assert run(*train_args(out, "--set", f"data.root={dataset}", "--epochs", 2)) == 0
    log = (out / "loss_log.csv").read_text().splitlines()
    assert log[0] == "step,epoch,lr,loss,smooth_l1,ssim_term" and len(log) == 7
    assert (out / "final.irfk").exists() and (out / "config.txt").exists()

    metrics = tmp_path / "m.csv"
    assert run("eval", out / "final.irfk", dataset, *SMALL, "--out", metrics) == 0
    rows = list(csv.reader(metrics.open()))
    assert rows[0] == ["image_id", "psnr_db", "ssim"]
    assert [r[0] for r in rows[1:]] == ["synth_0000", "synth_0001", "synth_0002", "mean"]
    vals = np.array([[float(r[1]), float(r[2])] for r in rows[1:4]])
    assert float(rows[4][1]) == pytest.approx(vals[:, 0].mean(), abs=1e-3)

    capsys.readouterr()
    assert run("eval", out / "final.irfk", "--synthetic", 2, *SMALL) == 0
    assert capsys.readouterr().out.startswith("image_id,psnr_db,ssim\n")

    pred_dir = tmp_path / "pred"
    assert run("infer", out / "final.irfk", dataset / "vis", pred_dir, *SMALL) == 0
    assert sorted(p.name for p in pred_dir.iterdir()) == ["synth_0000.png", "synth_0001.png", "synth_0002.png"]
    from PIL import Image
    with Image.open(pred_dir / "synth_0000.png") as im:
        assert im.mode == "L" and im.size == (16, 16)
    assert run("infer", out / "final.irfk", dataset / "vis" / "synth_0001.png", tmp_path / "one", *SMALL) == 0
    assert (tmp_path / "one" / "synth_0001.png").exists()


def test_synthetic_training_and_ablation_flags(tmp_path):
    for flags in (["--no-epa"], ["--no-dfa"], ["--no-epa", "--no-dfa"], ["--literal-eq7"]):
        out = tmp_path / "-".join(f.strip("-") for f in flags)
        assert run(*train_args(out, "--synthetic", 2, "--epochs", 1, *flags)) == 0
        cfg = load_checkpoint(out / "final.irfk").config
        assert cfg.use_epa == ("--no-epa" not in flags)
        assert cfg.use_dfa == ("--no-dfa" not in flags)
    assert "loss.literal_eq7 = true" in (tmp_path / "literal-eq7" / "config.txt").read_text()


def test_config_file_and_override_precedence(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("train.epochs = 3\ndata.synthetic = 2\ndata.resolution = 16\nmodel.efm_scales = 2,4\n")
    out = tmp_path / "o"
    assert run("train", "--config", cfgfile, "--set", "train.epochs=1", "--set", f"out.dir={out}") == 0
    assert len((out / "loss_log.csv").read_text().splitlines()) == 3


def test_combined_roots_in_listed_order(tmp_path, dataset):
    other = tmp_path / "other"
    assert run("synth", 2, other, "--size", 16, "--seed", 1) == 0
    out = tmp_path / "o"
    assert run(*train_args(out, "--set", f"data.root={other},{dataset}", "--epochs", 1,
                           "--set", f"data.val_root={dataset}")) == 0
    assert len((out / "loss_log.csv").read_text().splitlines()) == 1 + 5
    assert (out / "val_metrics.csv").read_text().startswith("image_id,psnr_db,ssim\n")


def test_zero_epochs_checkpoint_is_init(tmp_path):
    out = tmp_path / "o"
    assert run(*train_args(out, "--synthetic", 2, "--epochs", 0, "--set", "train.seed=5")) == 0
    cfg = ModelConfig(efm_scales=[2, 4])
    p = init_params(cfg, seed=5)
    save_checkpoint(tmp_path / "ref.irfk", p, AdamWState.for_params(p), TrainState(0, 0, 5), cfg)
    assert (out / "final.irfk").read_bytes() == (tmp_path / "ref.irfk").read_bytes()


def test_cli_runs_are_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run(*train_args(tmp_path / d, "--synthetic", 2, "--epochs", 2)) == 0
    assert (tmp_path / "a" / "loss_log.csv").read_bytes() == (tmp_path / "b" / "loss_log.csv").read_bytes()
    assert (tmp_path / "a" / "final.irfk").read_bytes() == (tmp_path / "b" / "final.irfk").read_bytes()


def test_cli_resume(tmp_path):
    common = ["--synthetic", 2, "--epochs", 10, "--set", "train.checkpoint_every=1"]
    assert run(*train_args(tmp_path / "full", *common)) == 0
    assert run(*train_args(tmp_path / "res", *common, "--resume", tmp_path / "full" / "epoch_0005.irfk")) == 0
    full = (tmp_path / "full" / "loss_log.csv").read_text().splitlines()
    res = (tmp_path / "res" / "loss_log.csv").read_text().splitlines()
    assert len(res) == 11
    assert res[1:] == full[-10:]
    assert run(*train_args(tmp_path / "bad", "--synthetic", 2, "--no-dfa", "--resume",
                           tmp_path / "full" / "epoch_0005.irfk")) == 1


def test_gradcheck_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setattr(cli, "block_checks", lambda *a, **k: [GradCheckReport("cpa", 1e-2, 1.0, 5, 0, 1e-4)])
    assert run("gradcheck") == 2
    out = capsys.readouterr().out
    assert "FAIL cpa" in out and out.rstrip().splitlines()[-1].startswith("FAIL all")


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "irformer.cli", "analyze", "--resolution", "64"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "MACs @ 64x64" in proc.stdout
