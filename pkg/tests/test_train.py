import numpy as np
import pytest

from irformer.blocks import init_params
from irformer.checkpoint import TrainState, load_checkpoint, save_checkpoint
from irformer.config import ModelConfig
from irformer.data import ImagePair, make_synthetic_pairs
from irformer.exceptions import ConfigError, NumericalError
from irformer.optim import AdamWState
from irformer.tensor import Tensor
from irformer.train import LOG_HEADER, TrainSettings, evaluate, make_batches, predict, train

CFG = ModelConfig(efm_scales=[2, 4])


@pytest.fixture(scope="module")
def pairs():
    return make_synthetic_pairs(3, 16, seed=2)


def read_log(path):
    lines = path.read_text().splitlines()
    assert lines[0] == LOG_HEADER
    return lines[1:]


def test_log_rows_and_checkpoints(tmp_path, pairs):
    res = train(pairs, CFG, TrainSettings(epochs=2, checkpoint_every=1), out_dir=tmp_path)
    rows = read_log(tmp_path / "loss_log.csv")
    assert rows == res.history
    assert len(rows) == 6
    steps = [int(r.split(",")[0]) for r in rows]
    epochs = [int(r.split(",")[1]) for r in rows]
    assert steps == [1, 2, 3, 4, 5, 6] and epochs == [1, 1, 1, 2, 2, 2]
    assert float(rows[0].split(",")[2]) == 2e-4
    for r in rows:
        step, epoch, lr, loss, l1, term = r.split(",")
        assert float(loss) == pytest.approx(float(l1) + float(term), rel=1e-6)
    for name in ["last.irfk", "final.irfk", "epoch_0001.irfk", "epoch_0002.irfk"]:
        assert (tmp_path / name).exists()
    ck = load_checkpoint(tmp_path / "epoch_0001.irfk")
    assert (ck.train_state.step, ck.train_state.epoch) == (3, 1)


def test_training_reduces_loss(pairs):
    res = train(pairs, CFG, TrainSettings(epochs=30, lr=2e-3))
    first = np.mean([float(r.split(",")[3]) for r in res.history[:3]])
    last = np.mean([float(r.split(",")[3]) for r in res.history[-3:]])
    assert last < 0.7 * first


def test_determinism(tmp_path, pairs):
    for d in ("a", "b"):
        train(pairs, CFG, TrainSettings(epochs=2, seed=4), out_dir=tmp_path / d)
    assert (tmp_path / "a" / "loss_log.csv").read_bytes() == (tmp_path / "b" / "loss_log.csv").read_bytes()
    assert (tmp_path / "a" / "final.irfk").read_bytes() == (tmp_path / "b" / "final.irfk").read_bytes()


def test_zero_epochs_saves_init(tmp_path, pairs):
    train(pairs, CFG, TrainSettings(epochs=0, seed=9), out_dir=tmp_path / "run")
    p = init_params(CFG, seed=9)
    save_checkpoint(tmp_path / "ref.irfk", p, AdamWState.for_params(p), TrainState(0, 0, 9), CFG)
    assert (tmp_path / "run" / "final.irfk").read_bytes() == (tmp_path / "ref.irfk").read_bytes()
    assert read_log(tmp_path / "run" / "loss_log.csv") == []


def test_resume_matches_uninterrupted(tmp_path, pairs):
    settings = TrainSettings(epochs=8, checkpoint_every=1, seed=1)
    full = train(pairs, CFG, settings, out_dir=tmp_path / "full")
    ck = load_checkpoint(tmp_path / "full" / "epoch_0004.irfk")
    resumed = train(pairs, CFG, settings, out_dir=tmp_path / "resumed", resume=ck)
    assert len(resumed.history) == 12
    assert resumed.history == full.history[12:]
    assert ((tmp_path / "full" / "final.irfk").read_bytes()
            == (tmp_path / "resumed" / "final.irfk").read_bytes())


def test_resume_off_boundary_rejected(tmp_path, pairs):
    train(pairs, CFG, TrainSettings(epochs=1), out_dir=tmp_path)
    ck = load_checkpoint(tmp_path / "final.irfk")
    with pytest.raises(ConfigError):
        train(pairs[:2], CFG, TrainSettings(epochs=3), resume=ck)


def test_nan_aborts_with_step(pairs):
    bad = list(pairs)
    vis = pairs[1].vis.data.copy()
    vis[0, 0, 0] = np.nan
    bad[1] = ImagePair(Tensor(vis), pairs[1].ir, "bad")
    with pytest.raises(NumericalError, match=r"step 2 \(lr="):
        train(bad, CFG, TrainSettings(epochs=1))


def test_batches_keep_order(pairs):
    batches = make_batches(pairs, 2)
    assert [b[0].shape[0] for b in batches] == [2, 1]
    np.testing.assert_array_equal(batches[1][0].data[0], pairs[2].vis.data)
    with pytest.raises(ConfigError):
        make_batches(pairs, 0)


def test_batch_size_two_runs(pairs):
    res = train(pairs, CFG, TrainSettings(epochs=1, batch_size=2))
    assert res.train_state.step == 2


def test_predict_and_evaluate(pairs):
    p = init_params(CFG, 0)
    out = predict(p, CFG, pairs[0].batch()[0])
    assert out.shape == (1, 1, 16, 16)
    assert all(t.grad is None for t in p.values())
    rows = evaluate(p, CFG, pairs)
    assert [r["image_id"] for r in rows] == [q.id for q in pairs]
    for r in rows:
        assert np.isfinite(r["psnr_db"]) and -1 <= r["ssim"] <= 1 and r["loss"] >= 0


def test_literal_loss_flag_changes_log(pairs):
    a = train(pairs, CFG, TrainSettings(epochs=1))
    b = train(pairs, CFG, TrainSettings(epochs=1, literal_eq7=True))
    ta = float(a.history[0].split(",")[5])
    tb = float(b.history[0].split(",")[5])
    assert ta == pytest.approx(1.0 - tb, abs=1e-6)
