import struct

import numpy as np
import pytest

from irformer.blocks import init_params
from irformer.checkpoint import TrainState, load_checkpoint, save_checkpoint
from irformer.config import ModelConfig
from irformer.exceptions import CorruptCheckpointError
from irformer.optim import AdamWState, adamw_step


@pytest.fixture
def stepped():
    """Params and optimizer state after two real AdamW steps with random gradients."""
    cfg = ModelConfig(efm_scales=[2, 4], use_dfa=False)
    params = init_params(cfg, seed=3)
    opt = AdamWState.for_params(params, beta1=0.85, beta2=0.995, eps=1e-7, weight_decay=0.02)
    rng = np.random.default_rng(0)
    for _ in range(2):
        for t in params.values():
            t.grad = rng.normal(size=t.shape).astype(np.float32)
        adamw_step(params, opt, 1e-3)
    return cfg, params, opt, TrainState(step=2, epoch=1, seed=3)


def test_roundtrip_bit_exact(tmp_path, stepped):
    cfg, params, opt, ts = stepped
    save_checkpoint(tmp_path / "c.irfk", params, opt, ts, cfg)
    ck = load_checkpoint(tmp_path / "c.irfk")
    assert ck.config == cfg
    assert list(ck.params) == list(params)
    for k in params:
        assert ck.params[k].data.tobytes() == params[k].data.tobytes()
        assert ck.params[k].data.dtype == np.float32
        assert ck.opt_state.m[k].tobytes() == opt.m[k].tobytes()
        assert ck.opt_state.v[k].tobytes() == opt.v[k].tobytes()
    assert (ck.opt_state.step, ck.opt_state.beta1, ck.opt_state.beta2, ck.opt_state.eps,
            ck.opt_state.weight_decay) == (2, 0.85, 0.995, 1e-7, 0.02)
    assert ck.train_state == ts


def test_resave_is_byte_identical(tmp_path, stepped):
    cfg, params, opt, ts = stepped
    save_checkpoint(tmp_path / "a.irfk", params, opt, ts, cfg)
    ck = load_checkpoint(tmp_path / "a.irfk")
    save_checkpoint(tmp_path / "b.irfk", ck.params, ck.opt_state, ck.train_state, ck.config)
    assert (tmp_path / "a.irfk").read_bytes() == (tmp_path / "b.irfk").read_bytes()


def test_header(tmp_path, stepped):
    cfg, params, opt, ts = stepped
    save_checkpoint(tmp_path / "c.irfk", params, opt, ts, cfg)
    raw = (tmp_path / "c.irfk").read_bytes()
    assert raw[:4] == b"IRFK"
    assert struct.unpack("<I", raw[4:8]) == (1,)


@pytest.mark.parametrize("damage", ["magic", "version", "truncate", "trailing", "config"])
def test_corruption_rejected(tmp_path, stepped, damage):
    cfg, params, opt, ts = stepped
    path = tmp_path / "c.irfk"
    save_checkpoint(path, params, opt, ts, cfg)
    raw = bytearray(path.read_bytes())
    if damage == "magic":
        raw[:4] = b"NOPE"
    elif damage == "version":
        raw[4:8] = struct.pack("<I", 9)
    elif damage == "truncate":
        raw = raw[:-5]
    elif damage == "trailing":
        raw += b"\x00"
    elif damage == "config":
        text = b"model.use_dfa=False"
        i = raw.find(text)
        raw[i:i + len(text)] = b"model.use_dfa=True "
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_no_temp_file_left(tmp_path, stepped):
    cfg, params, opt, ts = stepped
    save_checkpoint(tmp_path / "c.irfk", params, opt, ts, cfg)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["c.irfk"]
