import itertools

import numpy as np
import pytest

from irformer import blocks as B
from irformer import tensor as T
from irformer.budget import REFERENCE_MACS_G, REFERENCE_PARAMS_M, conv_cost, count_params_and_macs
from irformer.config import ModelConfig
from irformer.tensor import Tensor


def test_single_conv_closed_form():
    assert conv_cost(3, 8, 1, 4, 4) == (32, 384)


def test_grouped_conv_cost():
    params, macs = conv_cost(6, 6, 3, 5, 5, groups=3, bias=False)
    assert params == 6 * 2 * 9
    assert macs == 6 * 2 * 9 * 25


def test_params_independent_of_resolution():
    cfg = ModelConfig()
    assert count_params_and_macs(cfg, 128, 128).params == count_params_and_macs(cfg, 256, 256).params


@pytest.mark.parametrize("use_epa,use_dfa,blocks,heads", [
    (e, d, nb, hd) for (e, d), nb, hd in itertools.product(
        itertools.product([True, False], repeat=2), [0, 1, 2], [1, 2, 4])
])
def test_params_match_live_store(use_epa, use_dfa, blocks, heads):
    cfg = ModelConfig(use_epa=use_epa, use_dfa=use_dfa, num_transformer_blocks=blocks,
                      num_attention_heads=heads)
    assert count_params_and_macs(cfg, 64, 64).params == B.init_params(cfg, seed=0).count()


def test_default_budget():
    rep = count_params_and_macs(ModelConfig(), 256, 256)
    assert rep.params <= 100_000
    assert rep.params == 5562
    lines = "\n".join(rep.lines())
    assert f"{REFERENCE_PARAMS_M}" in lines and f"{REFERENCE_MACS_G}" in lines


@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig(use_epa=False, num_attention_heads=4),
                                 ModelConfig(use_dfa=False, base_channels=12, num_transformer_blocks=2)])
def test_macs_match_instrumented_forward(cfg, monkeypatch):
    """Count MACs by intercepting every conv2d and matmul of a real forward pass."""
    counted = {"macs": 0}
    real_conv, real_matmul = T.conv2d, T.matmul

    def conv(x, weight, bias=None, stride=1, padding=0, groups=1):
        out = real_conv(x, weight, bias, stride, padding, groups)
        cout, cin_g, kh, kw = weight.shape
        counted["macs"] += out.data.shape[0] * cout * cin_g * kh * kw * out.data.shape[2] * out.data.shape[3]
        return out

    def matmul(a, b):
        out = real_matmul(a, b)
        counted["macs"] += int(np.prod(out.shape)) * a.shape[-1]
        return out

    monkeypatch.setattr(T, "conv2d", conv)
    monkeypatch.setattr(T, "matmul", matmul)
    h, w = 32, 40
    B.model_forward(B.init_params(cfg, 0), cfg, Tensor(np.zeros((1, 3, h, w), dtype=np.float32)))
    assert counted["macs"] == count_params_and_macs(cfg, h, w).macs
