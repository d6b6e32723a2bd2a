"""IRFormer building blocks and the assembled visible-to-infrared network.

Each block is a pure function ``block(params, x, prefix, ...)`` reading its
weights from a :class:`ParamStore` under a dotted prefix. All blocks keep
N, H and W; channel counts change only where noted.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .exceptions import ConfigError, DimensionError
from .tensor import Tensor


class ParamStore(dict):
    """Ordered name -> Tensor map of learnable parameters."""

    def count(self) -> int:
        return int(sum(t.size for t in self.values()))

    def zero_grad(self) -> None:
        for t in self.values():
            t.grad = None

    def astype(self, dtype) -> "ParamStore":
        return ParamStore((k, Tensor(v.data.astype(dtype), requires_grad=True)) for k, v in self.items())

    def copy(self) -> "ParamStore":
        return ParamStore((k, Tensor(v.data.copy(), requires_grad=True)) for k, v in self.items())

    def with_prefix(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        return ((k, v) for k, v in self.items() if k.startswith(prefix))


def _conv(p: ParamStore, name: str, x: Tensor, padding: int = 0, groups: int = 1) -> Tensor:
    return T.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], padding=padding, groups=groups)


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in store order."""
    config.validate()
    c = config.base_channels
    q = c // 4
    r = config.attn_reduce
    heads = config.num_attention_heads
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, cin, cout, k, groups=1):
        shapes[f"{name}.weight"] = (cout, cin // groups, k, k)
        shapes[f"{name}.bias"] = (cout,)

    def cpa(name):
        conv(f"{name}.rgb_conv", 3 * q, 3 * q, 3, groups=3)
        conv(f"{name}.fuse", c, c, 1)

    conv("stem", config.input_channels, c, 3)
    conv("branch_conv", c, c, 3)
    cpa("cpa1")
    for s in config.efm_scales:
        conv(f"efm.scale{s}.conv1", c, c, 3)
        conv(f"efm.scale{s}.conv2", c, 1, 3)
    conv("efm.out_conv", c, c, 3)
    conv("fuse", 3 * c, c, 1)
    if config.use_dfa:
        conv("dfa.attn_conv", 2, 1, 7)
    else:
        conv("dfa.replace_conv", c, c, 3)
    cpa("cpa2")
    if config.use_epa:
        conv("epa.expand", c, 2 * c, 1)
        conv("epa.ca.fc1", c, r, 1)
        conv("epa.ca.fc2", r, c, 1)
        conv("epa.pa.fc1", c, r, 1)
        conv("epa.pa.fc2", r, 1, 1)
        conv("epa.conv", c, c, 3)
        shapes["epa.scale"] = (1, c, 1, 1)
    for i in range(config.num_transformer_blocks):
        b = f"transformer.{i}"
        shapes[f"{b}.norm1.weight"] = (1, c, 1, 1)
        shapes[f"{b}.norm1.bias"] = (1, c, 1, 1)
        conv(f"{b}.qkv", c, 3 * c, 1)
        shapes[f"{b}.temperature"] = (1, heads, 1, 1)
        conv(f"{b}.proj", c, c, 1)
        shapes[f"{b}.norm2.weight"] = (1, c, 1, 1)
        shapes[f"{b}.norm2.bias"] = (1, c, 1, 1)
        conv(f"{b}.ffn1", c, config.ffn_hidden, 1)
        conv(f"{b}.ffn2", config.ffn_hidden, c, 1)
    conv("head", c, config.output_channels, 3)
    return shapes


def _zero_init(name: str) -> bool:
    # residual branches start closed so EPA and the transformer are identities
    return name == "epa.scale" or name.endswith((".proj.weight", ".ffn2.weight"))


def init_params(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    """Kaiming-uniform fan-in conv weights (a=sqrt(5), bound 1/sqrt(fan_in)); biases zero.

    EPA's residual scale and the transformer's output projections start at
    zero, attention temperatures at one, layer-norm scale/shift at one/zero.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for name, shape in param_shapes(config).items():
        if name.endswith(".temperature") or (".norm" in name and name.endswith(".weight")):
            data = np.ones(shape)
        elif name.endswith(".bias") or _zero_init(name):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(1.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        store[name] = Tensor(data.astype(dtype), requires_grad=True)
    return store


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------

def cpa_forward(p: ParamStore, x: Tensor, prefix: str = "cpa1") -> Tensor:
    """Color perception adapter.

    The channels are split into four equal groups: three stand for R-, G- and
    B-derived features and each passes through its own 3x3 conv + ReLU (one
    grouped conv); the fourth, the infrared latent group, is left untouched.
    A 1x1 conv blends the four groups back into C channels.
    """
    c = x.shape[1]
    if c % 4:
        raise ConfigError(f"CPA needs channels divisible by 4, got {c}")
    q = c // 4
    rgb, ir = T.channel_split(x, [3 * q, q])
    rgb = T.relu(_conv(p, f"{prefix}.rgb_conv", rgb, padding=1, groups=3))
    return _conv(p, f"{prefix}.fuse", T.channel_concat([rgb, ir]))


def efm_forward(p: ParamStore, x: Tensor, scales, prefix: str = "efm",
                trace: dict | None = None) -> Tensor:
    """Enhanced feature mapping: multi-scale single-channel enhancement maps.

    For every scale the input is average-pooled, convolved down to a single
    channel, resized back and squashed by a sigmoid. Each map gates ``x``
    per pixel; the gated copies are summed with ``x`` and a 3x3 conv follows.
    """
    n, c, h, w = x.shape
    for s in scales:
        if h % s or w % s:
            raise ConfigError(f"EFM scale {s} does not divide {h}x{w}")
    acc = x
    for s in scales:
        z = T.avg_pool2d(x, s)
        z = T.relu(_conv(p, f"{prefix}.scale{s}.conv1", z, padding=1))
        z = _conv(p, f"{prefix}.scale{s}.conv2", z, padding=1)
        m = T.sigmoid(T.resize_bilinear(z, h, w))
        if trace is not None:
            trace[f"efm_map_{s}"] = m
        acc = acc + x * m
    return _conv(p, f"{prefix}.out_conv", acc, padding=1)


def dfa_forward(p: ParamStore, x: Tensor, prefix: str = "dfa", trace: dict | None = None) -> Tensor:
    """Dynamic fusion aggregation: spatial attention from channel max/mean."""
    f = T.channel_concat([T.channel_max(x), T.channel_mean(x)])
    attn = T.sigmoid(_conv(p, f"{prefix}.attn_conv", f, padding=3))
    if trace is not None:
        trace["dfa_attention"] = attn
    return x * attn


def dfa_replacement_forward(p: ParamStore, x: Tensor, prefix: str = "dfa") -> Tensor:
    """Channel-preserving 3x3 conv used when DFA is ablated."""
    return _conv(p, f"{prefix}.replace_conv", x, padding=1)


def channel_attention(p: ParamStore, x: Tensor, prefix: str) -> Tensor:
    a = T.global_avg_pool(x)
    a = T.relu(_conv(p, f"{prefix}.fc1", a))
    return x * T.sigmoid(_conv(p, f"{prefix}.fc2", a))


def pixel_attention(p: ParamStore, x: Tensor, prefix: str) -> Tensor:
    a = T.relu(_conv(p, f"{prefix}.fc1", x))
    return x * T.sigmoid(_conv(p, f"{prefix}.fc2", a))


def simple_gate(x: Tensor) -> Tensor:
    c = x.shape[1]
    if c % 2:
        raise ConfigError(f"simple gate needs an even channel count, got {c}")
    x1, x2 = T.channel_split(x, [c // 2, c // 2])
    return x1 * x2


def epa_forward(p: ParamStore, x: Tensor, prefix: str = "epa") -> Tensor:
    """Enhanced perception attention (residual, gated, CA then PA)."""
    c = x.shape[1]
    if c % 2:
        raise ConfigError(f"EPA needs an even channel count, got {c}")
    y = simple_gate(_conv(p, f"{prefix}.expand", x))
    y = channel_attention(p, y, f"{prefix}.ca")
    y = pixel_attention(p, y, f"{prefix}.pa")
    y = _conv(p, f"{prefix}.conv", y, padding=1)
    return x + y * p[f"{prefix}.scale"]


def layer_norm(p: ParamStore, x: Tensor, prefix: str) -> Tensor:
    return T.layer_norm_channels(x) * p[f"{prefix}.weight"] + p[f"{prefix}.bias"]


def channel_attention_mixer(p: ParamStore, x: Tensor, heads: int, prefix: str,
                            trace: dict | None = None) -> Tensor:
    """Transposed (C x C per head) self-attention over a feature map."""
    n, c, h, w = x.shape
    if c % heads:
        raise ConfigError(f"{heads} heads do not divide {c} channels")
    d = c // heads
    qkv = _conv(p, f"{prefix}.qkv", x)
    q, k, v = (T.reshape(t, (n, heads, d, h * w)) for t in T.channel_split(qkv, [c, c, c]))
    q = T.l2_normalize_lastdim(q)
    k = T.l2_normalize_lastdim(k)
    logits = T.matmul(q, T.transpose_last(k)) * p[f"{prefix}.temperature"]
    attn = T.softmax_lastdim(logits)
    if trace is not None:
        trace.setdefault("attention", []).append(attn)
    out = T.reshape(T.matmul(attn, v), (n, c, h, w))
    return _conv(p, f"{prefix}.proj", out)


def transformer_forward(p: ParamStore, x: Tensor, heads: int, prefix: str = "transformer.0",
                        trace: dict | None = None) -> Tensor:
    x = x + channel_attention_mixer(p, layer_norm(p, x, f"{prefix}.norm1"), heads, prefix, trace)
    y = T.relu(_conv(p, f"{prefix}.ffn1", layer_norm(p, x, f"{prefix}.norm2")))
    return x + _conv(p, f"{prefix}.ffn2", y)


def check_input(config: ModelConfig, vis: Tensor) -> None:
    if vis.ndim != 4 or vis.shape[1] != config.input_channels:
        raise DimensionError(f"expected N x {config.input_channels} x H x W input, got {vis.shape}")
    config.validate(resolution=vis.shape[2:])


def model_forward(p: ParamStore, config: ModelConfig, vis: Tensor, trace: dict | None = None) -> Tensor:
    """Visible N x 3 x H x W in [0, 1] -> infrared N x 1 x H x W in (0, 1)."""
    check_input(config, vis)
    x = _conv(p, "stem", vis, padding=1)
    branches = [
        _conv(p, "branch_conv", x, padding=1),
        cpa_forward(p, x, "cpa1"),
        efm_forward(p, x, config.efm_scales, "efm", trace),
    ]
    x = _conv(p, "fuse", T.channel_concat(branches))
    x = dfa_forward(p, x, "dfa", trace) if config.use_dfa else dfa_replacement_forward(p, x, "dfa")
    x = cpa_forward(p, x, "cpa2")
    if config.use_epa:
        x = epa_forward(p, x, "epa")
    for i in range(config.num_transformer_blocks):
        x = transformer_forward(p, x, config.num_attention_heads, f"transformer.{i}", trace)
    return T.sigmoid(_conv(p, "head", x, padding=1))
