"""Analytic parameter and multiply-accumulate counts for the IRFormer graph.

The counts are derived from the architecture description alone, not from a
live parameter store, so comparing the two is a meaningful cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .config import ModelConfig

# published budget of the full-size model, used only for the printed ratios
REFERENCE_PARAMS_M = 0.04
REFERENCE_MACS_G = 2.41


@dataclass
class BlockBudget:
    params: int = 0
    macs: int = 0


@dataclass
class BudgetReport:
    blocks: dict[str, BlockBudget] = field(default_factory=dict)
    height: int = 0
    width: int = 0

    @property
    def params(self) -> int:
        return sum(b.params for b in self.blocks.values())

    @property
    def macs(self) -> int:
        return sum(b.macs for b in self.blocks.values())

    def lines(self) -> list[str]:
        out = [f"{'block':<16}{'params':>10}{'MACs':>16}"]
        for name, b in self.blocks.items():
            out.append(f"{name:<16}{b.params:>10}{b.macs:>16}")
        out.append(f"{'total':<16}{self.params:>10}{self.macs:>16}")
        out.append(f"params: {self.params / 1e6:.4f} M (reference {REFERENCE_PARAMS_M} M, ratio {self.params / 1e6 / REFERENCE_PARAMS_M:.3f})")
        out.append(f"MACs @ {self.height}x{self.width}: {self.macs / 1e9:.4f} G "
                   f"(reference {REFERENCE_MACS_G} G, ratio {self.macs / 1e9 / REFERENCE_MACS_G:.3f})")
        return out


def conv_cost(cin: int, cout: int, k: int, h_out: int, w_out: int, n: int = 1,
              groups: int = 1, bias: bool = True) -> tuple[int, int]:
    """(params, MACs) of one convolution layer."""
    params = cout * (cin // groups) * k * k + (cout if bias else 0)
    macs = cout * (cin // groups) * k * k * h_out * w_out * n
    return params, macs


def count_params_and_macs(config: ModelConfig, h: int, w: int, n: int = 1) -> BudgetReport:
    config.validate(resolution=(h, w))
    c = config.base_channels
    q = c // 4
    r = config.attn_reduce
    report = BudgetReport(height=h, width=w)

    def add(block, cost):
        b = report.blocks.setdefault(block, BlockBudget())
        b.params += cost[0]
        b.macs += cost[1]

    def cpa(block):
        add(block, conv_cost(3 * q, 3 * q, 3, h, w, n, groups=3))
        add(block, conv_cost(c, c, 1, h, w, n))

    add("stem", conv_cost(config.input_channels, c, 3, h, w, n))
    add("branch_conv", conv_cost(c, c, 3, h, w, n))
    cpa("cpa1")
    for s in config.efm_scales:
        add("efm", conv_cost(c, c, 3, h // s, w // s, n))
        add("efm", conv_cost(c, 1, 3, h // s, w // s, n))
    add("efm", conv_cost(c, c, 3, h, w, n))
    add("fuse", conv_cost(3 * c, c, 1, h, w, n))
    if config.use_dfa:
        add("dfa", conv_cost(2, 1, 7, h, w, n))
    else:
        add("dfa", conv_cost(c, c, 3, h, w, n))
    cpa("cpa2")
    if config.use_epa:
        add("epa", conv_cost(c, 2 * c, 1, h, w, n))
        add("epa", conv_cost(c, r, 1, 1, 1, n))
        add("epa", conv_cost(r, c, 1, 1, 1, n))
        add("epa", conv_cost(c, r, 1, h, w, n))
        add("epa", conv_cost(r, 1, 1, h, w, n))
        add("epa", conv_cost(c, c, 3, h, w, n))
        add("epa", (c, 0))
    heads = config.num_attention_heads
    d = c // heads
    for i in range(config.num_transformer_blocks):
        block = f"transformer.{i}"
        add(block, (4 * c, 0))  # two layer norms, scale + shift each
        add(block, conv_cost(c, 3 * c, 1, h, w, n))
        add(block, (heads, 0))
        # q @ k^T and attn @ v, each heads * d * d * (h * w)
        add(block, (0, 2 * n * heads * d * d * h * w))
        add(block, conv_cost(c, c, 1, h, w, n))
        add(block, conv_cost(c, config.ffn_hidden, 1, h, w, n))
        add(block, conv_cost(config.ffn_hidden, c, 1, h, w, n))
    add("head", conv_cost(c, config.output_channels, 3, h, w, n))
    return report
