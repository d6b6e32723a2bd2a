"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractError
from .tensor import Tensor, record_branches


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    n_skipped: int
    tol: float
    n_refined: int = 0
    max_skip_fraction: float = 0.05

    @property
    def passed(self) -> bool:
        total = self.n_checked + self.n_skipped
        return bool(
            self.n_checked > 0
            and np.isfinite(self.max_rel_err)
            and self.max_rel_err <= self.tol
            and self.n_skipped <= self.max_skip_fraction * total
        )

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max_rel_err={self.max_rel_err:.3e} "
                f"max_abs_err={self.max_abs_err:.3e} coords={self.n_checked} "
                f"refined={self.n_refined} kink_skipped={self.n_skipped} tol={self.tol:.0e}")


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    eps: float = 1e-4,
    tol: float = 1e-4,
    *,
    name: str = "f",
    max_coords: int | Sequence[int | None] | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    refine: int = 2,
) -> GradCheckReport:
    """Compare ``f``'s tape gradient with (f(x+eps e) - f(x-eps e)) / 2 eps.

    ``f`` is called as ``f(*inputs)`` and must return a scalar tensor. Inputs
    are promoted to float64. ``max_coords`` limits how many coordinates of
    each input are perturbed (a seeded random subset); pass one value per
    input or a single value for all.

    A coordinate whose perturbed evaluations take a different branch of a
    piecewise op (ReLU, channel max, smooth-L1) than the unperturbed one
    straddles a kink, where the central difference does not estimate the
    derivative. Such coordinates are retried with eps/10, eps/100, ...
    (``refine`` times, counted in ``n_refined``); if the stencil still
    straddles, the coordinate is counted in ``n_skipped`` instead of being
    compared. The report fails if more than ``max_skip_fraction`` of
    coordinates had to be skipped.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    leaves = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]
    if max_coords is None or isinstance(max_coords, int):
        budgets = [max_coords] * len(leaves)
    else:
        budgets = list(max_coords)
        if len(budgets) != len(leaves):
            raise ContractError("max_coords needs one entry per input")

    with record_branches() as base_pattern:
        out = f(*leaves)
    if out.size != 1:
        raise ContractError(f"grad_check: {name} must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def evaluate() -> tuple[float, list]:
        frozen = [Tensor(leaf.data) for leaf in leaves]
        with record_branches() as pattern:
            value = f(*frozen).item()
        return value, pattern

    def same_branches(pattern) -> bool:
        return len(pattern) == len(base_pattern) and all(
            np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b
            for a, b in zip(pattern, base_pattern))

    rng = np.random.default_rng(seed)
    worst_rel = 0.0
    worst_abs = 0.0
    n_checked = n_skipped = n_refined = 0
    for leaf, grad, budget in zip(leaves, analytic, budgets):
        flat = leaf.data.reshape(-1)
        coords = np.arange(flat.size)
        if budget is not None and flat.size > budget:
            coords = np.sort(rng.choice(flat.size, size=budget, replace=False))
        gflat = grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            h = eps
            for attempt in range(refine + 1):
                flat[i] = orig + h
                fp, pp = evaluate()
                flat[i] = orig - h
                fm, pm = evaluate()
                flat[i] = orig
                smooth = same_branches(pp) and same_branches(pm)
                if smooth or attempt == refine:
                    break
                h /= 10
            if not smooth:
                n_skipped += 1
                continue
            n_refined += h != eps
            numeric = (fp - fm) / (2 * h)
            a = gflat[i]
            worst_rel = max(worst_rel, float(relative_error(np.array(a), np.array(numeric), floor)))
            worst_abs = max(worst_abs, abs(a - numeric))
            n_checked += 1
    return GradCheckReport(name, worst_rel, float(worst_abs), n_checked, n_skipped, tol, int(n_refined))


# ---------------------------------------------------------------------------
# block-level suite
# ---------------------------------------------------------------------------

def randomized_params(config, seed: int):
    """float64 parameters with every tensor (zero-initialized ones included) jittered."""
    from .blocks import init_params

    rng = np.random.default_rng(seed + 1)
    params = init_params(config, seed, dtype=np.float64)
    for t in params.values():
        t.data += rng.uniform(-0.3, 0.3, size=t.shape)
    return params


def block_checks(config=None, seed: int = 0, eps: float = 1e-4, tol: float = 1e-4,
                 size: int = 12, model_size: int = 16, param_coords: int = 32) -> list[GradCheckReport]:
    """Finite-difference check of every block, the full model and both loss terms.

    Blocks are checked on a 1 x C x size x size input with respect to every
    input coordinate and a seeded sample of ``param_coords`` coordinates per
    parameter tensor; block outputs are reduced by a fixed random projection.
    The full model is checked through the total loss on 1 x 3 x 16 x 16.
    """
    from . import blocks as B
    from . import tensor as T
    from .config import ModelConfig
    from .losses import smooth_l1, ssim_loss, total_loss

    if config is None:
        config = ModelConfig(efm_scales=[2, 4])
    rng = np.random.default_rng(seed)
    params = randomized_params(config, seed)
    c = config.base_channels
    heads = config.num_attention_heads

    cases = [
        ("cpa", "cpa1.", lambda p, x: B.cpa_forward(p, x, "cpa1")),
        ("efm", "efm.", lambda p, x: B.efm_forward(p, x, config.efm_scales, "efm")),
        ("dfa", "dfa.", lambda p, x: B.dfa_forward(p, x, "dfa")),
        ("epa", "epa.", lambda p, x: B.epa_forward(p, x, "epa")),
        ("transformer", "transformer.0.",
         lambda p, x: B.transformer_forward(p, x, heads, "transformer.0")),
    ]
    feat = Tensor(rng.uniform(-1, 1, size=(1, c, size, size)))
    reports = []
    for name, prefix, fn in cases:
        names = [k for k in params if k.startswith(prefix)]
        proj = Tensor(rng.uniform(-1, 1, size=feat.shape))

        def f(x, *ps, fn=fn, names=names, proj=proj):
            local = B.ParamStore(params)
            local.update(zip(names, ps))
            return T.sum_all(fn(local, x) * proj)

        reports.append(grad_check(f, [feat] + [params[k] for k in names], eps, tol, name=name,
                                  max_coords=[None] + [param_coords] * len(names), seed=seed))

    vis = Tensor(rng.uniform(0, 1, size=(1, 3, model_size, model_size)))
    target = Tensor(rng.uniform(0, 1, size=(1, 1, model_size, model_size)))
    names = list(params)

    def full(x, *ps):
        return total_loss(B.model_forward(B.ParamStore(zip(names, ps)), config, x), target)

    reports.append(grad_check(full, [vis] + [params[k] for k in names], eps, tol, name="model+total_loss",
                              max_coords=[None] + [max(param_coords // 4, 1)] * len(names), seed=seed))

    pred = Tensor(rng.uniform(0, 1, size=(1, 1, size, size)))
    ref = Tensor(rng.uniform(0, 1, size=(1, 1, size, size)))
    reports.append(grad_check(smooth_l1, [pred, ref], eps, tol, name="smooth_l1"))
    reports.append(grad_check(ssim_loss, [pred, ref], eps, tol, name="ssim_loss"))
    return reports
