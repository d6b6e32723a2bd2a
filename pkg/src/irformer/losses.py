"""Training objective (smooth L1 + SSIM) and evaluation metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import DimensionError
from .tensor import Tensor, _make


@dataclass(frozen=True)
class SsimParams:
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    def window(self) -> np.ndarray:
        """Normalized 2-D Gaussian window (float64)."""
        r = np.arange(self.window_size, dtype=np.float64) - (self.window_size - 1) / 2
        g = np.exp(-(r ** 2) / (2 * self.sigma ** 2))
        g /= g.sum()
        return np.outer(g, g)


DEFAULT_SSIM = SsimParams()


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes differ {a.shape} vs {b.shape}")


def smooth_l1(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of 0.5 r^2 (|r| < 1) or |r| - 0.5 over the residual r = pred - target."""
    _same_shape(pred, target, "smooth_l1")
    r = pred.data - target.data
    a = np.abs(r)
    inside = a < 1
    T.log_branch(inside)
    out = np.asarray(np.where(inside, 0.5 * r * r, a - 0.5).mean(dtype=np.float64), dtype=pred.dtype)
    n = r.size

    def backward(g):
        dr = np.where(inside, r, np.sign(r)) * (g / n)
        return dr, -dr

    return _make(out.reshape(()), (pred, target), backward, "smooth_l1")


def _window_tensor(p: SsimParams, channels: int, dtype) -> Tensor:
    w = np.broadcast_to(p.window(), (channels, 1, p.window_size, p.window_size))
    return Tensor(w.astype(dtype))


def ssim_map(x: Tensor, y: Tensor, p: SsimParams = DEFAULT_SSIM) -> Tensor:
    """Per-position SSIM over the valid (unpadded) window placements."""
    _same_shape(x, y, "ssim")
    if x.ndim != 4:
        raise DimensionError(f"ssim expects N x C x H x W, got {x.shape}")
    n, c, h, w = x.shape
    if h < p.window_size or w < p.window_size:
        raise DimensionError(f"image {h}x{w} smaller than the {p.window_size}x{p.window_size} SSIM window")
    win = _window_tensor(p, c, x.dtype)

    def blur(t):
        return T.conv2d(t, win, groups=c)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    num = (mu_xy * 2.0 + p.c1) * (cov * 2.0 + p.c2)
    den = (mu_xx + mu_yy + p.c1) * (var_x + var_y + p.c2)
    return num / den


def ssim(x: Tensor, y: Tensor, p: SsimParams = DEFAULT_SSIM) -> Tensor:
    return T.mean_all(ssim_map(x, y, p))


def ssim_loss(x: Tensor, y: Tensor, p: SsimParams = DEFAULT_SSIM) -> Tensor:
    return 1.0 - ssim(x, y, p)


def loss_terms(pred: Tensor, target: Tensor, p: SsimParams = DEFAULT_SSIM,
               literal_eq7: bool = False) -> dict[str, Tensor]:
    """Return ``total``, ``smooth_l1`` and ``ssim_term``.

    By default the structural term is ``1 - SSIM`` so that lowering the total
    raises similarity. ``literal_eq7=True`` adds SSIM itself instead.
    """
    l1 = smooth_l1(pred, target)
    term = ssim(pred, target, p) if literal_eq7 else ssim_loss(pred, target, p)
    return {"total": l1 + term, "smooth_l1": l1, "ssim_term": term}


def total_loss(pred: Tensor, target: Tensor, p: SsimParams = DEFAULT_SSIM,
               literal_eq7: bool = False) -> Tensor:
    return loss_terms(pred, target, p, literal_eq7)["total"]


def psnr(x, y, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    a = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    b = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / mse)


def format_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"
