"""Dense N-d tensors with a reverse-mode gradient tape.

Only the operations the IRFormer graph needs are provided. Image tensors use
the N x C x H x W layout. Every op is a pure function returning a fresh
``Tensor``; when any input requires a gradient the result records a backward
closure and its parents, which ``Tensor.backward`` replays in reverse
topological order.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigError, ContractError, DimensionError

DEFAULT_DTYPE = np.float32

# When a list, every piecewise op appends the branch it took (see record_branches).
_branch_log: list | None = None


class record_branches:
    """Context manager collecting the branch decisions of piecewise ops.

    ReLU masks, channel-max argmax indices and similar selections are logged
    as bytes; two evaluations with equal logs lie on the same smooth piece.
    """

    def __enter__(self) -> list:
        global _branch_log
        self._prev = _branch_log
        _branch_log = []
        return _branch_log

    def __exit__(self, *exc) -> None:
        global _branch_log
        _branch_log = self._prev


def log_branch(selection: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(np.packbits(selection) if selection.dtype == bool else selection.tobytes())


class Tensor:
    """An array plus optional gradient bookkeeping.

    Parameters
    ----------
    data : array-like
        Values. Converted to ``dtype`` (float32 unless the input is already a
        floating array and ``dtype`` is None).
    requires_grad : bool
        Whether ``backward`` should populate ``grad`` for this tensor.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.ascontiguousarray(arr, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    # -- tape -------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from here.

        The tape is released afterwards; a second call on the same graph raises
        ``ContractError``.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            if node._consumed:
                raise ContractError("graph contains a node whose tape was already released")
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
            node._backward = None
            node._consumed = True
        self._consumed = True

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(mul_scalar(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else mul_scalar(self, 1.0 / other)

    def __neg__(self):
        return mul_scalar(self, -1.0)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _check_image(x: Tensor, name: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{name} expects N x C x H x W, got shape {x.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic with restricted broadcasting
# ---------------------------------------------------------------------------

def _broadcast_ok(big: tuple[int, ...], small: tuple[int, ...]) -> bool:
    if big == small:
        return True
    if len(big) != 4 or len(small) != 4:
        return False
    n, c, h, w = big
    sn, sc, sh, sw = small
    if sn not in (1, n):
        return False
    per_channel = sc == c and sh == 1 and sw == 1
    per_pixel = sc == 1 and sh == h and sw == w
    return per_channel or per_pixel


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (a, b) in enumerate(zip(g.shape, shape)) if b == 1 and a != 1)
    return g.sum(axis=axes, keepdims=True)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if _broadcast_ok(a.shape, b.shape) or _broadcast_ok(b.shape, a.shape):
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def backward(g):
        return _reduce_to(g, a.shape), -_reduce_to(g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")

    def backward(g):
        ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _reduce_to(g / b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def add_scalar(a: Tensor, s: float) -> Tensor:
    return _make(a.data + a.data.dtype.type(s), (a,), lambda g: (g,), "add_scalar")


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    log_branch(mask)
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=a.dtype).reshape(())
    return _make(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.mean(dtype=np.float64), dtype=a.dtype).reshape(())
    return _make(out, (a,), lambda g: (np.full(a.shape, g / n, dtype=a.dtype),), "mean")


def channel_max(x: Tensor) -> Tensor:
    """Max over the channel axis; ties route the gradient to the lowest index."""
    _check_image(x, "channel_max")
    idx = np.argmax(x.data, axis=1)[:, None]
    log_branch(idx)
    out = np.take_along_axis(x.data, idx, axis=1)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=1)
        return (gx,)

    return _make(out, (x,), backward, "channel_max")


def channel_mean(x: Tensor) -> Tensor:
    _check_image(x, "channel_mean")
    c = x.shape[1]
    out = x.data.mean(axis=1, keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / c, x.shape).astype(x.dtype),)

    return _make(out, (x,), backward, "channel_mean")


def global_avg_pool(x: Tensor) -> Tensor:
    _check_image(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return _make(out, (x,), backward, "global_avg_pool")


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k window means."""
    _check_image(x, "avg_pool2d")
    n, c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise DimensionError(f"avg_pool2d: {h}x{w} is not divisible by k={k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx.astype(x.dtype),)

    return _make(out, (x,), backward, "avg_pool2d")


# ---------------------------------------------------------------------------
# channel plumbing and reshapes
# ---------------------------------------------------------------------------

def channel_split(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    _check_image(x, "channel_split")
    if sum(sizes) != x.shape[1] or any(s < 1 for s in sizes):
        raise DimensionError(f"channel_split: sizes {list(sizes)} do not sum to C={x.shape[1]}")
    parts = []
    start = 0
    for s in sizes:
        lo, hi = start, start + s

        def backward(g, lo=lo, hi=hi):
            gx = np.zeros_like(x.data)
            gx[:, lo:hi] = g
            return (gx,)

        parts.append(_make(x.data[:, lo:hi].copy(), (x,), backward, "channel_split"))
        start = hi
    return parts


def channel_concat(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("channel_concat: nothing to concatenate")
    for p in parts:
        _check_image(p, "channel_concat")
    n, _, h, w = parts[0].shape
    if any(p.shape[0] != n or p.shape[2:] != (h, w) for p in parts):
        raise DimensionError(f"channel_concat: N,H,W differ across {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(out, tuple(parts), backward, "channel_concat")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose_last(x: Tensor) -> Tensor:
    """Swap the two trailing axes."""
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))
    return _make(out, (x,), lambda g: (np.swapaxes(g, -1, -2),), "transpose")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the trailing two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), backward, "softmax")


def l2_normalize_lastdim(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    log_branch(norm > eps)
    y = x.data / denom

    def backward(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        gx = np.where(norm > eps, (g - y * proj) / denom, g / denom)
        return (gx,)

    return _make(y, (x,), backward, "l2_normalize")


def layer_norm_channels(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each (n, h, w) position across C. No affine part."""
    _check_image(x, "layer_norm_channels")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _make(y, (x,), backward, "layer_norm")


# ---------------------------------------------------------------------------
# spatial ops
# ---------------------------------------------------------------------------

def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation with zero padding (im2col formulation)."""
    _check_image(x, "conv2d")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be Cout x Cin/groups x kh x kw, got {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"conv2d: channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise DimensionError(f"conv2d: weight expects {cin_g * groups} input channels, got {cin}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: invalid stride={stride} padding={padding}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < kh or wp < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cout_g = cout // groups

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # windows: N, Cin, Ho, Wo, kh, kw
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.empty((n, cout, ho, wo), dtype=np.result_type(x.dtype, weight.dtype))
    cols_by_group = []
    for gi in range(groups):
        cols = win[:, gi * cin_g:(gi + 1) * cin_g]
        # -> (N*Ho*Wo, cin_g*kh*kw)
        cols = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, cin_g * kh * kw)
        wmat = weight.data[gi * cout_g:(gi + 1) * cout_g].reshape(cout_g, -1)
        res = cols @ wmat.T
        out[:, gi * cout_g:(gi + 1) * cout_g] = res.reshape(n, ho, wo, cout_g).transpose(0, 3, 1, 2)
        cols_by_group.append(cols)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
        if x.requires_grad:
            gxp = np.zeros((n, cin, hp, wp), dtype=x.dtype)
        for gi in range(groups):
            gmat = g[:, gi * cout_g:(gi + 1) * cout_g].transpose(0, 2, 3, 1).reshape(n * ho * wo, cout_g)
            if weight.requires_grad:
                gw[gi * cout_g:(gi + 1) * cout_g] = (gmat.T @ cols_by_group[gi]).reshape(cout_g, cin_g, kh, kw)
            if x.requires_grad:
                wmat = weight.data[gi * cout_g:(gi + 1) * cout_g].reshape(cout_g, -1)
                gcols = (gmat @ wmat).reshape(n, ho, wo, cin_g, kh, kw)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, gi * cin_g:(gi + 1) * cin_g,
                            i:i + stride * (ho - 1) + 1:stride,
                            j:j + stride * (wo - 1) + 1:stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
        if x.requires_grad:
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, "conv2d")


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Row i holds the interpolation weights for output sample i (half-pixel centers)."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[i, i0] += 1.0 - t
        m[i, i1] += t
    return m.astype(dtype)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize, align_corners=False (clamped half-pixel source coordinates)."""
    _check_image(x, "resize_bilinear")
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"resize_bilinear: bad output size {out_h}x{out_w}")
    _, _, h, w = x.shape
    rh = _bilinear_matrix(h, out_h, x.dtype)
    rw = _bilinear_matrix(w, out_w, x.dtype)
    out = np.einsum("ih,nchw,jw->ncij", rh, x.data, rw, optimize=True)

    def backward(g):
        return (np.einsum("ih,ncij,jw->nchw", rh, g, rw, optimize=True),)

    return _make(out, (x,), backward, "resize_bilinear")


# ---------------------------------------------------------------------------
# debugging dump
# ---------------------------------------------------------------------------

def dump_tensor(t: Tensor) -> str:
    head = "shape: " + " ".join(str(d) for d in t.shape)
    body = " ".join(repr(float(v)) for v in t.data.reshape(-1))
    return head + "\n" + body + "\n"


def parse_tensor_dump(text: str, dtype=DEFAULT_DTYPE) -> Tensor:
    lines = text.strip().splitlines()
    if not lines or not lines[0].startswith("shape:"):
        raise ValueError("tensor dump must start with a 'shape:' line")
    shape = tuple(int(d) for d in lines[0].split()[1:])
    values = np.array(" ".join(lines[1:]).split(), dtype=np.float64)
    if values.size != math.prod(shape):
        raise DimensionError(f"dump holds {values.size} values for shape {shape}")
    return Tensor(values.reshape(shape), dtype=dtype)
