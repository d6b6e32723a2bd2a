"""Binary checkpoint container.

Layout (little-endian throughout)::

    b"IRFK"  u32 version
    u32 len, utf-8 bytes          model config as key=value lines
    tensor table                  parameters
    u64 adam step, f64 beta1, f64 beta2, f64 eps, f64 weight_decay
    tensor table                  optimizer moments, names "m.<param>" / "v.<param>"
    u64 step, u64 epoch, u64 seed train state

A tensor table is ``u32 count`` followed per entry by ``u32 name_len, name,
u32 ndim, u32 dims[ndim], f32 payload``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blocks import ParamStore, param_shapes
from .config import ModelConfig
from .exceptions import CorruptCheckpointError
from .optim import AdamWState
from .tensor import Tensor

MAGIC = b"IRFK"
VERSION = 1


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    seed: int = 0


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParamStore
    opt_state: AdamWState
    train_state: TrainState


def _write_table(buf: io.BufferedIOBase, table: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (name_len,) = self.unpack("<I")
            try:
                name = self.take(name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptCheckpointError("tensor name is not utf-8") from exc
            (ndim,) = self.unpack("<I")
            dims = self.unpack(f"<{ndim}I")
            size = int(np.prod(dims)) if ndim else 1
            payload = np.frombuffer(self.take(4 * size), dtype="<f4").astype(np.float32)
            out[name] = payload.reshape(dims)
        return out


def save_checkpoint(path, params: ParamStore, opt_state: AdamWState, train_state: TrainState,
                    config: ModelConfig) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg_text = "".join(f"{k}={v}\n" for k, v in config.to_dict().items()).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_text)))
    buf.write(cfg_text)
    _write_table(buf, {k: v.data for k, v in params.items()})
    buf.write(struct.pack("<Q4d", opt_state.step, opt_state.beta1, opt_state.beta2,
                          opt_state.eps, opt_state.weight_decay))
    moments = {}
    for name in params:
        if name in opt_state.m:
            moments[f"m.{name}"] = opt_state.m[name]
            moments[f"v.{name}"] = opt_state.v[name]
    _write_table(buf, moments)
    buf.write(struct.pack("<3Q", train_state.step, train_state.epoch, train_state.seed))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic, not an IRFK checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<I")
    values = {}
    for line in r.take(cfg_len).decode("utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            values[k] = v
    config = ModelConfig.from_dict(values)
    expected = param_shapes(config)

    tensors = r.table()
    if list(tensors) != list(expected):
        raise CorruptCheckpointError(f"{path}: parameter names do not match the stored config")
    for name, arr in tensors.items():
        if arr.shape != expected[name]:
            raise CorruptCheckpointError(f"{path}: {name} has shape {arr.shape}, config implies {expected[name]}")
    params = ParamStore((k, Tensor(v, requires_grad=True)) for k, v in tensors.items())

    step, b1, b2, eps, wd = r.unpack("<Q4d")
    opt = AdamWState(beta1=b1, beta2=b2, eps=eps, weight_decay=wd, step=step)
    for name, arr in r.table().items():
        kind, _, pname = name.partition(".")
        if kind not in ("m", "v") or pname not in expected or arr.shape != expected[pname]:
            raise CorruptCheckpointError(f"{path}: unexpected optimizer entry {name} {arr.shape}")
        getattr(opt, kind)[pname] = arr.copy()
    ts = TrainState(*r.unpack("<3Q"))
    if r.pos != len(r.data):
        raise CorruptCheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return Checkpoint(config, params, opt, ts)
