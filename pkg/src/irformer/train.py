"""Training loop: forward, loss, backward, cosine lr, AdamW, per-epoch checkpoints."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .blocks import ParamStore, init_params, model_forward
from .checkpoint import Checkpoint, TrainState, save_checkpoint
from .config import ModelConfig, RunConfig
from .data import ImagePair
from .exceptions import ConfigError, NumericalError
from .losses import loss_terms, psnr, ssim
from .optim import AdamWState, CosineSchedule, adamw_step
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_HEADER = "step,epoch,lr,loss,smooth_l1,ssim_term"


@dataclass
class TrainSettings:
    epochs: int = 400
    batch_size: int = 1
    lr: float = 2e-4
    lr_min: float = 0.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    literal_eq7: bool = False
    checkpoint_every: int = 0

    @classmethod
    def from_run_config(cls, cfg: RunConfig) -> "TrainSettings":
        return cls(
            epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"], lr=cfg["train.lr"],
            lr_min=cfg["train.lr_min"], seed=cfg["train.seed"], beta1=cfg["train.beta1"],
            beta2=cfg["train.beta2"], eps=cfg["train.eps"], weight_decay=cfg["train.weight_decay"],
            literal_eq7=cfg["loss.literal_eq7"], checkpoint_every=cfg["train.checkpoint_every"],
        )


@dataclass
class TrainResult:
    params: ParamStore
    opt_state: AdamWState
    train_state: TrainState
    history: list[str] = field(default_factory=list)


def make_batches(pairs: Sequence[ImagePair], batch_size: int) -> list[tuple[Tensor, Tensor]]:
    """Group pairs in manifest order into stacked N x C x H x W tensors."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    out = []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i:i + batch_size]
        out.append((Tensor(np.stack([p.vis.data for p in chunk])), Tensor(np.stack([p.ir.data for p in chunk]))))
    return out


def _row(step: int, epoch: int, lr: float, terms: dict[str, Tensor]) -> str:
    return ",".join([str(step), str(epoch), repr(lr), repr(terms["total"].item()),
                     repr(terms["smooth_l1"].item()), repr(terms["ssim_term"].item())])


def train(
    pairs: Sequence[ImagePair],
    model_config: ModelConfig,
    settings: TrainSettings,
    out_dir=None,
    resume: Checkpoint | None = None,
    on_row: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train on ``pairs`` and return the final parameters and optimizer state.

    With ``out_dir`` set, the loss log goes to ``loss_log.csv`` and the state
    is saved to ``last.irfk`` after every epoch and to ``final.irfk`` at the
    end. ``resume`` continues from an epoch-boundary checkpoint; the learning
    rate schedule is the one implied by ``settings`` so a resumed run retraces
    the uninterrupted one.
    """
    if not pairs:
        raise ConfigError("no training pairs")
    res = pairs[0].vis.shape[1:]
    model_config.validate(resolution=res)
    batches = make_batches(pairs, settings.batch_size)
    steps_per_epoch = len(batches)
    schedule = CosineSchedule(settings.epochs * steps_per_epoch, settings.lr, settings.lr_min)

    if resume is not None:
        params = resume.params
        opt = resume.opt_state
        state = TrainState(resume.train_state.step, resume.train_state.epoch, resume.train_state.seed)
        if state.step != state.epoch * steps_per_epoch:
            raise ConfigError(f"checkpoint at step {state.step} is not on an epoch boundary "
                              f"({steps_per_epoch} steps per epoch)")
    else:
        params = init_params(model_config, settings.seed)
        opt = AdamWState.for_params(params, beta1=settings.beta1, beta2=settings.beta2,
                                    eps=settings.eps, weight_decay=settings.weight_decay)
        state = TrainState(0, 0, settings.seed)

    out = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "loss_log.csv"
        log_file = log_path.open("w", newline="\n")
        log_file.write(LOG_HEADER + "\n")

    history: list[str] = []
    try:
        for epoch in range(state.epoch + 1, settings.epochs + 1):
            for vis, ir in batches:
                lr = schedule(state.step)
                terms = loss_terms(model_forward(params, model_config, vis), ir,
                                   literal_eq7=settings.literal_eq7)
                loss = terms["total"].item()
                if not math.isfinite(loss):
                    raise NumericalError(f"non-finite loss at step {state.step + 1} (lr={lr!r})")
                terms["total"].backward()
                adamw_step(params, opt, lr)
                state.step += 1
                row = _row(state.step, epoch, lr, terms)
                history.append(row)
                if log_file is not None:
                    log_file.write(row + "\n")
                if on_row is not None:
                    on_row(row)
            state.epoch = epoch
            if out is not None:
                log_file.flush()
                save_checkpoint(out / "last.irfk", params, opt, state, model_config)
                if settings.checkpoint_every and epoch % settings.checkpoint_every == 0:
                    save_checkpoint(out / f"epoch_{epoch:04d}.irfk", params, opt, state, model_config)
            log.info("epoch %d/%d done, step %d, last loss %s", epoch, settings.epochs, state.step,
                     history[-1].split(",")[3] if history else "-")
        if out is not None:
            save_checkpoint(out / "final.irfk", params, opt, state, model_config)
    finally:
        if log_file is not None:
            log_file.close()
    return TrainResult(params, opt, state, history)


def predict(params: ParamStore, config: ModelConfig, vis: Tensor) -> Tensor:
    """Forward pass without building a tape."""
    frozen = ParamStore((k, Tensor(v.data)) for k, v in params.items())
    return model_forward(frozen, config, vis)


def evaluate(params: ParamStore, config: ModelConfig, pairs: Sequence[ImagePair],
             literal_eq7: bool = False) -> list[dict]:
    """Per-image PSNR, SSIM and training loss."""
    rows = []
    for pair in pairs:
        vis, ir = pair.batch()
        pred = predict(params, config, vis)
        rows.append({
            "image_id": pair.id,
            "psnr_db": psnr(pred, ir),
            "ssim": ssim(pred, ir).item(),
            "loss": loss_terms(pred, ir, literal_eq7=literal_eq7)["total"].item(),
        })
    return rows
