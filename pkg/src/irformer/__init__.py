"""IRFormer: lightweight visible-to-infrared image translation on a numpy autodiff core."""
from .blocks import ParamStore, init_params, model_forward, param_shapes
from .budget import count_params_and_macs
from .checkpoint import Checkpoint, TrainState, load_checkpoint, save_checkpoint
from .config import ModelConfig, RunConfig
from .data import ImagePair, load_png, make_synthetic_pairs, save_png, scan_manifest
from .estimator import IRFormerTranslator
from .exceptions import (ConfigError, ContractError, CorruptCheckpointError, DatasetError, DimensionError,
                         FormatError, IRFormerError, NumericalError)
from .gradcheck import block_checks, grad_check
from .losses import psnr, smooth_l1, ssim, ssim_loss, total_loss
from .optim import AdamWState, CosineSchedule, adamw_step, cosine_lr
from .tensor import Tensor
from .train import TrainSettings, evaluate, predict, train

__version__ = "0.1.0"

__all__ = [
    "AdamWState", "Checkpoint", "ConfigError", "ContractError", "CorruptCheckpointError", "CosineSchedule",
    "DatasetError", "DimensionError", "FormatError", "IRFormerError", "IRFormerTranslator", "ImagePair",
    "ModelConfig", "NumericalError", "ParamStore", "RunConfig", "Tensor", "TrainSettings", "TrainState",
    "adamw_step", "block_checks", "cosine_lr", "count_params_and_macs", "evaluate", "grad_check",
    "init_params", "load_checkpoint", "load_png", "make_synthetic_pairs", "model_forward", "param_shapes",
    "predict", "psnr", "save_checkpoint", "save_png", "scan_manifest", "smooth_l1", "ssim", "ssim_loss",
    "total_loss", "train",
]
