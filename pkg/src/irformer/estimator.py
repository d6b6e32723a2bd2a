"""scikit-learn compatible wrapper around the IRFormer training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .blocks import ParamStore
from .config import ModelConfig
from .data import ImagePair
from .losses import psnr, ssim
from .tensor import Tensor
from .train import TrainSettings, predict, train
from .validation import check_image_batch, check_pair_batch


class IRFormerTranslator(RegressorMixin, BaseEstimator):
    """Visible-to-infrared image translator.

    Parameters
    ----------
    base_channels : int, default=8
        Feature width C. Must be a multiple of 4.
    efm_scales : tuple of int, default=(2, 4, 8)
        Downsampling factors of the multi-scale enhancement branch. Each must
        divide the image height and width.
    num_transformer_blocks : int, default=1
    num_attention_heads : int, default=2
    ffn_expansion : float, default=2.0
    use_epa, use_dfa : bool, default=True
        Ablation switches. Without DFA a channel-preserving 3x3 conv takes
        its place.
    epochs : int, default=400
    batch_size : int, default=1
    lr : float, default=2e-4
        Peak learning rate of the cosine schedule.
    lr_min : float, default=0.0
    weight_decay : float, default=1e-2
    literal_eq7 : bool, default=False
        Add SSIM itself to the loss instead of ``1 - SSIM``.
    random_state : int, default=0
        Seed for parameter initialization.

    Attributes
    ----------
    params_ : ParamStore
        Learned parameters.
    config_ : ModelConfig
    history_ : list of str
        CSV rows ``step,epoch,lr,loss,smooth_l1,ssim_term``.
    """

    def __init__(self, base_channels=8, efm_scales=(2, 4, 8), num_transformer_blocks=1,
                 num_attention_heads=2, ffn_expansion=2.0, use_epa=True, use_dfa=True,
                 epochs=400, batch_size=1, lr=2e-4, lr_min=0.0, weight_decay=1e-2,
                 literal_eq7=False, random_state=0):
        self.base_channels = base_channels
        self.efm_scales = efm_scales
        self.num_transformer_blocks = num_transformer_blocks
        self.num_attention_heads = num_attention_heads
        self.ffn_expansion = ffn_expansion
        self.use_epa = use_epa
        self.use_dfa = use_dfa
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_min = lr_min
        self.weight_decay = weight_decay
        self.literal_eq7 = literal_eq7
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            base_channels=self.base_channels, efm_scales=list(self.efm_scales),
            num_transformer_blocks=self.num_transformer_blocks,
            num_attention_heads=self.num_attention_heads, use_epa=self.use_epa,
            use_dfa=self.use_dfa, ffn_expansion=self.ffn_expansion,
        )

    def fit(self, X, y, out_dir=None):
        """Train on visible images ``X`` (N x 3 x H x W) and infrared ``y`` (N x 1 x H x W).

        Both must lie in [0, 1]. Samples are visited in the given order.
        """
        X, y = check_pair_batch(X, y)
        config = self._model_config().validate(resolution=X.shape[2:])
        settings = TrainSettings(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, lr_min=self.lr_min,
            seed=self.random_state, weight_decay=self.weight_decay, literal_eq7=self.literal_eq7,
        )
        pairs = [ImagePair(Tensor(X[i]), Tensor(y[i]), f"{i:06d}") for i in range(X.shape[0])]
        result = train(pairs, config, settings, out_dir=out_dir)
        self.config_ = config
        self.params_ = result.params
        self.history_ = result.history
        self.n_steps_ = result.train_state.step
        return self

    def predict(self, X) -> np.ndarray:
        """Translate visible images to N x 1 x H x W infrared estimates in (0, 1)."""
        check_is_fitted(self, "params_")
        X = check_image_batch(X, 3, "X")
        return predict(self.params_, self.config_, Tensor(X)).data

    def score(self, X, y, sample_weight=None) -> float:
        """Mean PSNR (dB) of the predictions against ``y``."""
        X, y = check_pair_batch(X, y)
        pred = self.predict(X)
        values = np.array([psnr(pred[i], y[i]) for i in range(len(y))])
        return float(np.average(values, weights=sample_weight))

    def ssim_score(self, X, y) -> float:
        X, y = check_pair_batch(X, y)
        pred = self.predict(X)
        return float(np.mean([ssim(Tensor(pred[i:i + 1]), Tensor(y[i:i + 1])).item() for i in range(len(y))]))

    @classmethod
    def from_params(cls, params: ParamStore, config: ModelConfig) -> "IRFormerTranslator":
        """Wrap already-trained parameters (e.g. from a checkpoint)."""
        est = cls(base_channels=config.base_channels, efm_scales=tuple(config.efm_scales),
                  num_transformer_blocks=config.num_transformer_blocks,
                  num_attention_heads=config.num_attention_heads,
                  ffn_expansion=config.ffn_expansion, use_epa=config.use_epa, use_dfa=config.use_dfa)
        est.config_ = config
        est.params_ = params
        est.history_ = []
        est.n_steps_ = 0
        return est
