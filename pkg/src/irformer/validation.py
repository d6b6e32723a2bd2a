"""Input validation for image batches handed to the estimator API."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError


def check_image_batch(X, channels: int, name: str = "X", *, allow_squeezed: bool = False,
                      dtype=np.float32) -> np.ndarray:
    """Return ``X`` as a contiguous N x C x H x W float array in [0, 1].

    Accepts a single C x H x W image (promoted to a batch of one) and, with
    ``allow_squeezed``, an N x H x W stack for single-channel data. Rejects
    non-finite values and values outside [0, 1].
    """
    arr = np.asarray(X)
    if arr.dtype == object or not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be a numeric array, got dtype {arr.dtype}")
    if arr.ndim == 3 and allow_squeezed and channels == 1 and arr.shape[0] != 1:
        arr = arr[:, None]
    elif arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise DimensionError(f"{name} must be N x {channels} x H x W, got shape {arr.shape}")
    if arr.shape[1] != channels:
        raise DimensionError(f"{name} must have {channels} channels, got {arr.shape[1]}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinity")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]; got range [{arr.min():.3g}, {arr.max():.3g}]")
    return arr


def check_pair_batch(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = check_image_batch(X, 3, "X")
    y = check_image_batch(y, 1, "y", allow_squeezed=True)
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} images but y has {y.shape[0]}")
    if X.shape[2:] != y.shape[2:]:
        raise DimensionError(f"X images are {X.shape[2:]} but y images are {y.shape[2:]}")
    return X, y
