"""Input checks shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from ..pipeline.data import IGNORE_INDEX


def check_images(X, allow_unbatched: bool = False) -> np.ndarray:
    """Return ``X`` as float32 (n, 3, H, W) with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float32)
    if allow_unbatched and X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"expected images of shape (n, 3, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("expected at least one image")
    if not np.isfinite(X).all():
        raise ValueError("images contain NaN or infinite values")
    if X.min() < 0 or X.max() > 1:
        raise ValueError(f"image values must lie in [0, 1], got [{X.min():.3g}, {X.max():.3g}]")
    if X.shape[2] % 32 or X.shape[3] % 32:
        raise ValueError(f"image height and width must be multiples of 32, got {X.shape[2:]}")
    return X


def check_labels(y, n_classes: int, ignore_index: int = IGNORE_INDEX) -> np.ndarray:
    """Return ``y`` as int64 (n, H, W); every value a class index or ``ignore_index``."""
    y = np.asarray(y)
    if y.ndim != 3:
        raise ValueError(f"expected label maps of shape (n, H, W), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("label maps must hold integer class indices")
    y = y.astype(np.int64)
    bad = (y != ignore_index) & ((y < 0) | (y >= n_classes))
    if bad.any():
        raise ValueError(f"labels outside [0, {n_classes}) and != {ignore_index}: {np.unique(y[bad])[:5].tolist()}")
    return y


def check_X_y(X, y, n_classes: int, ignore_index: int = IGNORE_INDEX) -> tuple[np.ndarray, np.ndarray]:
    X = check_images(X)
    y = check_labels(y, n_classes, ignore_index)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"found {X.shape[0]} images but {y.shape[0]} label maps")
    if X.shape[2:] != y.shape[1:]:
        raise ValueError(f"image size {X.shape[2:]} and label size {y.shape[1:]} differ")
    return X, y
