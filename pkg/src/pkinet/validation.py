"""Input validation helpers shared by the data layer and the estimator."""

from __future__ import annotations

import numpy as np


def check_feature_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite float64 matrix of shape (n_samples, n_features)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={X.ndim}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or Inf")
    return X


def check_label_vector(y, n_samples: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to non-negative int64 labels, optionally checking length."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={y.ndim}")
    if y.dtype.kind == "f":
        if not np.all(y == np.floor(y)):
            raise ValueError(f"{name} must contain integer class ids")
        y = y.astype(np.int64)
    elif y.dtype.kind in "iu":
        y = y.astype(np.int64)
    else:
        raise ValueError(f"{name} must be integer-valued, got dtype {y.dtype}")
    if y.size and y.min() < 0:
        raise ValueError(f"{name} contains negative class ids")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(
            f"{name} has {y.shape[0]} entries for {n_samples} samples"
        )
    return y
