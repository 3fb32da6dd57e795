"""Input checks for the estimator layer."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .spectrogram import MelSpectrogram


def _stack(items) -> np.ndarray:
    return np.stack([x.values if isinstance(x, MelSpectrogram) else np.asarray(x, dtype=np.float64) for x in items])


def check_spectrograms(X, min_size: int = 1) -> np.ndarray:
    """Return a finite float64 array of shape (n_samples, rows, cols)."""
    if isinstance(X, MelSpectrogram):
        X = [X]
    if isinstance(X, (list, tuple)):
        X = _stack(X)
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, ensure_all_finite=True)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected spectrograms of shape (n, rows, cols), got {X.shape}")
    if min(X.shape[1:]) < min_size:
        raise ValueError(f"spectrograms of shape {X.shape[1:]} are smaller than {min_size} per axis")
    return X


def check_pairs(X) -> np.ndarray:
    """Return a finite float64 array of shape (n_pairs, 2, rows, cols)."""
    if isinstance(X, (list, tuple)):
        X = np.stack([_stack(pair) for pair in X])
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64, ensure_all_finite=True)
    if X.ndim != 4 or X.shape[1] != 2:
        raise ValueError(f"expected pairs of shape (n, 2, rows, cols), got {X.shape}")
    return X


def check_waveforms(X) -> list[np.ndarray]:
    out = []
    for x in X:
        samples = getattr(x, "samples", x)
        a = check_array(np.asarray(samples, dtype=np.float64)[None], dtype=np.float64)
        out.append(a[0])
    return out
