"""Mirror-padded 2-D filtering and dyadic resampling on plain arrays.

Padding is expressed as integer index maps so the same indexing can be
replayed (and scatter-added in reverse) by the gradient tape.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@lru_cache(maxsize=256)
def mirror_indices(n: int, pad: int) -> np.ndarray:
    """Indices of a length-``n`` axis padded by whole-sample mirroring.

    ``[d c b | a b c d | c b a]``: the edge sample is not repeated.
    """
    i = np.arange(-pad, n + pad)
    if n == 1:
        idx = np.zeros_like(i)
    else:
        period = 2 * (n - 1)
        i = np.mod(i, period)
        idx = np.where(i > n - 1, period - i, i)
    idx.setflags(write=False)
    return idx


def mirror_pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    return x[mirror_indices(x.shape[0], ph)][:, mirror_indices(x.shape[1], pw)]


def filter2d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size 2-D correlation of ``x`` with an odd-sized ``kernel``."""
    kh, kw = kernel.shape
    padded = mirror_pad(x, kh // 2, kw // 2)
    windows = sliding_window_view(padded, (kh, kw))
    return np.einsum("ijkl,kl->ij", windows, kernel)


def downsample2(x: np.ndarray) -> np.ndarray:
    """Keep even-indexed rows and columns; output is ceil(shape / 2)."""
    return x[::2, ::2]


def upsample2(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Zero-stuff ``x`` onto the even grid of an array of ``shape``."""
    out = np.zeros(shape, dtype=np.result_type(x, np.float64))
    out[::2, ::2] = x
    return out
