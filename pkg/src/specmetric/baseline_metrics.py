"""Reference image-quality metrics applied to spectrograms: MSE, SSIM, MS-SSIM, NSIM.

Local statistics use an 11x11 Gaussian window (std 1.5) evaluated only where
the window fits inside the image. Unlike 8-bit images, dB spectrograms have
no fixed range, so the dynamic range ``L`` in the stabilising constants is
taken per pair as ``max(a, b) - min(a, b)`` unless given explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DataError, ShapeMismatchError
from .spectrogram import MelSpectrogram

__all__ = ["SsimConfig", "mse", "ssim", "ms_ssim", "nsim", "ssim_maps", "gaussian_window"]

# the standard five-scale weights are rounded and sum to 1.0001; the default
# divides them by that sum so the weights are a proper convex combination
PUBLISHED_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
MSSSIM_WEIGHTS = tuple(w / sum(PUBLISHED_MSSSIM_WEIGHTS) for w in PUBLISHED_MSSSIM_WEIGHTS)


@dataclass(frozen=True)
class SsimConfig:
    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float | None = None
    msssim_weights: tuple = MSSSIM_WEIGHTS

    def __post_init__(self):
        if self.window_size % 2 == 0 or self.window_size < 1:
            raise ValueError("window_size must be odd and positive")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.dynamic_range is not None and self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")
        w = np.asarray(self.msssim_weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"msssim_weights must be non-negative and sum to 1, got sum {w.sum()}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 1-D Gaussian taps."""
    coords = np.arange(size) - size // 2
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    return g / g.sum()


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = a.values if isinstance(a, MelSpectrogram) else np.asarray(a, dtype=np.float64)
    b = b.values if isinstance(b, MelSpectrogram) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(a.shape, b.shape)
    if a.ndim != 2:
        raise ValueError(f"expected 2-D inputs, got {a.shape}")
    return a, b


def _dynamic_range(a: np.ndarray, b: np.ndarray, cfg: SsimConfig) -> float:
    if cfg.dynamic_range is not None:
        return float(cfg.dynamic_range)
    span = float(max(a.max(), b.max()) - min(a.min(), b.min()))
    # identical constant images: any positive L gives 1, pick the 8-bit-free unit
    return span if span > 0 else 1.0


def _blur_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim_maps(a, b, cfg: SsimConfig | None = None, dynamic_range: float | None = None):
    """Local luminance, contrast and structure maps over valid window positions."""
    cfg = SsimConfig() if cfg is None else cfg
    a, b = _pair(a, b)
    if min(a.shape) < cfg.window_size:
        raise DataError(f"input {a.shape} smaller than the {cfg.window_size}x{cfg.window_size} window")
    L = _dynamic_range(a, b, cfg) if dynamic_range is None else dynamic_range
    c1 = (cfg.k1 * L) ** 2
    c2 = (cfg.k2 * L) ** 2
    c3 = c2 / 2.0
    g = gaussian_window(cfg.window_size, cfg.window_sigma)

    mu_a = _blur_valid(a, g)
    mu_b = _blur_valid(b, g)
    var_a = np.maximum(_blur_valid(a * a, g) - mu_a * mu_a, 0.0)
    var_b = np.maximum(_blur_valid(b * b, g) - mu_b * mu_b, 0.0)
    cov = _blur_valid(a * b, g) - mu_a * mu_b
    sd_prod = np.sqrt(var_a * var_b)

    luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    contrast = (2.0 * sd_prod + c2) / (var_a + var_b + c2)
    structure = (cov + c3) / (sd_prod + c3)
    return luminance, contrast, structure


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def ssim(a, b, cfg: SsimConfig | None = None) -> float:
    """Mean structural similarity; luminance x contrast x structure per window."""
    lum, con, struct = ssim_maps(a, b, cfg)
    return float(np.mean(lum * con * struct))


def nsim(a, b, cfg: SsimConfig | None = None) -> float:
    """Mean of luminance x structure per window (contrast term dropped)."""
    lum, _, struct = ssim_maps(a, b, cfg)
    return float(np.mean(lum * struct))


def _pool2(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def n_msssim_scales(shape: tuple[int, int], cfg: SsimConfig | None = None) -> int:
    """Largest scale count (up to the weight count) whose coarsest level still fits the window."""
    cfg = SsimConfig() if cfg is None else cfg
    n = len(cfg.msssim_weights)
    while n > 1 and min(shape) < cfg.window_size * 2 ** (n - 1):
        n -= 1
    return n


def ms_ssim(a, b, cfg: SsimConfig | None = None) -> float:
    """Multi-scale SSIM.

    Contrast x structure is averaged at every scale and raised to that
    scale's weight; luminance enters only at the coarsest scale. Scales are
    dropped (weights renormalised) when the input is too small for five.
    Negative contrast-structure means are clamped at zero before the power.
    """
    cfg = SsimConfig() if cfg is None else cfg
    a, b = _pair(a, b)
    n = n_msssim_scales(a.shape, cfg)
    weights = np.asarray(cfg.msssim_weights[:n], dtype=np.float64)
    weights = weights / weights.sum()
    L = _dynamic_range(a, b, cfg)
    result = 1.0
    for level in range(n):
        lum, con, struct = ssim_maps(a, b, cfg, dynamic_range=L)
        cs = max(float(np.mean(con * struct)), 0.0)
        if level == n - 1:
            result *= max(float(np.mean(lum * con * struct)), 0.0) ** weights[level]
        else:
            result *= cs ** weights[level]
            a, b = _pool2(a), _pool2(b)
    return float(result)
