"""Synthetic versions of the four listening-test degradations.

Severity is a single ``intensity`` in [0, 1]; 0 leaves the clip unchanged
(noise excepted, which bottoms out at 40 dB SNR) and 1 is the harshest
setting. The mappings are:

waveshape
    ``tanh(g x) / tanh(g)`` with drive ``g = 16 * intensity``.
lowpass
    4th-order Butterworth (two biquads), cutoff ``nyquist * (1 - 0.9 * intensity)``.
limiter
    Hard clip at ``(1 - 0.9 * intensity)`` of the clip's peak, then gain back
    up to the original peak.
noise
    White Gaussian noise at ``40 - 36 * intensity`` dB SNR from a seeded
    Philox generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .audio_io import Waveform

__all__ = ["KINDS", "DegradationSpec", "apply", "noise_snr_db"]

KINDS = ("waveshape", "lowpass", "limiter", "noise")


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    intensity: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def noise_snr_db(intensity: float) -> float:
    return 40.0 - 36.0 * intensity


def _waveshape(x: np.ndarray, intensity: float) -> np.ndarray:
    drive = 16.0 * intensity
    if drive < 1e-6:
        return x.copy()
    return np.tanh(drive * x) / np.tanh(drive)


def _lowpass(x: np.ndarray, intensity: float) -> np.ndarray:
    fraction = 1.0 - 0.9 * intensity
    if fraction >= 1.0:
        return x.copy()
    sos = signal.butter(4, fraction, btype="low", output="sos")
    return signal.sosfilt(sos, x)


def _limiter(x: np.ndarray, intensity: float) -> np.ndarray:
    peak = np.max(np.abs(x))
    fraction = 1.0 - 0.9 * intensity
    if peak == 0.0 or fraction >= 1.0:
        return x.copy()
    threshold = fraction * peak
    return np.clip(x, -threshold, threshold) * (peak / threshold)


def _noise(x: np.ndarray, intensity: float, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    power = np.mean(x * x)
    std = np.sqrt(power / 10.0 ** (noise_snr_db(intensity) / 10.0))
    return x + std * rng.standard_normal(x.shape[0])


def apply(w: Waveform, spec: DegradationSpec) -> Waveform:
    x = w.samples
    if spec.kind == "waveshape":
        y = _waveshape(x, spec.intensity)
    elif spec.kind == "lowpass":
        y = _lowpass(x, spec.intensity)
    elif spec.kind == "limiter":
        y = _limiter(x, spec.intensity)
    else:
        y = _noise(x, spec.intensity, spec.seed)
    return w.with_samples(y)
