"""Mel spectrogram front end.

Audio is framed without centre padding, Hann-windowed, and projected onto a
Slaney-style, area-normalised triangular mel filterbank. The default
parameters (2048-sample window, hop 64, 512 bands at 16050 Hz) give a
512 x 972 "image" for a four-second clip.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .audio_io import Waveform
from .exceptions import DataError

__all__ = [
    "SpectrogramConfig",
    "MelSpectrogram",
    "InputTooShortError",
    "stft_power",
    "mel_filterbank",
    "mel_spectrogram",
    "hz_to_mel",
    "mel_to_hz",
    "n_frames_for",
    "save_spectrogram",
    "load_spectrogram",
]

LOG_FLOOR = 1e-10
CACHE_MAGIC = b"SPMEL\x00\x01\x00"
SCALES = ("power", "log_power")


class InputTooShortError(DataError):
    pass


@dataclass(frozen=True)
class SpectrogramConfig:
    n_fft: int = 2048
    hop_length: int = 64
    n_mels: int = 512
    sample_rate: int = 16050
    fmin: float = 0.0
    fmax: float | None = None
    scale: str = "log_power"

    def __post_init__(self):
        if not (self.n_fft >= self.hop_length > 0):
            raise ValueError(f"need n_fft >= hop_length > 0, got {self.n_fft}, {self.hop_length}")
        if self.n_mels <= 0:
            raise ValueError("n_mels must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if not (0 <= self.fmin < self.upper_frequency <= self.sample_rate / 2):
            raise ValueError(
                f"need 0 <= fmin < fmax <= sample_rate/2, got fmin={self.fmin}, fmax={self.fmax}"
            )

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    def to_text(self) -> str:
        return "".join(f"{k}={'' if v is None else v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "SpectrogramConfig":
        """Build from string key/value pairs; unknown keys are an error."""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown spectrogram option {key!r}")
            raw = raw.strip()
            if key == "scale":
                kwargs[key] = raw
            elif key in ("fmin", "fmax"):
                kwargs[key] = None if raw in ("", "None") else float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "SpectrogramConfig":
        return cls.from_mapping(parse_key_values(text))


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True)
class MelSpectrogram:
    """Mel-band x frame matrix together with the settings that produced it."""

    values: np.ndarray
    config: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    source_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def n_frames_for(n_samples: int, n_fft: int, hop_length: int) -> int:
    return 1 + (n_samples - n_fft) // hop_length


def stft_power(w: Waveform, cfg: SpectrogramConfig) -> np.ndarray:
    """Squared-magnitude STFT, shape ``(n_fft // 2 + 1, n_frames)``.

    Frame ``t`` covers samples ``[t * hop, t * hop + n_fft)``.
    """
    if len(w) < cfg.n_fft:
        raise InputTooShortError(
            f"clip {w.source_id or '<unnamed>'} has {len(w)} samples, shorter than n_fft={cfg.n_fft}"
        )
    frames = sliding_window_view(w.samples, cfg.n_fft)[:: cfg.hop_length]
    window = get_window("hann", cfg.n_fft, fftbins=True)
    spec = np.fft.rfft(frames * window, axis=1)
    return (spec.real**2 + spec.imag**2).T


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    linear = freq / f_sp
    with np.errstate(divide="ignore"):
        log_part = min_log_mel + np.log(np.maximum(freq, 1e-300) / 1000.0) / logstep
    return np.where(freq >= 1000.0, log_part, linear)


def mel_to_hz(mels):
    mels = np.asarray(mels, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(mels >= min_log_mel, 1000.0 * np.exp(logstep * (mels - min_log_mel)), f_sp * mels)


@lru_cache(maxsize=16)
def _filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    # peak height 2 / (f_hi - f_lo) gives each triangle unit area in Hz
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def mel_filterbank(cfg: SpectrogramConfig) -> np.ndarray:
    """Filterbank matrix of shape ``(n_mels, n_fft // 2 + 1)``."""
    return _filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, float(cfg.fmin), cfg.upper_frequency)


def mel_spectrogram(w: Waveform, cfg: SpectrogramConfig | None = None) -> MelSpectrogram:
    cfg = SpectrogramConfig() if cfg is None else cfg
    if w.sample_rate != cfg.sample_rate:
        raise DataError(
            f"waveform at {w.sample_rate} Hz but spectrogram config expects {cfg.sample_rate} Hz; resample first"
        )
    mel = mel_filterbank(cfg) @ stft_power(w, cfg)
    if cfg.scale == "log_power":
        mel = 10.0 * np.log10(np.maximum(mel, LOG_FLOOR))
    return MelSpectrogram(mel, cfg, w.source_id)


def save_spectrogram(path: str | Path, spec: MelSpectrogram) -> None:
    """Write the binary cache file plus a ``.cfg`` key=value sidecar."""
    path = Path(path)
    rows, cols = spec.shape
    header = CACHE_MAGIC + struct.pack("<II", rows, cols)
    path.write_bytes(header + spec.values.astype("<f4").tobytes(order="C"))
    sidecar = spec.config.to_text() + f"source_id={spec.source_id}\n"
    Path(str(path) + ".cfg").write_text(sidecar)


def load_spectrogram(path: str | Path) -> MelSpectrogram:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:8] != CACHE_MAGIC:
        raise DataError(f"{path}: not a spectrogram cache file")
    rows, cols = struct.unpack_from("<II", data, 8)
    expected = 16 + 4 * rows * cols
    if len(data) != expected:
        raise DataError(f"{path}: expected {expected} bytes for {rows}x{cols}, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols).astype(np.float64)
    cfg = SpectrogramConfig()
    source_id = ""
    sidecar = Path(str(path) + ".cfg")
    if sidecar.exists():
        pairs = parse_key_values(sidecar.read_text())
        source_id = pairs.pop("source_id", "")
        cfg = SpectrogramConfig.from_mapping(pairs)
    return MelSpectrogram(values, cfg, source_id)


def with_scale(cfg: SpectrogramConfig, scale: str) -> SpectrogramConfig:
    return replace(cfg, scale=scale)
