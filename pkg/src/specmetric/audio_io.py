"""WAV decoding, resampling and 16-bit re-encoding.

Every metric in the package consumes a canonical mono :class:`Waveform`.
Only uncompressed RIFF/WAVE is handled: PCM 16-bit, PCM 32-bit and IEEE
float 32-bit, with one or two channels.
"""

from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DataError

__all__ = [
    "Waveform",
    "WavFormatError",
    "UnsupportedFormatError",
    "decode_wav",
    "encode_wav_16bit",
    "read_wav",
    "write_wav_16bit",
    "resample",
]

_FORMAT_PCM = 0x0001
_FORMAT_FLOAT = 0x0003
_FORMAT_EXTENSIBLE = 0xFFFE

# (format tag, bits per sample) -> numpy dtype, full-scale divisor
_CODECS = {
    (_FORMAT_PCM, 16): ("<i2", 32768.0),
    (_FORMAT_PCM, 32): ("<i4", 2147483648.0),
    (_FORMAT_FLOAT, 32): ("<f4", 1.0),
}


class WavFormatError(DataError):
    """The byte stream is not a well-formed RIFF/WAVE container."""


class UnsupportedFormatError(DataError):
    """The container is valid but uses a codec or layout we do not decode."""

    def __init__(self, field_name: str, value):
        self.field_name = field_name
        self.value = value
        super().__init__(f"unsupported WAV {field_name}: {value!r}")


@dataclass(frozen=True)
class Waveform:
    """Mono audio clip.

    Parameters
    ----------
    samples
        1-D float64 amplitudes, nominally in [-1, 1].
    sample_rate
        Sampling frequency in Hz.
    source_id
        Opaque identifier of the originating clip.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = field(default="")

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray, sample_rate: int | None = None) -> "Waveform":
        return Waveform(
            samples,
            self.sample_rate if sample_rate is None else sample_rate,
            self.source_id,
        )


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"chunk {chunk_id!r} truncated: {len(body)} of {size} bytes")
        yield chunk_id, body
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes, source_id: str = "") -> Waveform:
    """Decode a RIFF/WAVE byte string into a mono :class:`Waveform`.

    Stereo input is averaged per sample; integer formats are divided by the
    magnitude of their most negative value so full scale maps to [-1, 1].
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError("missing RIFF/WAVE header")

    fmt = None
    payload = None
    for chunk_id, body in _iter_chunks(data):
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            payload = body
    if fmt is None or len(fmt) < 16:
        raise WavFormatError("missing or short 'fmt ' chunk")
    if payload is None:
        raise WavFormatError("missing 'data' chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag == _FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise WavFormatError("WAVE_FORMAT_EXTENSIBLE 'fmt ' chunk too short")
        # the sub-format GUID starts with the plain format tag
        (tag,) = struct.unpack_from("<H", fmt, 24)
    if (tag, bits) not in _CODECS:
        if tag not in (_FORMAT_PCM, _FORMAT_FLOAT):
            raise UnsupportedFormatError("format_tag", tag)
        raise UnsupportedFormatError("bits_per_sample", bits)
    if channels not in (1, 2):
        raise UnsupportedFormatError("channels", channels)
    if rate == 0:
        raise WavFormatError("sample rate is zero")
    if block_align != channels * bits // 8:
        raise WavFormatError(f"block_align {block_align} inconsistent with {channels}x{bits} bits")

    dtype, full_scale = _CODECS[(tag, bits)]
    n_frames = len(payload) // block_align
    frames = np.frombuffer(payload[: n_frames * block_align], dtype=dtype)
    frames = frames.astype(np.float64).reshape(n_frames, channels) / full_scale
    mono = frames.mean(axis=1) if channels == 2 else frames[:, 0]
    if not np.all(np.isfinite(mono)):
        raise WavFormatError("non-finite float samples")
    return Waveform(mono, rate, source_id)


def encode_wav_16bit(w: Waveform) -> bytes:
    """Encode as PCM 16-bit mono: clamp to [-1, 1], scale by 32767, round."""
    ints = np.rint(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(w.sample_rate)
        out.writeframes(ints.tobytes())
    return buf.getvalue()


def read_wav(path: str | Path) -> Waveform:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return decode_wav(data, source_id=path.stem)


def write_wav_16bit(path: str | Path, w: Waveform) -> None:
    Path(path).write_bytes(encode_wav_16bit(w))


def resample(
    w: Waveform,
    target_rate: int,
    half_width: int = 64,
    beta: float = 8.6,
) -> Waveform:
    """Band-limited resampling by Kaiser-windowed sinc interpolation.

    Each output sample is a weighted sum of the ``2 * half_width + 1`` input
    samples nearest to its position on the input time grid. The sinc cutoff
    sits at the lower of the two Nyquist frequencies. Samples outside the clip
    are treated as zero.
    """
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w.with_samples(w.samples.copy())

    x = w.samples
    n_in = x.shape[0]
    n_out = int(round(n_in * target_rate / w.sample_rate))
    ratio = w.sample_rate / target_rate
    cutoff = min(1.0, target_rate / w.sample_rate)  # relative to input Nyquist

    out = np.empty(n_out)
    taps = np.arange(-half_width, half_width + 1)
    padded = np.concatenate([np.zeros(half_width + 1), x, np.zeros(half_width + 1)])
    block = 4096
    for start in range(0, n_out, block):
        pos = np.arange(start, min(start + block, n_out)) * ratio
        base = np.floor(pos).astype(np.int64)
        idx = base[:, None] + taps[None, :]
        offset = pos[:, None] - idx
        kernel = cutoff * np.sinc(cutoff * offset) * _kaiser(offset, half_width + 1, beta)
        out[start : start + len(pos)] = np.einsum("ij,ij->i", kernel, padded[idx + half_width + 1])
    return w.with_samples(out, target_rate)


def _kaiser(t: np.ndarray, half_len: float, beta: float) -> np.ndarray:
    r = np.clip(t / half_len, -1.0, 1.0)
    return np.i0(beta * np.sqrt(1.0 - r * r)) / np.i0(beta)
