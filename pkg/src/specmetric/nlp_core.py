"""Normalised Laplacian pyramid and the NLPD distance.

Each stage low-pass filters its input, keeps the even samples as the next
stage's input, and stores the band-pass residual ``z``. The residual is then
divided by a local amplitude estimate ``sigma + P * |z|`` to give ``y``. The
distance between two inputs is the mean over stages of the per-stage RMS
difference of their ``y`` bands.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from ._filters import downsample2, filter2d, upsample2
from .exceptions import DataError, ShapeMismatchError
from .spectrogram import MelSpectrogram

__all__ = [
    "DN_MODES",
    "NlpParams",
    "PyramidOutputs",
    "StageUnderflowError",
    "binomial_kernel",
    "build_pyramid",
    "laplacian_bands",
    "normalize_bands",
    "reconstruct",
    "nlpd",
    "image_default_params",
    "params_to_json",
    "params_from_json",
    "save_params",
    "load_params",
]

DN_MODES = ("image_default", "none", "ones", "statistical", "perceptual")
PARAMS_VERSION = 1
FILTER_SHAPE = (5, 5)


class StageUnderflowError(DataError, ValueError):
    pass


def binomial_kernel() -> np.ndarray:
    """5x5 separable binomial low-pass, outer product of [1, 4, 6, 4, 1] / 16."""
    taps = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    return np.outer(taps, taps)


def _frozen(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NlpParams:
    """Immutable pyramid and divisive-normalisation parameters.

    Parameters
    ----------
    dn_filters
        One non-negative 5x5 kernel per stage.
    dn_constants
        One positive additive constant per stage.
    lowpass
        Pyramid low-pass kernel (5x5).
    dn_mode
        Provenance tag; ``"none"`` disables normalisation entirely.
    """

    dn_filters: tuple
    dn_constants: tuple
    lowpass: np.ndarray = field(default_factory=binomial_kernel)
    dn_mode: str = "image_default"

    def __post_init__(self):
        filters = tuple(_frozen(f, FILTER_SHAPE) for f in self.dn_filters)
        constants = tuple(float(s) for s in self.dn_constants)
        if len(filters) != len(constants):
            raise ValueError(
                f"{len(filters)} filters but {len(constants)} constants; need one of each per stage"
            )
        if not filters:
            raise ValueError("need at least one stage")
        if self.dn_mode not in DN_MODES:
            raise ValueError(f"dn_mode must be one of {DN_MODES}, got {self.dn_mode!r}")
        for k, (f, s) in enumerate(zip(filters, constants)):
            if not np.all(np.isfinite(f)) or np.any(f < 0):
                raise ValueError(f"stage {k}: filter entries must be finite and >= 0")
            if not (np.isfinite(s) and s > 0):
                raise ValueError(f"stage {k}: sigma must be positive, got {s}")
        lowpass = _frozen(self.lowpass)
        if lowpass.ndim != 2 or lowpass.shape[0] % 2 == 0 or lowpass.shape[1] % 2 == 0:
            raise ValueError(f"lowpass must be an odd-sized 2-D kernel, got {lowpass.shape}")
        object.__setattr__(self, "dn_filters", filters)
        object.__setattr__(self, "dn_constants", constants)
        object.__setattr__(self, "lowpass", lowpass)

    @property
    def n_stages(self) -> int:
        return len(self.dn_filters)

    def with_mode(self, mode: str) -> "NlpParams":
        """Same stage count and constants, filters replaced per ``mode``.

        ``"ones"`` sets every filter to all ones; ``"none"`` keeps the
        filters but turns normalisation off.
        """
        if mode == "ones":
            return replace(self, dn_filters=tuple(np.ones(FILTER_SHAPE) for _ in self.dn_filters), dn_mode=mode)
        return replace(self, dn_mode=mode)

    def with_stages(self, filters: Sequence[np.ndarray], constants: Sequence[float], mode: str) -> "NlpParams":
        return replace(self, dn_filters=tuple(filters), dn_constants=tuple(constants), dn_mode=mode)

    def truncated(self, n_stages: int) -> "NlpParams":
        if not 1 <= n_stages <= self.n_stages:
            raise ValueError(f"n_stages must be in [1, {self.n_stages}]")
        return replace(
            self,
            dn_filters=self.dn_filters[:n_stages],
            dn_constants=self.dn_constants[:n_stages],
        )

    def __eq__(self, other):
        if not isinstance(other, NlpParams):
            return NotImplemented
        return (
            self.dn_mode == other.dn_mode
            and self.n_stages == other.n_stages
            and np.array_equal(self.lowpass, other.lowpass)
            and self.dn_constants == other.dn_constants
            and all(np.array_equal(a, b) for a, b in zip(self.dn_filters, other.dn_filters))
        )

    __hash__ = None


@dataclass(frozen=True)
class PyramidOutputs:
    bands_z: list
    bands_y: list

    @property
    def sizes(self) -> list[int]:
        return [b.size for b in self.bands_z]

    @property
    def n_stages(self) -> int:
        return len(self.bands_z)


def _values(x) -> np.ndarray:
    if isinstance(x, MelSpectrogram):
        return x.values
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    return a


def check_stage_sizes(shape: tuple[int, int], n_stages: int) -> None:
    need = 2 ** (n_stages - 1)
    if min(shape) < need:
        suggestion = max(1, int(np.floor(np.log2(max(min(shape), 1)))) + 1)
        raise StageUnderflowError(
            f"input {tuple(shape)} is too small for {n_stages} stages (needs >= {need} per axis); "
            f"use n_stages <= {suggestion}"
        )


def laplacian_bands(x, n_stages: int, lowpass: np.ndarray | None = None) -> list[np.ndarray]:
    """Band-pass residuals ``z`` for each stage; the last entry is the coarsest low-pass."""
    x = _values(x)
    check_stage_sizes(x.shape, n_stages)
    lowpass = binomial_kernel() if lowpass is None else lowpass
    bands = []
    current = x
    for _ in range(n_stages - 1):
        low = downsample2(filter2d(current, lowpass))
        bands.append(current - 4.0 * filter2d(upsample2(low, current.shape), lowpass))
        current = low
    bands.append(current)
    return bands


def reconstruct(bands: Sequence[np.ndarray], lowpass: np.ndarray | None = None) -> np.ndarray:
    """Invert :func:`laplacian_bands`."""
    lowpass = binomial_kernel() if lowpass is None else lowpass
    current = bands[-1]
    for z in reversed(bands[:-1]):
        current = z + 4.0 * filter2d(upsample2(current, z.shape), lowpass)
    return current


def normalize_bands(bands_z: Sequence[np.ndarray], params: NlpParams) -> list[np.ndarray]:
    if params.dn_mode == "none":
        return [z.copy() for z in bands_z]
    return [
        z / (sigma + filter2d(np.abs(z), p))
        for z, p, sigma in zip(bands_z, params.dn_filters, params.dn_constants)
    ]


def build_pyramid(x, params: NlpParams) -> PyramidOutputs:
    bands_z = laplacian_bands(x, params.n_stages, params.lowpass)
    return PyramidOutputs(bands_z, normalize_bands(bands_z, params))


def _check_pair(x1, x2):
    a, b = _values(x1), _values(x2)
    if a.shape != b.shape:
        raise ShapeMismatchError(a.shape, b.shape)
    if isinstance(x1, MelSpectrogram) and isinstance(x2, MelSpectrogram) and x1.config != x2.config:
        raise DataError("spectrograms were generated with different configurations")
    return a, b


def stage_distances(y1: Sequence[np.ndarray], y2: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([np.sqrt(np.sum((a - b) ** 2) / a.size) for a, b in zip(y1, y2)])


def nlpd(x1, x2, params: NlpParams | None = None) -> float:
    """Normalised Laplacian pyramid distance between two equally shaped inputs."""
    params = image_default_params() if params is None else params
    a, b = _check_pair(x1, x2)
    y1 = build_pyramid(a, params).bands_y
    y2 = build_pyramid(b, params).bands_y
    return float(np.mean(stage_distances(y1, y2)))


def params_to_json(params: NlpParams) -> str:
    doc = {
        "version": PARAMS_VERSION,
        "n_stages": params.n_stages,
        "dn_mode": params.dn_mode,
        "lowpass": [float(v) for v in params.lowpass.ravel()],
        "lowpass_shape": list(params.lowpass.shape),
        "stages": [
            {"filter": [float(v) for v in f.ravel()], "sigma": s}
            for f, s in zip(params.dn_filters, params.dn_constants)
        ],
    }
    # json emits repr(), the shortest decimal that round-trips
    return json.dumps(doc, indent=1) + "\n"


def params_from_json(text: str) -> NlpParams:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"parameter file is not valid JSON: {exc}") from exc
    if doc.get("version") != PARAMS_VERSION:
        raise DataError(f"unsupported parameter file version {doc.get('version')!r}")
    try:
        stages = doc["stages"]
        if len(stages) != doc["n_stages"]:
            raise DataError(f"n_stages={doc['n_stages']} but {len(stages)} stage entries")
        lowpass_shape = tuple(doc.get("lowpass_shape", (5, 5)))
        return NlpParams(
            dn_filters=tuple(np.array(s["filter"], dtype=np.float64).reshape(FILTER_SHAPE) for s in stages),
            dn_constants=tuple(float(s["sigma"]) for s in stages),
            lowpass=np.array(doc["lowpass"], dtype=np.float64).reshape(lowpass_shape),
            dn_mode=doc.get("dn_mode", "image_default"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed parameter file: {exc}") from exc


def save_params(path: str | Path, params: NlpParams) -> None:
    Path(path).write_text(params_to_json(params))


def load_params(path: str | Path) -> NlpParams:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read parameter file {path}: {exc.strerror or exc}") from exc
    return params_from_json(text)


def image_default_params(n_stages: int | None = None) -> NlpParams:
    """Divisive-normalisation parameters fitted to natural greyscale images.

    Loaded from the bundled ``data/image_default.json``.
    """
    text = resources.files("specmetric").joinpath("data/image_default.json").read_text()
    params = params_from_json(text)
    return params if n_stages is None else params.truncated(n_stages)
