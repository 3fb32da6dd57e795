"""scikit-learn style wrappers.

``MelSpectrogramTransformer`` turns waveforms into spectrogram stacks,
``NLPD`` fits divisive normalisation and predicts pair distances, and
``SpectrogramMetric`` exposes the baseline metrics behind the same
``predict``/``score`` interface so they can be swapped in a pipeline or
parameter search.

Pair inputs are arrays of shape ``(n_pairs, 2, rows, cols)`` holding
(reference, degraded) spectrograms.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import baseline_metrics as bm
from ._validation import check_pairs, check_spectrograms, check_waveforms
from .audio_io import Waveform, resample
from .eval_harness import spearman
from .fitting import AdamConfig, PerceptualPair, fit_perceptual, fit_statistical
from .nlp_core import DN_MODES, NlpParams, build_pyramid, image_default_params, load_params, nlpd
from .spectrogram import SpectrogramConfig, mel_spectrogram

__all__ = ["MelSpectrogramTransformer", "NLPD", "SpectrogramMetric"]


class MelSpectrogramTransformer(TransformerMixin, BaseEstimator):
    """Waveforms to a stack of mel spectrograms.

    Parameters
    ----------
    input_rate
        Sample rate of the incoming waveforms; they are resampled to
        ``sample_rate`` when it differs. ``None`` means already at
        ``sample_rate``. Ignored for :class:`Waveform` inputs, which carry
        their own rate.
    """

    def __init__(
        self,
        sample_rate=16050,
        n_fft=2048,
        hop_length=64,
        n_mels=512,
        fmin=0.0,
        fmax=None,
        scale="log_power",
        input_rate=None,
    ):
        self.sample_rate = sample_rate
        self.n_fft = n_fft
        self.hop_length = hop_length
        self.n_mels = n_mels
        self.fmin = fmin
        self.fmax = fmax
        self.scale = scale
        self.input_rate = input_rate

    def fit(self, X=None, y=None):
        self.config_ = SpectrogramConfig(
            n_fft=self.n_fft,
            hop_length=self.hop_length,
            n_mels=self.n_mels,
            sample_rate=self.sample_rate,
            fmin=self.fmin,
            fmax=self.fmax,
            scale=self.scale,
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        if isinstance(X, Waveform) or (isinstance(X, np.ndarray) and X.ndim == 1):
            X = [X]
        out = []
        for item, samples in zip(X, check_waveforms(X)):
            rate = item.sample_rate if isinstance(item, Waveform) else (self.input_rate or self.sample_rate)
            w = resample(Waveform(samples, rate), self.sample_rate)
            out.append(mel_spectrogram(w, self.config_).values)
        shapes = {v.shape for v in out}
        if len(shapes) > 1:
            raise ValueError(f"clips produced different spectrogram shapes {sorted(shapes)}; trim to equal length")
        return np.stack(out)


class NLPD(BaseEstimator):
    """Normalised Laplacian pyramid distance with fittable normalisation.

    ``dn_mode`` picks what :meth:`fit` does:

    * ``"image_default"``, ``"none"``, ``"ones"``: no learning; parameters
      come from ``init_params`` (default: the bundled image-fitted set).
    * ``"statistical"``: ``X`` is a stack of clean spectrograms.
    * ``"perceptual"``: ``X`` is a stack of pairs, ``y`` the ratings and
      ``groups`` the degradation type of each pair.

    ``learning_rate``, ``epochs`` and ``batch_size`` left as ``None`` take the
    defaults of the chosen fit.
    """

    def __init__(
        self,
        n_stages=6,
        dn_mode="image_default",
        init_params=None,
        learning_rate=None,
        epochs=None,
        batch_size=None,
        seed=0,
        rating_sign=-1.0,
        train_sigma=True,
    ):
        self.n_stages = n_stages
        self.dn_mode = dn_mode
        self.init_params = init_params
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.rating_sign = rating_sign
        self.train_sigma = train_sigma

    def _base_params(self) -> NlpParams:
        init = self.init_params
        if init is None:
            return image_default_params(self.n_stages)
        if isinstance(init, (str, Path)):
            init = load_params(init)
        if init.n_stages != self.n_stages:
            raise ValueError(f"init_params has {init.n_stages} stages but n_stages={self.n_stages}")
        return init

    def _adam(self, preset) -> AdamConfig:
        overrides = {"seed": self.seed}
        if self.learning_rate is not None:
            overrides["learning_rate"] = self.learning_rate
        if self.epochs is not None:
            overrides["epochs"] = self.epochs
        if self.batch_size is not None:
            overrides["batch_size"] = self.batch_size
        return preset(**overrides)

    def fit(self, X=None, y=None, groups=None):
        if self.dn_mode not in DN_MODES:
            raise ValueError(f"dn_mode must be one of {DN_MODES}, got {self.dn_mode!r}")
        base = self._base_params()
        self.trace_ = None
        if self.dn_mode == "statistical":
            X = check_spectrograms(X, min_size=2 ** (self.n_stages - 1))
            self.trace_ = fit_statistical(list(X), base, self._adam(AdamConfig.statistical))
            self.params_ = self.trace_.params
        elif self.dn_mode == "perceptual":
            X = check_pairs(X)
            y = np.asarray(y, dtype=np.float64)
            if y.shape != (X.shape[0],):
                raise ValueError(f"need one rating per pair, got {y.shape} for {X.shape[0]} pairs")
            groups = ["all"] * len(y) if groups is None else [str(g) for g in groups]
            pairs = [PerceptualPair(p[0], p[1], r, g) for p, r, g in zip(X, y, groups)]
            self.trace_ = fit_perceptual(
                pairs, base, self._adam(AdamConfig.perceptual), self.rating_sign, self.train_sigma
            )
            self.params_ = self.trace_.params
        else:
            self.params_ = base.with_mode(self.dn_mode)
        return self

    def transform(self, X):
        """Normalised pyramid coefficients, each stage scaled by ``1/sqrt(size)``.

        The NLPD of two inputs is the mean over stages of the Euclidean
        norm of the difference of the matching blocks.
        """
        check_is_fitted(self, "params_")
        X = check_spectrograms(X)
        rows = []
        for x in X:
            y = build_pyramid(x, self.params_).bands_y
            rows.append(np.concatenate([b.ravel() / np.sqrt(b.size) for b in y]))
        return np.stack(rows)

    def predict(self, X):
        """Distance for each (reference, degraded) pair."""
        check_is_fitted(self, "params_")
        X = check_pairs(X)
        return np.array([nlpd(p[0], p[1], self.params_) for p in X])

    def score(self, X, y):
        """Spearman correlation between ``-distance`` and ratings (higher is better)."""
        return spearman(-self.predict(X), y)


_METRICS = {"mse": bm.mse, "ssim": bm.ssim, "msssim": bm.ms_ssim, "nsim": bm.nsim}
_SIMILARITIES = {"ssim", "msssim", "nsim"}


class SpectrogramMetric(BaseEstimator):
    """One of the baseline metrics behind the pair ``predict``/``score`` interface."""

    def __init__(self, metric="msssim", dynamic_range=None):
        self.metric = metric
        self.dynamic_range = dynamic_range

    def fit(self, X=None, y=None):
        if self.metric not in _METRICS:
            raise ValueError(f"metric must be one of {sorted(_METRICS)}, got {self.metric!r}")
        self.config_ = bm.SsimConfig(dynamic_range=self.dynamic_range)
        return self

    def predict(self, X):
        check_is_fitted(self, "config_")
        X = check_pairs(X)
        fn = _METRICS[self.metric]
        if self.metric == "mse":
            return np.array([fn(p[0], p[1]) for p in X])
        return np.array([fn(p[0], p[1], self.config_) for p in X])

    def score(self, X, y):
        """Spearman correlation with ratings, oriented so higher is better."""
        scores = self.predict(X)
        return spearman(scores if self.metric in _SIMILARITIES else -scores, y)
