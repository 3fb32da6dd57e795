"""Perceptual audio quality from image-quality metrics on mel spectrograms."""

from .audio_io import Waveform, decode_wav, encode_wav_16bit, read_wav, resample, write_wav_16bit
from .baseline_metrics import SsimConfig, ms_ssim, mse, nsim, ssim
from .degradations import DegradationSpec, apply as degrade
from .estimators import NLPD, MelSpectrogramTransformer, SpectrogramMetric
from .eval_harness import EvalReport, RatingRecord, evaluate, load_dataset, pearson, spearman, split_train_test
from .exceptions import DataError, NumericalError, ShapeMismatchError, SpecMetricError
from .fitting import AdamConfig, FitTrace, fit_perceptual, fit_statistical, sigma_init
from .nlp_core import NlpParams, PyramidOutputs, build_pyramid, image_default_params, load_params, nlpd, save_params
from .spectrogram import MelSpectrogram, SpectrogramConfig, mel_spectrogram, stft_power

__version__ = "0.1.0"
