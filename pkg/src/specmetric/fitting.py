"""Fitting the divisive-normalisation filters and constants.

Two routes are provided:

* :func:`fit_statistical` fits, stage by stage, a non-negative 5x5 filter
  that predicts each coefficient's amplitude from its neighbours' amplitudes
  on clean (reference) spectrograms.
* :func:`fit_perceptual` adjusts filters and constants to maximise the
  Pearson correlation between NLPD and listener ratings, one degradation
  type per batch.

Both use :func:`adam_step` with gradients from :mod:`specmetric.autodiff`.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .exceptions import DivergenceError, NumericalError
from .nlp_core import FILTER_SHAPE, NlpParams, _values, laplacian_bands

log = logging.getLogger(__name__)

__all__ = [
    "SIGMA_FLOOR",
    "AdamConfig",
    "AdamState",
    "FitTrace",
    "PerceptualPair",
    "adam_step",
    "sigma_init",
    "center_prediction_loss",
    "fit_stage_filter",
    "fit_statistical",
    "perceptual_objective",
    "fit_perceptual",
]

SIGMA_FLOOR = 1e-6
DEGRADATION_ORDER = ("waveshape", "lowpass", "limiter", "noise")

# neighbourhood of the centre-pixel predictor: 5x5 with the centre excluded
NEIGHBOUR_MASK = np.ones(FILTER_SHAPE)
NEIGHBOUR_MASK[2, 2] = 0.0
NEIGHBOUR_MASK.setflags(write=False)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def statistical(cls, **overrides) -> "AdamConfig":
        """Defaults for the centre-pixel fit: lr 0.01, batch 1, 10 epochs."""
        return cls(**{"learning_rate": 0.01, "epochs": 10, "batch_size": 1, **overrides})

    @classmethod
    def perceptual(cls, **overrides) -> "AdamConfig":
        """Defaults for the correlation fit: lr 0.001, 100 epochs, one batch per degradation."""
        return cls(**{"learning_rate": 0.001, "epochs": 100, "batch_size": None, **overrides})


class AdamState(NamedTuple):
    m: np.ndarray
    v: np.ndarray
    t: int

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: AdamState, cfg: AdamConfig
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected ADAM update. Inputs are not modified."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"length mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericalError(f"non-finite gradient at index {int(bad[0])}")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    return params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon), AdamState(m, v, t)


@dataclass
class FitTrace:
    """Outcome of a fit.

    ``objective[e]`` is the summary objective after epoch ``e + 1``;
    ``records`` holds every (epoch, tag, value) row, with epoch 0 giving
    the value at initialisation.
    """

    objective: list[float]
    params: NlpParams
    objective_kind: str
    records: list[tuple[int, str, float]] = field(default_factory=list)

    def values_for(self, tag: str) -> list[float]:
        return [v for _, t, v in self.records if t == tag]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "batch_tag", "objective"])
            for epoch, tag, value in self.records:
                writer.writerow([epoch, tag, repr(float(value))])


def sigma_init(bands_z) -> list[float]:
    """Per-stage mean absolute coefficient, floored at ``SIGMA_FLOOR``.

    ``bands_z`` is either one pyramid (a list of 2-D bands) or a list of
    pyramids, in which case the per-clip means are averaged.
    """
    bands_z = list(bands_z)
    if not bands_z:
        raise ValueError("sigma_init needs at least one band")
    pyramids = [bands_z] if isinstance(bands_z[0], np.ndarray) and bands_z[0].ndim == 2 else [list(p) for p in bands_z]
    n_stages = len(pyramids[0])
    out = []
    for k in range(n_stages):
        means = []
        for pyr in pyramids:
            band = np.asarray(pyr[k], dtype=np.float64)
            if band.size == 0:
                raise ValueError(f"stage {k} band is empty")
            means.append(np.mean(np.abs(band)))
        out.append(max(float(np.mean(means)), SIGMA_FLOOR))
    return out


# --- statistical fit ---------------------------------------------------------


def _center_loss_graph(amplitude: np.ndarray, sigma: float, weights: ad.Var) -> ad.Var:
    pred = sigma + ad.correlate_valid(amplitude, weights * NEIGHBOUR_MASK)
    resid = amplitude[2:-2, 2:-2] - pred
    return ad.mean(resid * resid)


def center_prediction_loss(band: np.ndarray, sigma: float, weights: np.ndarray) -> float:
    """Mean squared error of predicting ``|z|`` from its 24 neighbours.

    Only coefficients whose full 5x5 neighbourhood lies inside the band are
    predicted. The centre tap of ``weights`` is ignored.
    """
    return float(_center_loss_graph(np.abs(band), sigma, ad.const(weights)).value)


def fit_stage_filter(
    bands: Sequence[np.ndarray],
    sigma: float,
    init: np.ndarray,
    opt: AdamConfig,
    stage: int = 0,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[float], float]:
    """Fit one stage's neighbour weights with ADAM.

    Returns the fitted 5x5 filter (centre zero), the training-set loss after
    each epoch and the loss at initialisation.
    """
    amplitudes = [np.abs(np.asarray(b, dtype=np.float64)) for b in bands]
    amplitudes = [a for a in amplitudes if min(a.shape) >= 5]
    if not amplitudes:
        raise ValueError(f"stage {stage}: no band is at least 5x5")
    rng = np.random.Generator(np.random.Philox(opt.seed)) if rng is None else rng
    batch = opt.batch_size or 1

    def dataset_loss(w):
        return float(np.mean([center_prediction_loss(a, sigma, w) for a in amplitudes]))

    weights = np.maximum(np.asarray(init, dtype=np.float64), 0.0) * NEIGHBOUR_MASK
    initial = dataset_loss(weights)
    state = AdamState.zeros(weights.size)
    history = []
    for epoch in range(1, opt.epochs + 1):
        order = rng.permutation(len(amplitudes))
        for start in range(0, len(order), batch):
            w = ad.Var(weights, requires_grad=True)
            members = order[start : start + batch]
            loss = ad.mean(ad.stack([_center_loss_graph(amplitudes[i], sigma, w) for i in members]))
            if not np.isfinite(loss.value):
                raise DivergenceError(epoch, stage)
            loss.backward()
            flat, state = adam_step(weights.ravel(), w.grad.ravel(), state, opt)
            weights = np.maximum(flat.reshape(FILTER_SHAPE), 0.0) * NEIGHBOUR_MASK
        epoch_loss = dataset_loss(weights)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(epoch, stage)
        history.append(epoch_loss)
    return weights, history, initial


def fit_statistical(
    train: Iterable,
    base: NlpParams,
    opt: AdamConfig | None = None,
) -> FitTrace:
    """Fit each stage's filter to predict coefficient amplitude from its neighbours.

    Constants are set from the training bands' mean absolute value and held
    fixed; filters start from ``base`` with the centre tap zeroed.
    """
    opt = AdamConfig.statistical() if opt is None else opt
    pyramids = [laplacian_bands(_values(x), base.n_stages, base.lowpass) for x in train]
    if not pyramids:
        raise ValueError("fit_statistical needs at least one training spectrogram")
    sigmas = sigma_init(pyramids)
    rng = np.random.Generator(np.random.Philox(opt.seed))

    filters = []
    records = []
    per_epoch = np.zeros((opt.epochs, base.n_stages))
    for k in range(base.n_stages):
        bands = [p[k] for p in pyramids]
        tag = f"stage{k + 1}"
        if min(bands[0].shape) < 5:
            log.warning("stage %d band %s is smaller than 5x5; keeping the initial filter", k + 1, bands[0].shape)
            filters.append(np.asarray(base.dn_filters[k]) * NEIGHBOUR_MASK)
            records.append((0, tag, float("nan")))
            per_epoch[:, k] = np.nan
            continue
        w, history, initial = fit_stage_filter(bands, sigmas[k], base.dn_filters[k], opt, stage=k + 1, rng=rng)
        log.info("%s: loss %.6g -> %.6g", tag, initial, history[-1])
        filters.append(w)
        records.append((0, tag, initial))
        records.extend((e + 1, tag, v) for e, v in enumerate(history))
        per_epoch[:, k] = history

    records.sort(key=lambda r: (r[0], int(r[1][5:])))
    params = base.with_stages(filters, sigmas, "statistical")
    objective = [float(np.nanmean(row)) if np.any(np.isfinite(row)) else float("nan") for row in per_epoch]
    return FitTrace(objective, params, "center_pixel_mse", records)


# --- perceptual fit ----------------------------------------------------------


@dataclass(frozen=True)
class PerceptualPair:
    reference: object
    degraded: object
    rating: float
    degradation: str = "all"


def _as_pair(item) -> PerceptualPair:
    if isinstance(item, PerceptualPair):
        return item
    return PerceptualPair(*item)


def _nlpd_graph(bands_a, bands_b, filters, sigmas) -> ad.Var:
    """NLPD of two fixed pyramids as a function of the normalisation parameters."""
    stage_terms = []
    for za, zb, p, s in zip(bands_a, bands_b, filters, sigmas):
        ya = za / (s + ad.filter2d(np.abs(za), p))
        yb = zb / (s + ad.filter2d(np.abs(zb), p))
        diff = ya - yb
        stage_terms.append(ad.sqrt(ad.total(diff * diff) * (1.0 / za.size)))
    return ad.mean(ad.stack(stage_terms))


def perceptual_objective(
    batch: Sequence[tuple[list, list]],
    ratings: np.ndarray,
    filters: Sequence[np.ndarray],
    sigmas: Sequence[float],
    rating_sign: float = -1.0,
    need_grad: bool = True,
):
    """Negative Pearson correlation between NLPD and ``rating_sign * ratings``.

    ``batch`` holds precomputed (reference bands, degraded bands) per pair.
    Returns ``(loss, distances, filter_grads, sigma_grads)``; the gradients
    are ``None`` when ``need_grad`` is false.
    """
    p_vars = [ad.Var(f, requires_grad=need_grad) for f in filters]
    s_vars = [ad.Var(s, requires_grad=need_grad) for s in sigmas]
    distances = ad.stack([_nlpd_graph(a, b, p_vars, s_vars) for a, b in batch])
    loss = -ad.pearson(distances, rating_sign * np.asarray(ratings, dtype=np.float64))
    if not need_grad:
        return float(loss.value), distances.value, None, None
    loss.backward()
    return (
        float(loss.value),
        distances.value,
        [v.grad for v in p_vars],
        [float(v.grad) for v in s_vars],
    )


def _batches(pairs: Sequence[PerceptualPair], opt: AdamConfig, rng: np.random.Generator):
    tags = sorted(
        {p.degradation for p in pairs},
        key=lambda t: (DEGRADATION_ORDER.index(t) if t in DEGRADATION_ORDER else len(DEGRADATION_ORDER), t),
    )
    out = []
    for tag in tags:
        idx = np.array([i for i, p in enumerate(pairs) if p.degradation == tag])
        idx = idx[rng.permutation(len(idx))]
        size = opt.batch_size or len(idx)
        chunks = [idx[i : i + size] for i in range(0, len(idx), size)]
        if len(chunks) > 1 and len(chunks[-1]) < 3:
            chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
        out.extend((tag, c) for c in chunks)
    return out


def fit_perceptual(
    pairs: Iterable,
    base: NlpParams,
    opt: AdamConfig | None = None,
    rating_sign: float = -1.0,
    train_sigma: bool = True,
) -> FitTrace:
    """Fit filters (and constants) to maximise correlation with ratings.

    Each batch holds pairs of a single degradation type. With the default
    ``rating_sign=-1`` the fit maximises Pearson(NLPD, -rating), i.e. larger
    distances should go with worse ratings. Constants start at the mean
    absolute band value of the reference spectrograms; filters start from
    ``base``.
    """
    opt = AdamConfig.perceptual() if opt is None else opt
    pairs = [_as_pair(p) for p in pairs]
    if not pairs:
        raise ValueError("fit_perceptual needs at least one pair")
    n = base.n_stages

    def bands(x):
        return laplacian_bands(_values(x), n, base.lowpass)

    cache: dict[int, list] = {}

    def cached(x):
        key = id(x)
        if key not in cache:
            cache[key] = bands(x)
        return cache[key]

    pyramids = [(cached(p.reference), cached(p.degraded)) for p in pairs]
    ratings = np.array([p.rating for p in pairs], dtype=np.float64)
    refs = {id(p.reference): cached(p.reference) for p in pairs}
    sigmas = np.array(sigma_init(list(refs.values())))
    filters = np.stack([np.asarray(f, dtype=np.float64) for f in base.dn_filters])

    rng = np.random.Generator(np.random.Philox(opt.seed))
    batches = _batches(pairs, opt, rng)
    state = AdamState.zeros(filters.size + n)
    records = []
    objective = []
    any_used = False

    for epoch in range(0, opt.epochs + 1):
        values = []
        for tag, idx in batches:
            batch = [pyramids[i] for i in idx]
            r = ratings[idx]
            train_step = epoch > 0
            if len(idx) < 3 or np.ptp(r) == 0:
                if epoch <= 1:
                    log.warning("skipping %s batch of %d pairs: ratings have no spread", tag, len(idx))
                continue
            loss, dist, g_f, g_s = perceptual_objective(
                batch, r, list(filters), list(sigmas), rating_sign, need_grad=train_step
            )
            if np.ptp(dist) == 0 or not np.isfinite(loss):
                if not np.isfinite(loss) and np.ptp(dist) > 0:
                    raise DivergenceError(epoch, detail=f"non-finite objective in {tag} batch")
                if epoch <= 1:
                    log.warning("skipping %s batch: distances have no spread", tag)
                continue
            any_used = True
            values.append(-loss)
            if train_step:
                grad = np.concatenate([np.stack(g_f).ravel(), np.array(g_s) if train_sigma else np.zeros(n)])
                flat, state = adam_step(np.concatenate([filters.ravel(), sigmas]), grad, state, opt)
                filters = np.maximum(flat[: filters.size].reshape(filters.shape), 0.0)
                sigmas = np.maximum(flat[filters.size :], SIGMA_FLOOR)
            records.append((epoch, tag, -loss))
        if epoch > 0:
            objective.append(float(np.mean(values)) if values else float("nan"))
            log.debug("epoch %d: mean correlation %.6f", epoch, objective[-1])

    if not any_used:
        raise NumericalError("every batch was skipped: ratings or distances have zero variance")
    params = base.with_stages(list(filters), list(sigmas), "perceptual")
    return FitTrace(objective, params, "pearson", records)
