"""Acceptance gate: one test per criterion, each recorded as a PASS/FAIL line."""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from specmetric.audio_io import write_wav_16bit
from specmetric.baseline_metrics import ms_ssim, mse, nsim, ssim
from specmetric.degradations import DegradationSpec, apply
from specmetric.eval_harness import MetricBinding, SpectrogramLoader, evaluate, load_dataset, pearson, rank_average, spearman
from specmetric.fitting import AdamConfig, fit_stage_filter, fit_statistical, perceptual_objective
from specmetric.nlp_core import image_default_params, laplacian_bands, load_params, nlpd, reconstruct, save_params
from specmetric.spectrogram import SpectrogramConfig, mel_spectrogram

from conftest import music_like
from test_eval_harness import brute_force_ranks, two_pass_pearson
from test_fitting import planted_bands


def test_1_pyramid_reconstruction(criterion):
    with criterion(1, "pyramid reconstruction, 200 matrices, <= 1e-9, < 10 s") as c:
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(200):
            rows, cols = rng.integers(16, 129, size=2)
            n = int(rng.integers(2, 6))
            x = rng.standard_normal((rows, cols)) * rng.uniform(0.1, 100)
            worst = max(worst, float(np.max(np.abs(reconstruct(laplacian_bands(x, n)) - x))))
        elapsed = time.perf_counter() - start
        c.detail = f"max error {worst:.2e}, {elapsed:.2f} s"
        assert worst <= 1e-9
        assert elapsed < 10


def test_2_gradient_correctness(criterion):
    with criterion(2, "perceptual-objective gradients vs central differences, 20 instances, 1e-4 rel, < 60 s") as c:
        rng = np.random.default_rng(2)
        start = time.perf_counter()
        worst = 0.0
        checked = 0
        for _ in range(20):
            refs = rng.standard_normal((4, 8, 8))
            degs = refs + rng.uniform(0.1, 1.0, (4, 1, 1)) * rng.standard_normal((4, 8, 8))
            ratings = rng.uniform(1, 5, 4)
            batch = [(laplacian_bands(a, 2), laplacian_bands(b, 2)) for a, b in zip(refs, degs)]
            filters = [rng.uniform(0.01, 0.2, (5, 5)) for _ in range(2)]
            sigmas = list(rng.uniform(0.1, 1.0, 2))
            _, _, g_f, g_s = perceptual_objective(batch, ratings, filters, sigmas)

            def loss(fs, ss):
                return perceptual_objective(batch, ratings, fs, ss, need_grad=False)[0]

            pairs = []
            for k in range(2):
                for idx in np.ndindex(5, 5):
                    h = 1e-4 * filters[k][idx]
                    up = [f.copy() for f in filters]
                    dn = [f.copy() for f in filters]
                    up[k][idx] += h
                    dn[k][idx] -= h
                    pairs.append(((loss(up, sigmas) - loss(dn, sigmas)) / (2 * h), g_f[k][idx]))
                h = 1e-4 * sigmas[k]
                up, dn = list(sigmas), list(sigmas)
                up[k] += h
                dn[k] -= h
                pairs.append(((loss(filters, up) - loss(filters, dn)) / (2 * h), g_s[k]))
            for fd, g in pairs:
                checked += 1
                # relative error, with a floor far below any gradient of interest
                worst = max(worst, abs(fd - g) / max(abs(fd), 1e-8))
        elapsed = time.perf_counter() - start
        c.detail = f"{checked} partials, max rel error {worst:.2e}, {elapsed:.1f} s"
        assert worst <= 1e-4
        assert elapsed < 60


def test_3_metric_identities(criterion):
    with criterion(3, "metric identities and symmetry, 100 spectrograms") as c:
        rng = np.random.default_rng(3)
        params = image_default_params()
        worst_one = 0.0
        worst_sym = 0.0
        for i in range(100):
            shape = (int(rng.integers(32, 200)), int(rng.integers(32, 200)))
            x = rng.normal(-40, 15, shape)
            y = x + rng.normal(0, rng.uniform(0.5, 10), shape)
            assert nlpd(x, x, params) == 0.0
            assert mse(x, x) == 0.0
            for fn in (ssim, ms_ssim, nsim):
                worst_one = max(worst_one, abs(fn(x, x) - 1.0))
                worst_sym = max(worst_sym, abs(fn(x, y) - fn(y, x)))
            worst_sym = max(worst_sym, abs(nlpd(x, y, params) - nlpd(y, x, params)), abs(mse(x, y) - mse(y, x)))
        c.detail = f"max |s(x,x)-1| {worst_one:.1e}, max asymmetry {worst_sym:.1e}"
        assert worst_one <= 1e-9
        assert worst_sym <= 1e-12


def test_4_statistical_fit(criterion):
    with criterion(4, "statistical fit: 50 spectrograms, loss <= 0.9x initial per stage; planted kernel 1e-2; < 5 min") as c:
        start = time.perf_counter()
        cfg = SpectrogramConfig(n_fft=1024, hop_length=64, n_mels=160)
        train = [mel_spectrogram(music_like(100 + i, 1.1), cfg) for i in range(50)]
        trace = fit_statistical(train, image_default_params(), AdamConfig.statistical())
        ratios = []
        for k in range(1, 7):
            values = trace.values_for(f"stage{k}")
            assert len(values) == 11, f"stage {k} was not fitted"
            ratios.append(values[-1] / values[0])
        bands, kernel, offset = planted_bands(7)
        w, _, _ = fit_stage_filter(bands, offset, np.full((5, 5), 1 / 24), AdamConfig.statistical(epochs=100))
        recovery = float(np.max(np.abs(w - kernel)))
        elapsed = time.perf_counter() - start
        c.detail = f"loss ratios {', '.join(f'{r:.2f}' for r in ratios)}; planted error {recovery:.1e}; {elapsed:.1f} s"
        assert max(ratios) <= 0.9
        assert recovery <= 1e-2
        assert elapsed < 300


def test_5_monotone_severity(criterion):
    with criterion(5, "noise severity: NLPD, MSE up and MS-SSIM down for >= 9/10 clips") as c:
        cfg = SpectrogramConfig()
        params = image_default_params()
        good = 0
        for i in range(10):
            w = music_like(200 + i, 1.0)
            ref = mel_spectrogram(w, cfg)
            scores = []
            for level in (0.1, 0.3, 0.5, 0.7, 0.9):
                deg = mel_spectrogram(apply(w, DegradationSpec("noise", level, seed=i)), cfg)
                scores.append((nlpd(ref, deg, params), mse(ref, deg), ms_ssim(ref, deg)))
            s = np.array(scores)
            d = np.diff(s, axis=0)
            good += bool(np.all(d[:, 0] > 0) and np.all(d[:, 1] > 0) and np.all(d[:, 2] < 0))
        c.detail = f"{good}/10 clips monotone"
        assert good >= 9


def test_6_correlation_oracles(criterion):
    with criterion(6, "spearman exact and pearson 1e-12 vs brute force, 1000 vectors") as c:
        rng = np.random.default_rng(6)
        worst = 0.0
        for i in range(1000):
            n = int(rng.integers(3, 60))
            if i % 2:
                xs = rng.integers(0, 5, n).astype(float)
                ys = rng.integers(0, 5, n).astype(float)
            else:
                xs, ys = rng.standard_normal((2, n))
            if np.ptp(xs) == 0 or np.ptp(ys) == 0:
                xs[0], ys[0] = xs[0] + 1, ys[0] + 1
            rx, ry = brute_force_ranks(list(xs)), brute_force_ranks(list(ys))
            assert np.array_equal(rank_average(xs), rx)
            assert spearman(xs, ys) == pearson(rx, ry)
            worst = max(worst, abs(pearson(xs, ys) - two_pass_pearson(list(xs), list(ys))))
            worst = max(worst, abs(spearman(xs, ys) - two_pass_pearson(list(rx), list(ry))))
        c.detail = f"max pearson deviation {worst:.1e}"
        assert worst <= 1e-12


def test_7_pmqd_reproduction(criterion, tmp_path):
    with criterion(7, "PMQD reproduction (NLPD 0.633, MSE 0.483 +- 0.05; perceptual >= 0.633)") as c:
        manifest = os.environ.get("PMQD_MANIFEST")
        if not manifest:
            pytest.skip("PMQD audio and ratings are not available; set PMQD_MANIFEST to run")
        records = load_dataset(manifest)
        bindings = [
            MetricBinding("nlpd", lambda a, b: nlpd(a, b, image_default_params())),
            MetricBinding("mse", mse),
        ]
        fitted = os.environ.get("PMQD_PERCEPTUAL_PARAMS")
        if fitted:
            perceptual = load_params(fitted)
            bindings.append(MetricBinding("nlpd_perceptual", lambda a, b: nlpd(a, b, perceptual)))
        report = evaluate(records, bindings, loader=SpectrogramLoader(cache_dir=os.environ.get("PMQD_CACHE")))
        got = {b.name: report.cell(b.name, "all").spearman for b in bindings}
        c.detail = ", ".join(f"{k} {v:.3f}" for k, v in got.items())
        # distances fall as ratings rise; the published table reports magnitudes
        assert abs(abs(got["nlpd"]) - 0.633) <= 0.05
        assert abs(abs(got["mse"]) - 0.483) <= 0.05
        if fitted:
            assert abs(got["nlpd_perceptual"]) >= 0.633


def test_8_fit_perceptual_deterministic(criterion, tmp_path):
    with criterion(8, "two seeded fit-perceptual runs give bit-identical parameter files") as c:
        rows = ["clip_id,genre,song,degradation,rating,reference_path,degraded_path"]
        n = 0
        for g in range(2):
            for s in range(2):
                ref = music_like(50 + 10 * g + s, 0.3)
                write_wav_16bit(tmp_path / f"ref{g}{s}.wav", ref)
                for kind in ("waveshape", "lowpass", "limiter", "noise"):
                    for level in (0.2, 0.5, 0.8):
                        n += 1
                        write_wav_16bit(tmp_path / f"d{n}.wav", apply(ref, DegradationSpec(kind, level, seed=n)))
                        rows.append(f"d{n:03d},genre{g},song{s},{kind},{5 - 4 * level:.2f},ref{g}{s}.wav,d{n}.wav")
        (tmp_path / "m.csv").write_text("\n".join(rows) + "\n")
        init = tmp_path / "init.json"
        save_params(init, image_default_params(4))
        outputs = []
        for run in range(2):
            out = tmp_path / f"fit{run}.json"
            cmd = [
                sys.executable, "-m", "specmetric", "fit-perceptual",
                "--train-manifest", str(tmp_path / "m.csv"), "--init", str(init), "--out", str(out),
                "--epochs", "5", "--lr", "0.01", "--seed", "42", "--n-fft", "512", "--n-mels", "64",
            ]
            result = subprocess.run(cmd, capture_output=True, text=True)
            assert result.returncode == 0, result.stderr
            outputs.append(out.read_bytes())
        c.detail = f"{len(outputs[0])} bytes each"
        assert outputs[0] == outputs[1]
        assert outputs[0] != init.read_bytes()
