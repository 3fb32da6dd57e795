import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specmetric.baseline_metrics import (
    PUBLISHED_MSSSIM_WEIGHTS as PUBLISHED,
    MSSSIM_WEIGHTS,
    SsimConfig,
    ms_ssim,
    mse,
    n_msssim_scales,
    nsim,
    ssim,
)
from specmetric.exceptions import DataError, ShapeMismatchError


def window_terms(a, b, L, size=11, sd=1.5, k1=0.01, k2=0.03):
    """Per-window luminance, contrast and structure by direct weighted sums."""
    c = np.arange(size) - size // 2
    w = np.exp(-(c[:, None] ** 2 + c[None, :] ** 2) / (2 * sd**2))
    w /= w.sum()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    c3 = c2 / 2
    out = []
    for i in range(a.shape[0] - size + 1):
        for j in range(a.shape[1] - size + 1):
            pa = a[i : i + size, j : j + size]
            pb = b[i : i + size, j : j + size]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - ma) ** 2)
            vb = np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            lum = (2 * ma * mb + c1) / (ma**2 + mb**2 + c1)
            con = (2 * np.sqrt(va * vb) + c2) / (va + vb + c2)
            st_ = (cov + c3) / (np.sqrt(va * vb) + c3)
            out.append((lum, con, st_))
    return np.array(out)


def pair_range(a, b):
    return max(a.max(), b.max()) - min(a.min(), b.min())


def msssim_oracle(a, b):
    """Direct evaluation with explicit 2x2 block averages between scales."""
    L = pair_range(a, b)
    n = 1
    while n < 5 and min(a.shape) >= 11 * 2**n:
        n += 1
    weights = np.array(PUBLISHED[:n]) / np.sum(PUBLISHED[:n])
    value = 1.0
    for level in range(n):
        t = window_terms(a, b, L)
        if level == n - 1:
            value *= max(np.mean(t[:, 0] * t[:, 1] * t[:, 2]), 0) ** weights[level]
        else:
            value *= max(np.mean(t[:, 1] * t[:, 2]), 0) ** weights[level]
            h, w = a.shape[0] // 2, a.shape[1] // 2
            a = np.array([[a[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean() for j in range(w)] for i in range(h)])
            b = np.array([[b[2 * i : 2 * i + 2, 2 * j : 2 * j + 2].mean() for j in range(w)] for i in range(h)])
    return value


class TestMse:
    def test_examples(self, rng):
        x = rng.standard_normal((5, 5))
        assert mse(x, x) == 0.0
        assert mse(np.zeros((2, 2)), np.ones((2, 2))) == 1.0

    def test_loop_oracle(self, rng):
        a, b = rng.standard_normal((2, 4, 4))
        acc = 0.0
        for i in range(4):
            for j in range(4):
                acc += (a[i, j] - b[i, j]) ** 2
        assert abs(mse(a, b) - acc / 16) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-100, 100).filter(lambda v: abs(v) > 1e-3), st.integers(0, 2**32 - 1))
    def test_quadratic_scaling(self, alpha, seed):
        a, b = np.random.default_rng(seed).standard_normal((2, 6, 7))
        assert mse(alpha * a, alpha * b) == pytest.approx(alpha**2 * mse(a, b), rel=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            mse(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSsim:
    def test_identity(self, rng):
        x = rng.standard_normal((20, 30))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_negated_zero_mean(self):
        # every window must be (near) zero-mean, so use a checkerboard; a random
        # field with nonzero local means flips luminance and structure together
        i, j = np.indices((20, 20))
        x = np.where((i + j) % 2 == 0, 1.0, -1.0)
        assert ssim(x, -x) < -0.9

    def test_negated_random_field_is_not_negative(self, rng):
        x = rng.standard_normal((20, 20))
        x -= x.mean()
        assert ssim(x, -x) > 0

    def test_window_oracle(self, rng):
        a, b = rng.standard_normal((2, 16, 16))
        t = window_terms(a, b, pair_range(a, b))
        assert abs(ssim(a, b) - np.mean(np.prod(t, axis=1))) <= 1e-9

    def test_fixed_dynamic_range(self, rng):
        a, b = rng.standard_normal((2, 14, 15))
        t = window_terms(a, b, 255.0)
        assert abs(ssim(a, b, SsimConfig(dynamic_range=255.0)) - np.mean(np.prod(t, axis=1))) <= 1e-9

    def test_constant_pair(self):
        assert ssim(np.full((12, 12), 3.0), np.full((12, 12), 3.0)) == pytest.approx(1.0)

    def test_too_small(self):
        with pytest.raises(DataError, match="window"):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))

    @pytest.mark.parametrize("kwargs", [{"window_size": 10}, {"k1": 0}, {"dynamic_range": -1.0}, {"msssim_weights": (0.5, 0.6)}])
    def test_config_invariants(self, kwargs):
        with pytest.raises(ValueError):
            SsimConfig(**kwargs)


class TestNsim:
    def test_identity(self, rng):
        x = rng.standard_normal((16, 16))
        assert nsim(x, x) == pytest.approx(1.0, abs=1e-9)

    def test_offset_pair_is_luminance_only(self, rng):
        a = rng.standard_normal((16, 16))
        b = a + 2.5
        t = window_terms(a, b, pair_range(a, b))
        np.testing.assert_allclose(t[:, 2], 1.0, atol=1e-12)
        assert abs(nsim(a, b) - np.mean(t[:, 0])) <= 1e-9

    def test_window_oracle(self, rng):
        a, b = rng.standard_normal((2, 16, 16))
        t = window_terms(a, b, pair_range(a, b))
        assert abs(nsim(a, b) - np.mean(t[:, 0] * t[:, 2])) <= 1e-9


class TestMsSsim:
    def test_identity(self, rng):
        x = rng.standard_normal((64, 64))
        assert ms_ssim(x, x) == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("shape, n", [((32, 32), 2), ((11, 40), 1), ((176, 200), 5), ((100, 300), 4)])
    def test_scale_count(self, shape, n):
        assert n_msssim_scales(shape) == n

    def test_32_uses_two_renormalised_scales(self, rng):
        a, b = rng.standard_normal((2, 32, 32))
        assert abs(ms_ssim(a, b) - msssim_oracle(a, b)) <= 1e-9

    @pytest.mark.slow
    def test_256_oracle(self, rng):
        a = rng.standard_normal((256, 256))
        b = a + 0.5 * rng.standard_normal((256, 256))
        assert abs(ms_ssim(a, b) - msssim_oracle(a, b)) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["ssim", "nsim", "ms_ssim"]))
def test_windowed_metrics_symmetric(seed, name):
    fn = {"ssim": ssim, "nsim": nsim, "ms_ssim": ms_ssim}[name]
    a, b = np.random.default_rng(seed).standard_normal((2, 24, 30))
    assert abs(fn(a, b) - fn(b, a)) <= 1e-12


def test_mse_symmetric_exact(rng):
    a, b = rng.standard_normal((2, 9, 9))
    assert mse(a, b) == mse(b, a)


def test_default_weights_are_normalised_published_values():
    assert sum(PUBLISHED) == pytest.approx(1.0001)
    assert abs(sum(MSSSIM_WEIGHTS) - 1.0) <= 1e-9
    np.testing.assert_allclose(np.array(MSSSIM_WEIGHTS) * 1.0001, PUBLISHED, rtol=1e-12)
