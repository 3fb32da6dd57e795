import numpy as np
import pytest

from specmetric import autodiff as ad
from specmetric._filters import filter2d as plain_filter2d


def numeric_grad(fn, x, eps=1e-6):
    """Central differences of scalar ``fn`` at ``x``."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[idx] = eps
        grad[idx] = (fn(x + step) - fn(x - step)) / (2 * eps)
    return grad


def tape_grad(build, *arrays):
    leaves = [ad.Var(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    out.backward()
    return out.value, [leaf.grad for leaf in leaves]


def check(build, *arrays, rtol=1e-6, atol=1e-8):
    value, grads = tape_grad(build, *arrays)
    for i, a in enumerate(arrays):
        def scalar(v, i=i):
            args = list(arrays)
            args[i] = v
            return float(build(*[ad.Var(x) for x in args]).value)

        np.testing.assert_allclose(grads[i], numeric_grad(scalar, a), rtol=rtol, atol=atol)


class TestElementwise:
    def test_arithmetic(self, rng):
        a, b = rng.uniform(0.5, 2.0, (2, 3, 4))
        check(lambda x, y: ad.total((x + y) * (x - y) / y - (-x) + 2.0 * x / 3.0 + 1.0 / y), a, b)

    def test_broadcast_scalar(self, rng):
        a = rng.standard_normal((3, 3))
        s = np.array(0.7)
        check(lambda x, k: ad.total(x / (k + ad.absolute(x))), a, s)

    def test_rsub_rtruediv(self, rng):
        a = rng.uniform(1, 2, 5)
        check(lambda x: ad.total(3.0 - x) + ad.total(2.0 / x), a)

    def test_absolute_and_sqrt(self, rng):
        a = rng.uniform(0.1, 2.0, 6) * rng.choice([-1, 1], 6)
        check(lambda x: ad.total(ad.sqrt(ad.absolute(x) + 0.5)), a)

    def test_subgradients_at_zero(self):
        x = ad.Var(np.zeros(3), requires_grad=True)
        ad.total(ad.absolute(x)).backward()
        np.testing.assert_array_equal(x.grad, 0.0)
        y = ad.Var(np.zeros(2), requires_grad=True)
        ad.total(ad.sqrt(y)).backward()
        np.testing.assert_array_equal(y.grad, 0.0)

    def test_mean_and_stack(self, rng):
        a, b = rng.standard_normal((2, 4))
        check(lambda x, y: ad.mean(ad.stack([ad.total(x * x), ad.total(x * y), ad.mean(y)]) * 2.0), a, b)

    def test_shared_subexpression_accumulates(self):
        x = ad.Var(np.array(3.0), requires_grad=True)
        y = x * x
        (y + y).backward()
        assert x.grad == pytest.approx(12.0)

    def test_constants_get_no_grad(self):
        c = ad.Var(np.ones(3))
        x = ad.Var(np.ones(3), requires_grad=True)
        ad.total(c * x).backward()
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, 1.0)


class TestFilters:
    @pytest.mark.parametrize("shape", [(7, 9), (5, 5), (2, 3), (1, 6)])
    def test_filter2d_both_arguments(self, rng, shape):
        x = rng.standard_normal(shape)
        k = rng.standard_normal((5, 5))
        weights = rng.standard_normal(shape)
        check(lambda a, b: ad.total(ad.filter2d(a, b) * weights), x, k)

    def test_filter2d_value_matches_plain(self, rng):
        x = rng.standard_normal((6, 11))
        k = rng.standard_normal((5, 5))
        np.testing.assert_array_equal(ad.filter2d(ad.Var(x), ad.Var(k)).value, plain_filter2d(x, k))

    def test_correlate_valid(self, rng):
        x = rng.standard_normal((8, 7))
        k = rng.standard_normal((5, 5))
        weights = rng.standard_normal((4, 3))
        check(lambda a, b: ad.total(ad.correlate_valid(a, b) * weights), x, k)

    @pytest.mark.parametrize("shape", [(6, 6), (7, 5)])
    def test_resampling(self, rng, shape):
        x = rng.standard_normal(shape)
        small = rng.standard_normal((-(-shape[0] // 2), -(-shape[1] // 2)))
        w_small = rng.standard_normal(small.shape)
        w_big = rng.standard_normal(shape)
        check(lambda a: ad.total(ad.downsample2(a) * w_small), x)
        check(lambda a: ad.total(ad.upsample2(a, shape) * w_big), small)


class TestPearson:
    def test_value(self, rng):
        a, b = rng.standard_normal((2, 20))
        out = ad.pearson(ad.Var(a), ad.Var(b)).value
        assert float(out) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)

    def test_gradient(self, rng):
        a, b = rng.standard_normal((2, 8))
        check(lambda x, y: ad.pearson(x, y), a, b)
