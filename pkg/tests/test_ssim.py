import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from unrolled_deblur.errors import InvalidInputError
from unrolled_deblur.ssim import DEFAULT_SSIM, SsimConfig, gaussian_window_1d, ssim, ssim_loss_grad


def naive_ssim(u, g, size=11, std=1.5, C1=1e-4, C2=3e-4):
    """Explicit loop over every valid window with its own Gaussian weights."""
    x = np.arange(size) - (size - 1) / 2
    w1 = np.exp(-x ** 2 / (2 * std ** 2))
    w = np.outer(w1, w1)
    w /= w.sum()
    vals = []
    for i in range(u.shape[0] - size + 1):
        for j in range(u.shape[1] - size + 1):
            a = u[i:i + size, j:j + size]
            b = g[i:i + size, j:j + size]
            ma, mb = np.sum(w * a), np.sum(w * b)
            va = np.sum(w * (a - ma) ** 2)
            vb = np.sum(w * (b - mb) ** 2)
            cov = np.sum(w * (a - ma) * (b - mb))
            vals.append((2 * ma * mb + C1) * (2 * cov + C2)
                        / ((ma ** 2 + mb ** 2 + C1) * (va + vb + C2)))
    return float(np.mean(vals))


class TestValue:
    def test_identical_is_one(self, rng):
        g = rng.random((20, 20))
        assert ssim(g, g) == 1.0

    def test_symmetric(self, rng):
        u, g = rng.random((2, 16, 18))
        assert ssim(u, g) == pytest.approx(ssim(g, u), abs=1e-15)

    def test_naive_oracle(self, rng):
        u, g = rng.random((2, 32, 32))
        assert abs(ssim(u, g) - naive_ssim(u, g)) < 1e-10

    def test_naive_oracle_structured(self, rng):
        g = (rng.random((32, 32)) > 0.7).astype(float)
        u = np.clip(g + 0.1 * rng.standard_normal(g.shape), 0, 1)
        assert abs(ssim(u, g) - naive_ssim(u, g)) < 1e-10

    def test_constant_pair(self):
        a = np.full((12, 12), 0.2)
        b = np.full((12, 12), 0.6)
        C1 = DEFAULT_SSIM.C1
        expected = (2 * 0.2 * 0.6 + C1) / (0.04 + 0.36 + C1)
        assert ssim(a, b) == pytest.approx(expected, rel=1e-12)

    def test_window_normalised(self):
        assert gaussian_window_1d().sum() == pytest.approx(1.0, abs=1e-15)
        assert DEFAULT_SSIM.window.sum() == pytest.approx(1.0, abs=1e-14)
        assert DEFAULT_SSIM.n_windows((32, 40)) == 22 * 30

    def test_degradation_lowers(self, rng):
        g = (rng.random((24, 24)) > 0.5).astype(float)
        noise = rng.standard_normal(g.shape)
        vals = [ssim(np.clip(g + s * noise, 0, 1), g) for s in (0.05, 0.2, 0.5)]
        assert vals[0] > vals[1] > vals[2]


class TestErrors:
    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            ssim(np.zeros((12, 12)), np.zeros((12, 13)))

    def test_too_small(self):
        with pytest.raises(InvalidInputError):
            ssim(np.zeros((10, 20)), np.zeros((10, 20)))

    @pytest.mark.parametrize("kw", [dict(size=10), dict(C1=0.0), dict(C2=-1.0)])
    def test_bad_config(self, kw):
        with pytest.raises(InvalidInputError):
            SsimConfig(**kw)


class TestGradient:
    def test_finite_differences(self, rng):
        u, g = rng.random((2, 24, 24))
        loss, grad = ssim_loss_grad(u, g)
        assert loss == pytest.approx(1 - ssim(u, g), abs=1e-15)
        h = 1e-6
        fd = np.zeros_like(u)
        for idx in np.ndindex(u.shape):
            up, um = u.copy(), u.copy()
            up[idx] += h
            um[idx] -= h
            fd[idx] = (ssim_loss_grad(up, g)[0] - ssim_loss_grad(um, g)[0]) / (2 * h)
        assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) < 1e-5

    def test_directional_derivative_small_window(self, rng):
        cfg = SsimConfig(size=5, std=1.0)
        u, g, v = rng.random((3, 9, 11))
        _, grad = ssim_loss_grad(u, g, cfg)
        h = 1e-6
        fd = (ssim_loss_grad(u + h * v, g, cfg)[0] - ssim_loss_grad(u - h * v, g, cfg)[0]) / (2 * h)
        assert np.vdot(grad, v) == pytest.approx(fd, rel=1e-6)

    def test_stationary_at_truth(self, rng):
        g = rng.random((16, 16))
        loss, grad = ssim_loss_grad(g, g)
        assert loss == 0.0
        assert np.max(np.abs(grad)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(u=arrays(np.float64, (12, 13), elements=st.floats(0, 1)),
       g=arrays(np.float64, (12, 13), elements=st.floats(0, 1)))
def test_bounded(u, g):
    s = ssim(u, g)
    assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12
