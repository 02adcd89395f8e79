import numpy as np
import pytest

from unrolled_deblur.adjoint import backprop_params
from unrolled_deblur.energy import EnergyParams
from unrolled_deblur.errors import InvalidInputError
from unrolled_deblur.imgcore import convolve, disc_psf, disc_psf_dr
from unrolled_deblur.learn import SsimMerit, loss_and_grad, loss_only
from unrolled_deblur.unroll import UnrollConfig, proj, proj_deriv, unroll_forward


def dense_ops(shape, r):
    """Blur, blur-derivative and difference operators as explicit matrices."""
    n = shape[0] * shape[1]
    k, dk = disc_psf(r), disc_psf_dr(r)
    H = np.zeros((n, n))
    Hd = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        H[:, i] = convolve(e.reshape(shape), k).ravel()
        Hd[:, i] = convolve(e.reshape(shape), dk).ravel()
    h, w = shape
    idx = np.arange(n).reshape(shape)
    Dy = np.zeros((n, n))
    Dx = np.zeros((n, n))
    for i in range(h - 1):
        for j in range(w):
            Dy[idx[i, j], idx[i + 1, j]] = 1.0
            Dy[idx[i, j], idx[i, j]] = -1.0
    for i in range(h):
        for j in range(w - 1):
            Dx[idx[i, j], idx[i, j + 1]] = 1.0
            Dx[idx[i, j], idx[i, j]] = -1.0
    return H, Hd, np.vstack([Dy, Dx])


def forward_mode_plain(f, p, alphas, seed):
    """Dense forward-mode sensitivities of projected gradient descent (no momentum)."""
    shape = f.shape
    H, Hd, D = dense_ops(shape, p.r)
    fv = f.ravel()
    n = fv.size
    u = fv.copy()
    J = np.zeros((n, 4 + len(alphas)))  # du/d(theta, alpha)
    for k, a in enumerate(alphas):
        v = proj(u)
        Jv = proj_deriv(u)[:, None] * J
        Du = D @ v
        s = Du * Du + p.delta ** 2
        grad = H.T @ (H @ v - fv) + p.rho * 0.5 * (1 - 2 * v) + p.gamma * D.T @ (Du / np.sqrt(s))
        hess = H.T @ H - p.rho * np.eye(n) + p.gamma * D.T @ np.diag(p.delta ** 2 / s ** 1.5) @ D
        dtheta = np.column_stack([
            Hd.T @ (H @ v - fv) + H.T @ Hd @ v,
            0.5 * (1 - 2 * v),
            D.T @ (Du / np.sqrt(s)),
            p.gamma * D.T @ (-Du * p.delta / s ** 1.5),
        ])
        t = v - a * grad
        Jt = Jv - a * (hess @ Jv)
        Jt[:, :4] -= a * dtheta
        Jt[:, 4 + k] -= grad
        u = proj(t)
        J = proj_deriv(t)[:, None] * Jt
    return u.reshape(shape), seed.ravel() @ J


@pytest.fixture
def small(rng):
    g = (rng.random((6, 6)) > 0.5).astype(float)
    f = np.clip(convolve(g, disc_psf(1.3)) + 0.05 * rng.standard_normal(g.shape), 0, 1)
    return f, g


class TestStructure:
    def test_zero_seed(self, small):
        f, _ = small
        p = EnergyParams(1.3, 0.1, 0.02, 0.1)
        cfg = UnrollConfig.constant(4, 0.6)
        gt, ga = backprop_params(unroll_forward(f, p, cfg), p, cfg, np.zeros_like(f))
        assert not gt.any() and not ga.any()

    def test_linear_in_seed(self, small, rng):
        f, _ = small
        p = EnergyParams(1.3, 0.1, 0.02, 0.1)
        cfg = UnrollConfig.constant(4, 0.6)
        tr = unroll_forward(f, p, cfg)
        s1, s2 = rng.standard_normal((2,) + f.shape)
        a1 = np.concatenate(backprop_params(tr, p, cfg, s1))
        a2 = np.concatenate(backprop_params(tr, p, cfg, s2))
        a12 = np.concatenate(backprop_params(tr, p, cfg, 2.0 * s1 - 3.0 * s2))
        np.testing.assert_allclose(a12, 2.0 * a1 - 3.0 * a2, atol=1e-10)

    def test_trace_mismatch(self, small):
        f, _ = small
        p = EnergyParams(1.3, 0.1, 0.02, 0.1)
        tr = unroll_forward(f, p, UnrollConfig.constant(3, 0.5))
        with pytest.raises(InvalidInputError):
            backprop_params(tr, p, UnrollConfig.constant(4, 0.5), np.ones_like(f))
        with pytest.raises(InvalidInputError):
            backprop_params(tr, p, UnrollConfig.constant(3, 0.5), np.ones((2, 2)))


class TestOneStep:
    def test_rho_by_hand(self, rng):
        # interior data, gamma = rho = 0: Pi acts as the identity throughout
        f = 0.3 + 0.4 * rng.random((7, 7))
        p = EnergyParams(1.0, 0.0, 0.0, 0.1)
        cfg = UnrollConfig((0.5,))
        tr = unroll_forward(f, p, cfg)
        u_star = tr.u_star
        gt, _ = backprop_params(tr, p, cfg, u_star)  # loss = 0.5 ||u||^2
        v0 = tr.v[0]
        assert gt[1] == pytest.approx(-0.5 * np.vdot(0.5 * (1 - 2 * v0), u_star), rel=1e-12)


class TestAgainstForwardMode:
    def test_plain_descent(self, small, rng):
        f, _ = small
        p = EnergyParams(1.3, 0.15, 0.03, 0.2)
        alphas = tuple(rng.uniform(0.3, 0.9, 5))
        cfg = UnrollConfig(alphas, accelerate=False)
        seed = rng.standard_normal(f.shape)
        tr = unroll_forward(f, p, cfg)
        u_ref, J = forward_mode_plain(f, p, alphas, seed)
        np.testing.assert_allclose(tr.u_star, u_ref, atol=1e-12)
        gt, ga = backprop_params(tr, p, cfg, seed)
        np.testing.assert_allclose(np.concatenate([gt, ga]), J, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("accelerate", [True, False])
def test_finite_differences_ssim(rng, accelerate):
    g = (rng.random((12, 12)) > 0.6).astype(float)
    f = np.clip(convolve(g, disc_psf(1.8)) + 0.02 * rng.standard_normal(g.shape), 0, 1)
    p = EnergyParams(1.8, 0.05, 0.02, 0.2)
    cfg = UnrollConfig(tuple(rng.uniform(0.4, 0.9, 5)), accelerate=accelerate)
    merit = SsimMerit()
    _, gt, ga = loss_and_grad(f, g, p, cfg, merit)
    x = np.concatenate([p.as_array(), cfg.alpha])
    for i in range(x.size):
        h = 1e-5 * x[i]
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h

        def value(y):
            return loss_only(f, g, EnergyParams.from_array(y[:4]),
                             UnrollConfig(tuple(y[4:]), accelerate=accelerate), merit)

        fd = (value(xp) - value(xm)) / (2 * h)
        an = gt[i] if i < 4 else ga[i - 4]
        tol = 1e-3 if i == 0 else 1e-4
        assert abs(an - fd) <= tol * max(abs(fd), 1e-7), (i, an, fd)
