import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import rel_err
from unrolled_deblur.energy import (EnergyContext, EnergyParams, energy_grad_u, energy_hvp,
                                    energy_mixed_grad, energy_value, grad_op, grad_op_adjoint,
                                    param_index)
from unrolled_deblur.errors import InvalidInputError, InvalidParameterError
from unrolled_deblur.imgcore import convolve, convolve_adjoint, disc_psf

P = EnergyParams(r=2.0, rho=0.1, gamma=0.05, delta=0.01)


def naive_energy(u, f, p):
    """Term-by-term scalar loops; blur through the independently tested convolve."""
    hu = convolve(u, disc_psf(p.r))
    h, w = u.shape
    fid = bim = tv = 0.0
    for i in range(h):
        for j in range(w):
            fid += 0.5 * (hu[i, j] - f[i, j]) ** 2
            bim += 0.5 * u[i, j] * (1.0 - u[i, j])
            dy = u[i + 1, j] - u[i, j] if i + 1 < h else 0.0
            dx = u[i, j + 1] - u[i, j] if j + 1 < w else 0.0
            tv += np.sqrt(dy * dy + p.delta ** 2) + np.sqrt(dx * dx + p.delta ** 2)
    return fid + p.rho * bim + p.gamma * tv


@pytest.fixture
def instance(rng):
    u = rng.random((8, 8))
    f = rng.random((8, 8))
    return u, f


class TestParams:
    @pytest.mark.parametrize("kw", [dict(r=0.0), dict(rho=-1.0), dict(gamma=-0.1),
                                    dict(delta=0.0), dict(r=float("nan"))])
    def test_invalid(self, kw):
        base = dict(r=1.0, rho=0.0, gamma=0.0, delta=0.1)
        base.update(kw)
        with pytest.raises(InvalidParameterError):
            EnergyParams(**base)

    def test_array_round_trip(self):
        assert EnergyParams.from_array(P.as_array()) == P

    @pytest.mark.parametrize("j", [4, -1, "sigma", 1.0])
    def test_bad_index(self, j):
        with pytest.raises(InvalidParameterError):
            param_index(j)


class TestValue:
    def test_zero_image(self):
        z = np.zeros((6, 5))
        p = EnergyParams(1.5, 0.3, 0.2, 0.05)
        assert energy_value(z, z, p) == pytest.approx(0.2 * 2 * 30 * 0.05, rel=1e-14)

    def test_half_grey_bimodal(self):
        u = np.full((4, 6), 0.5)
        p = EnergyParams(1.5, 1.0, 0.0, 0.1)
        f = convolve(u, disc_psf(1.5))
        assert energy_value(u, f, p) == pytest.approx(24 / 8, rel=1e-14)

    def test_naive_oracle(self, instance):
        u, f = instance
        assert energy_value(u, f, P) == pytest.approx(naive_energy(u, f, P), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            energy_value(np.zeros((4, 4)), np.zeros((4, 5)), P)

    def test_binary_bimodal_zero(self, rng):
        u = (rng.random((6, 6)) > 0.5).astype(float)
        p = EnergyParams(1.0, 1.0, 0.0, 0.1)
        ctx = EnergyContext(convolve(u, disc_psf(1.0)), p)
        assert ctx.value(u) == pytest.approx(0.0, abs=1e-28)

    def test_convex_without_bimodal(self, rng):
        p = EnergyParams(2.0, 0.0, 0.05, 0.01)
        f = rng.random((8, 8))
        for _ in range(10):
            u1, u2 = rng.random((2, 8, 8))
            t = rng.random()
            lhs = energy_value(t * u1 + (1 - t) * u2, f, p)
            rhs = t * energy_value(u1, f, p) + (1 - t) * energy_value(u2, f, p)
            assert lhs <= rhs + 1e-10


def central_grad(fun, u, step):
    g = np.zeros_like(u)
    for idx in np.ndindex(u.shape):
        h = step * max(1.0, abs(u[idx]))
        up, um = u.copy(), u.copy()
        up[idx] += h
        um[idx] -= h
        g[idx] = (fun(up) - fun(um)) / (2 * h)
    return g


class TestGradient:
    def test_constant_stationary(self):
        u = np.full((7, 7), 0.3)
        p = EnergyParams(2.0, 0.0, 0.1, 0.01)
        f = convolve(u, disc_psf(2.0))
        np.testing.assert_allclose(energy_grad_u(u, f, p), 0.0, atol=1e-14)

    def test_pure_least_squares(self, instance):
        u, f = instance
        p = EnergyParams(2.0, 0.0, 0.0, 0.01)
        k = disc_psf(2.0)
        np.testing.assert_allclose(energy_grad_u(u, f, p),
                                   convolve_adjoint(convolve(u, k) - f, k), atol=1e-14)

    def test_finite_differences(self, instance):
        u, f = instance
        fd = central_grad(lambda x: energy_value(x, f, P), u, 1e-6)
        g = energy_grad_u(u, f, P)
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-6

    def test_grad_op_adjoint(self, rng):
        u = rng.standard_normal((5, 7))
        py, px = rng.standard_normal((2, 5, 7))
        dy, dx = grad_op(u)
        lhs = np.vdot(dy, py) + np.vdot(dx, px)
        assert lhs == pytest.approx(np.vdot(u, grad_op_adjoint(py, px)), rel=1e-12)


class TestHvp:
    def test_quadratic_case(self, instance, rng):
        u, f = instance
        v = rng.standard_normal(u.shape)
        p = EnergyParams(2.0, 0.3, 0.0, 0.01)
        k = disc_psf(2.0)
        np.testing.assert_allclose(energy_hvp(u, f, p, v),
                                   convolve_adjoint(convolve(v, k), k) - 0.3 * v, atol=1e-13)

    def test_zero_direction(self, instance):
        u, f = instance
        assert not np.any(energy_hvp(u, f, P, np.zeros_like(u)))

    def test_directional_difference(self, instance, rng):
        u, f = instance
        p = EnergyParams(2.0, 0.1, 0.05, 0.1)
        v = rng.standard_normal(u.shape)
        h = 1e-5
        fd = (energy_grad_u(u + h * v, f, p) - energy_grad_u(u - h * v, f, p)) / (2 * h)
        assert rel_err(energy_hvp(u, f, p, v), fd) < 1e-5

    def test_symmetric(self, instance, rng):
        u, f = instance
        ctx = EnergyContext(f, P)
        for _ in range(20):
            v, w = rng.standard_normal((2,) + u.shape)
            a = np.vdot(ctx.hvp(u, v), w)
            b = np.vdot(v, ctx.hvp(u, w))
            assert abs(a - b) < 1e-10 * max(1.0, abs(a))


class TestMixed:
    def test_rho_at_half(self):
        u = np.full((5, 5), 0.5)
        assert not np.any(energy_mixed_grad(u, np.zeros_like(u), P, "rho"))

    def test_gamma_on_constant(self):
        u = np.full((5, 5), 0.8)
        assert not np.any(energy_mixed_grad(u, np.zeros_like(u), P, "gamma"))

    @pytest.mark.parametrize("j", range(4))
    def test_finite_differences(self, instance, j):
        u, f = instance
        p = EnergyParams(2.3, 0.1, 0.05, 0.05)
        x = p.as_array()
        h = 1e-5 * x[j]
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        fd = (energy_grad_u(u, f, EnergyParams.from_array(xp))
              - energy_grad_u(u, f, EnergyParams.from_array(xm))) / (2 * h)
        tol = 1e-4 if j == 0 else 1e-5
        assert rel_err(energy_mixed_grad(u, f, p, j), fd) < tol

    def test_dot_matches_images(self, instance, rng):
        u, f = instance
        z = rng.standard_normal(u.shape)
        ctx = EnergyContext(f, P)
        full = [np.vdot(ctx.mixed_grad(u, j), z) for j in range(4)]
        np.testing.assert_allclose(ctx.mixed_grads_dot(u, z), full, rtol=1e-11)


@settings(max_examples=30, deadline=None)
@given(u=arrays(np.float64, (5, 6), elements=st.floats(-2, 2)),
       delta=st.floats(1e-3, 1.0))
def test_tv_majorises_l1(u, delta):
    p = EnergyParams(0.5, 0.0, 1.0, delta)
    dy, dx = grad_op(u)
    tv = energy_value(u, convolve(u, disc_psf(0.5)), p)
    assert tv >= np.abs(dy).sum() + np.abs(dx).sum()
