"""Variational deblurring energy and its derivatives.

    E_f(u, theta) = 1/2 ||H(r) u - f||^2 + rho B(u) + gamma TV(u; delta)

with the bimodal term ``B(u) = 1/2 sum u_i (1 - u_i)`` and the smoothed total
variation ``TV(u; delta) = sum_i sum_j sqrt([grad_i u]_j^2 + delta^2)``, where
``grad_i`` holds the forward differences at pixel ``i`` in both directions
(zero on the last row/column).  ``H(r)`` is convolution with the disc PSF.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .imgcore import as_image, convolve, convolve_adjoint, disc_psf, disc_psf_dr

PARAM_NAMES = ("r", "rho", "gamma", "delta")


@dataclass(frozen=True)
class EnergyParams:
    r: float
    rho: float
    gamma: float
    delta: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite")
        if not self.r > 0:
            raise InvalidParameterError(f"r must be positive, got {self.r}")
        if self.rho < 0 or self.gamma < 0:
            raise InvalidParameterError("rho and gamma must be non-negative")
        if not self.delta > 0:
            raise InvalidParameterError(f"delta must be positive, got {self.delta}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "EnergyParams":
        return cls(*(float(v) for v in a))


def param_index(j) -> int:
    """Map a parameter name or index to its position in ``PARAM_NAMES``."""
    if isinstance(j, str):
        if j not in PARAM_NAMES:
            raise InvalidParameterError(f"unknown parameter {j!r}")
        return PARAM_NAMES.index(j)
    if isinstance(j, (int, np.integer)) and 0 <= j < 4:
        return int(j)
    raise InvalidParameterError(f"invalid parameter index {j!r}")


# ----------------------------------------------------------- finite differences

def grad_op(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences along rows and columns, Neumann boundary."""
    dy = np.zeros_like(u)
    dx = np.zeros_like(u)
    dy[:-1] = u[1:] - u[:-1]
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    return dy, dx


def grad_op_adjoint(py: np.ndarray, px: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`grad_op` (a negative divergence)."""
    out = np.zeros_like(py)
    out[:-1] -= py[:-1]
    out[1:] += py[:-1]
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    return out


class EnergyContext:
    """Energy for a fixed datum ``f`` and parameter vector.

    Holds the PSF of the current radius (and, lazily, its radius derivative)
    so repeated evaluations inside an unrolled loop do not rebuild kernels.
    """

    def __init__(self, f, params: EnergyParams):
        self.data = as_image(f, "data")
        self.params = params
        self.psf = disc_psf(params.r)
        self._psf_dr = None

    @property
    def psf_dr(self) -> np.ndarray:
        if self._psf_dr is None:
            self._psf_dr = disc_psf_dr(self.params.r)
        return self._psf_dr

    def _check(self, u) -> np.ndarray:
        u = as_image(u)
        if u.shape != self.data.shape:
            raise InvalidInputError(f"image shape {u.shape} does not match data {self.data.shape}")
        return u

    def residual(self, u) -> np.ndarray:
        return convolve(u, self.psf) - self.data

    def value(self, u) -> float:
        u = self._check(u)
        p = self.params
        res = self.residual(u)
        dy, dx = grad_op(u)
        d2 = p.delta * p.delta
        tv = np.sqrt(dy * dy + d2).sum() + np.sqrt(dx * dx + d2).sum()
        return float(0.5 * np.vdot(res, res) + p.rho * 0.5 * np.sum(u * (1.0 - u)) + p.gamma * tv)

    def grad(self, u) -> np.ndarray:
        u = self._check(u)
        p = self.params
        g = convolve_adjoint(self.residual(u), self.psf)
        if p.rho:
            g += p.rho * 0.5 * (1.0 - 2.0 * u)
        if p.gamma:
            g += p.gamma * self._tv_grad(u)
        return g

    def _tv_grad(self, u) -> np.ndarray:
        dy, dx = grad_op(u)
        d2 = self.params.delta ** 2
        return grad_op_adjoint(dy / np.sqrt(dy * dy + d2), dx / np.sqrt(dx * dx + d2))

    def hvp(self, u, v) -> np.ndarray:
        """Hessian of ``E`` in ``u`` applied to ``v``."""
        u = self._check(u)
        v = self._check(v)
        p = self.params
        out = convolve_adjoint(convolve(v, self.psf), self.psf)
        if p.rho:
            out -= p.rho * v
        if p.gamma:
            dy, dx = grad_op(u)
            vy, vx = grad_op(v)
            d2 = p.delta ** 2
            cy = d2 / (dy * dy + d2) ** 1.5
            cx = d2 / (dx * dx + d2) ** 1.5
            out += p.gamma * grad_op_adjoint(cy * vy, cx * vx)
        return out

    def mixed_grad(self, u, j) -> np.ndarray:
        """Derivative of ``grad_u E`` with respect to parameter ``j``."""
        u = self._check(u)
        j = param_index(j)
        p = self.params
        if j == 0:
            dk = self.psf_dr
            return (convolve_adjoint(self.residual(u), dk)
                    + convolve_adjoint(convolve(u, dk), self.psf))
        if j == 1:
            return 0.5 * (1.0 - 2.0 * u)
        if j == 2:
            return self._tv_grad(u)
        dy, dx = grad_op(u)
        d = p.delta
        d2 = d * d
        return p.gamma * grad_op_adjoint(-dy * d / (dy * dy + d2) ** 1.5,
                                         -dx * d / (dx * dx + d2) ** 1.5)

    def mixed_grads_dot(self, u, z) -> np.ndarray:
        """``[<d/d theta_j grad_u E(u), z>]_j`` for all four parameters.

        Uses adjoints so only two extra convolutions are needed for ``r``.
        """
        u = self._check(u)
        p = self.params
        dk = self.psf_dr
        res = self.residual(u)
        # <H'^T res + H^T H' u, z> = <res, H' z> + <H' u, H z>
        g_r = np.vdot(res, convolve(z, dk)) + np.vdot(convolve(u, dk), convolve(z, self.psf))
        g_rho = np.vdot(0.5 * (1.0 - 2.0 * u), z)
        dy, dx = grad_op(u)
        zy, zx = grad_op(z)
        d = p.delta
        d2 = d * d
        sy = dy * dy + d2
        sx = dx * dx + d2
        g_gamma = np.vdot(dy / np.sqrt(sy), zy) + np.vdot(dx / np.sqrt(sx), zx)
        g_delta = -p.gamma * d * (np.vdot(dy / sy ** 1.5, zy) + np.vdot(dx / sx ** 1.5, zx))
        return np.array([g_r, g_rho, g_gamma, g_delta], dtype=np.float64)


def _ctx(f, p: EnergyParams) -> EnergyContext:
    return EnergyContext(f, p)


def energy_value(u, f, p: EnergyParams) -> float:
    return _ctx(f, p).value(u)


def energy_grad_u(u, f, p: EnergyParams) -> np.ndarray:
    return _ctx(f, p).grad(u)


def energy_hvp(u, f, p: EnergyParams, v) -> np.ndarray:
    return _ctx(f, p).hvp(u, v)


def energy_mixed_grad(u, f, p: EnergyParams, j) -> np.ndarray:
    return _ctx(f, p).mixed_grad(u, j)


def lipschitz_estimate(gamma: float, delta: float) -> float:
    """Upper bound ``||H||^2 + 8 gamma / delta`` of the smooth part's curvature."""
    return 1.0 + 8.0 * gamma / delta
