"""SSIM index over valid Gaussian windows and the loss ``1 - SSIM`` with gradient."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError
from .imgcore import as_image


def gaussian_window_1d(size: int = 11, std: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / std) ** 2)
    return g / g.sum()


@dataclass(frozen=True)
class SsimConfig:
    size: int = 11
    std: float = 1.5
    C1: float = 1e-4
    C2: float = 3e-4
    taps: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.size % 2 == 0 or self.size < 1:
            raise InvalidInputError("window size must be odd")
        if not (self.C1 > 0 and self.C2 > 0):
            raise InvalidInputError("stabilisers must be positive")
        object.__setattr__(self, "taps", gaussian_window_1d(self.size, self.std))

    @property
    def window(self) -> np.ndarray:
        """The separable 2-D window as a full matrix (sums to one)."""
        return np.outer(self.taps, self.taps)

    def n_windows(self, shape) -> int:
        return (shape[0] - self.size + 1) * (shape[1] - self.size + 1)


DEFAULT_SSIM = SsimConfig()


def _valid_filter(x: np.ndarray, cfg: SsimConfig) -> np.ndarray:
    c = cfg.size // 2
    y = ndimage.correlate1d(x, cfg.taps, axis=0, mode="constant")
    y = ndimage.correlate1d(y, cfg.taps, axis=1, mode="constant")
    return y[c:x.shape[0] - c, c:x.shape[1] - c]


def _valid_filter_adjoint(y: np.ndarray, cfg: SsimConfig) -> np.ndarray:
    c = cfg.size // 2
    z = np.pad(y, c)
    # symmetric taps: the adjoint of correlation is correlation again
    z = ndimage.correlate1d(z, cfg.taps[::-1], axis=0, mode="constant")
    return ndimage.correlate1d(z, cfg.taps[::-1], axis=1, mode="constant")


def _pair(u, g, cfg: SsimConfig):
    u = as_image(u, "u")
    g = as_image(g, "g")
    if u.shape != g.shape:
        raise InvalidInputError(f"shape mismatch: {u.shape} vs {g.shape}")
    if min(u.shape) < cfg.size:
        raise InvalidInputError(f"image {u.shape} smaller than the {cfg.size}x{cfg.size} window")
    return u, g


def _stats(u, g, cfg: SsimConfig):
    mu_u = _valid_filter(u, cfg)
    mu_g = _valid_filter(g, cfg)
    s_u = _valid_filter(u * u, cfg) - mu_u * mu_u
    s_g = _valid_filter(g * g, cfg) - mu_g * mu_g
    s_ug = _valid_filter(u * g, cfg) - mu_u * mu_g
    a1 = 2.0 * mu_u * mu_g + cfg.C1
    b1 = mu_u * mu_u + mu_g * mu_g + cfg.C1
    a2 = 2.0 * s_ug + cfg.C2
    b2 = s_u + s_g + cfg.C2
    return mu_u, mu_g, a1 / b1, a2 / b2, b1, b2


def ssim(u, g, cfg: SsimConfig = DEFAULT_SSIM) -> float:
    """Mean structural similarity over all valid window placements."""
    u, g = _pair(u, g, cfg)
    _, _, s1, s2, _, _ = _stats(u, g, cfg)
    return float(np.mean(s1 * s2))


def ssim_loss_grad(u, g, cfg: SsimConfig = DEFAULT_SSIM) -> tuple[float, np.ndarray]:
    """``1 - SSIM(u, g)`` and its gradient with respect to ``u``."""
    u, g = _pair(u, g, cfg)
    mu_u, mu_g, s1, s2, b1, b2 = _stats(u, g, cfg)
    m = s1.size
    # partial derivatives of the per-window product S1*S2
    d_mu = 2.0 * s2 / b1 * (mu_g - mu_u * s1)
    d_var = -s1 * s2 / b2
    d_cov = 2.0 * s1 / b2
    a = d_mu - 2.0 * mu_u * d_var - mu_g * d_cov
    grad = (_valid_filter_adjoint(a, cfg)
            + 2.0 * u * _valid_filter_adjoint(d_var, cfg)
            + g * _valid_filter_adjoint(d_cov, cfg))
    return float(1.0 - np.mean(s1 * s2)), -grad / m
