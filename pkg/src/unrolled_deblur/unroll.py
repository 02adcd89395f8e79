"""Smooth projection onto [0, 1] and the unrolled FISTA-like deblurring pass."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import EnergyContext, EnergyParams
from .errors import InvalidInputError, InvalidParameterError, NumericFailureError
from .imgcore import as_image

PROJ_EPS = 1e-4


def _check_eps(eps: float) -> None:
    if not 0 < eps < 0.5:
        raise InvalidParameterError(f"eps must lie in (0, 0.5), got {eps}")


def proj(x, eps: float = PROJ_EPS):
    """C^1 projection-like map of the reals onto ``[0, 1]``.

    Equal to ``clip(x, 0, 1)`` except on ``[0, eps]`` and ``[1 - eps, 1]``,
    where cubic pieces join the clip with matching slopes.
    """
    _check_eps(eps)
    x = np.asarray(x, dtype=np.float64)
    out = np.array(np.clip(x, 0.0, 1.0))
    lo = (x > 0) & (x < eps)
    hi = (x > 1 - eps) & (x < 1)
    xl = x[lo]
    out[lo] = (2.0 - xl / eps) * xl * xl / eps
    yh = 1.0 - x[hi]
    out[hi] = 1.0 - (2.0 - yh / eps) * yh * yh / eps
    return out if out.ndim else float(out)


def proj_deriv(x, eps: float = PROJ_EPS):
    """Derivative of :func:`proj`."""
    _check_eps(eps)
    x = np.asarray(x, dtype=np.float64)
    out = np.array((x >= eps) & (x <= 1 - eps), dtype=np.float64)
    lo = (x > 0) & (x < eps)
    hi = (x > 1 - eps) & (x < 1)
    xl = x[lo]
    out[lo] = 4.0 * xl / eps - 3.0 * xl * xl / (eps * eps)
    yh = 1.0 - x[hi]
    out[hi] = 4.0 * yh / eps - 3.0 * yh * yh / (eps * eps)
    return out if out.ndim else float(out)


def momentum(k: int) -> float:
    """Extrapolation weight ``(k - 1) / (k + 1)`` of iteration ``k``."""
    return (k - 1.0) / (k + 1.0)


@dataclass(frozen=True)
class UnrollConfig:
    """``alpha[k]`` is the steplength of executed iteration ``k`` (K = len(alpha))."""

    alpha: tuple[float, ...]
    eps: float = PROJ_EPS
    accelerate: bool = True

    def __post_init__(self):
        a = tuple(float(v) for v in self.alpha)
        object.__setattr__(self, "alpha", a)
        if not a:
            raise InvalidParameterError("at least one iteration is required")
        if any(not (v >= 0 and np.isfinite(v)) for v in a):
            raise InvalidParameterError("steplengths must be finite and non-negative")
        _check_eps(self.eps)

    @property
    def K(self) -> int:
        return len(self.alpha)

    def beta(self, k: int) -> float:
        return momentum(k) if self.accelerate else 0.0

    @classmethod
    def constant(cls, K: int, alpha: float, **kw) -> "UnrollConfig":
        return cls(tuple([float(alpha)] * K), **kw)


@dataclass
class UnrollTrace:
    """Intermediate iterates of one forward pass.

    ``u[k]`` for ``k = 0..K`` (``u[K]`` is the output), and per executed
    iteration ``k = 0..K-1`` the extrapolated point ``vbar[k]``, its
    projection ``v[k]`` and the gradient-step point ``t[k]``.
    """

    u: list = field(default_factory=list)
    vbar: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.t)

    @property
    def u_star(self) -> np.ndarray:
        return self.u[-1]


def unroll_forward(f, p: EnergyParams, cfg: UnrollConfig, ctx: EnergyContext | None = None,
                   record: bool = True) -> UnrollTrace:
    """Run ``cfg.K`` iterations starting from ``u(0) = u(-1) = f``.

    With ``record=False`` only the final iterate is kept (``trace.u`` has one
    entry), which is all a plain restoration needs.
    """
    f = as_image(f, "data")
    if ctx is None:
        ctx = EnergyContext(f, p)
    elif ctx.data.shape != f.shape:
        raise InvalidInputError("energy context built for a different image")
    eps = cfg.eps
    trace = UnrollTrace()
    u_prev = f
    u = f
    if record:
        trace.u.append(u)
    for k, a in enumerate(cfg.alpha):
        b = cfg.beta(k)
        vbar = u + b * (u - u_prev)
        v = proj(vbar, eps)
        t = v - a * ctx.grad(v)
        if not np.all(np.isfinite(t)):
            raise NumericFailureError(f"non-finite value at iteration {k}")
        u_prev, u = u, proj(t, eps)
        if record:
            trace.vbar.append(vbar)
            trace.v.append(v)
            trace.t.append(t)
            trace.u.append(u)
    if not record:
        trace.u.append(u)
    return trace


def restore(f, p: EnergyParams, cfg: UnrollConfig) -> np.ndarray:
    """Output of the unrolled procedure for data ``f``."""
    return unroll_forward(f, p, cfg, record=False).u_star
