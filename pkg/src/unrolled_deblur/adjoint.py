"""Reverse-mode differentiation through the unrolled iterations.

Walks the recorded trace backwards, propagating the adjoint ``z`` of the
current iterate and the pending contribution ``r`` to the previous one:

    zt   = Pi'(t[k]) z
    w   -= alpha[k] * [d/dtheta grad_u E(v[k])]^T zt
    a[k] = -grad_u E(v[k])^T zt
    q    = Pi'(vbar[k]) (zt - alpha[k] * Hess_u E(v[k]) zt)
    z    = (1 + beta[k]) q + r
    r    = -beta[k] q

Everything is matrix free: only Hessian-vector and mixed-derivative products
are formed.
"""
from __future__ import annotations

import numpy as np

from .energy import EnergyContext, EnergyParams
from .errors import InvalidInputError
from .imgcore import as_image
from .unroll import UnrollConfig, UnrollTrace, proj_deriv


def backprop_params(trace: UnrollTrace, p: EnergyParams, cfg: UnrollConfig, grad_u_star,
                    ctx: EnergyContext | None = None):
    """Gradient of ``loss(u*)`` w.r.t. ``(r, rho, gamma, delta)`` and ``alpha``.

    ``grad_u_star`` is the derivative of the loss at the output of the
    forward pass that produced ``trace``.  Returns ``(grad_theta, grad_alpha)``
    as arrays of length 4 and K.
    """
    K = cfg.K
    if trace.K != K or len(trace.u) != K + 1:
        raise InvalidInputError(f"trace holds {trace.K} iterations, config expects {K}")
    z = as_image(grad_u_star, "loss gradient")
    if z.shape != trace.u_star.shape:
        raise InvalidInputError("loss gradient shape does not match the trace")
    if ctx is None:
        ctx = EnergyContext(trace.u[0], p)
    eps = cfg.eps

    r = np.zeros_like(z)
    w = np.zeros(4)
    a = np.zeros(K)
    for k in range(K - 1, -1, -1):
        alpha = cfg.alpha[k]
        beta = cfg.beta(k)
        v = trace.v[k]
        zt = proj_deriv(trace.t[k], eps) * z
        if not zt.any():
            # nothing flows back through this step
            z, r = r, np.zeros_like(z)
            continue
        a[k] = -np.vdot(ctx.grad(v), zt)
        w -= alpha * ctx.mixed_grads_dot(v, zt)
        q = proj_deriv(trace.vbar[k], eps) * (zt - alpha * ctx.hvp(v, zt))
        z = (1.0 + beta) * q + r
        r = -beta * q
    return w, a
