"""Upper-level learning of energy parameters and steplengths.

The optimisation variable is ``x = (r, rho, gamma, delta, alpha_0..alpha_{K-1})``
restricted to a box.  The merit is the mean over training samples of
``loss(u*(x))``, where ``u*`` is the unrolled restoration; its gradient comes
from the reverse pass in :mod:`unrolled_deblur.adjoint`.

The solver is a gradient projection method with one Barzilai-Borwein
steplength per parameter group (alternating the two BB rules) and a monotone
Armijo backtracking along the projected direction.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adjoint import backprop_params
from .energy import PARAM_NAMES, EnergyContext, EnergyParams, lipschitz_estimate
from .errors import InvalidInputError, InvalidParameterError, NumericFailureError
from .ssim import DEFAULT_SSIM, SsimConfig, ssim_loss_grad
from .svr import SvrModel, svr_loss_grad
from .unroll import PROJ_EPS, UnrollConfig, restore, unroll_forward

log = logging.getLogger(__name__)

GROUPS = ("r", "rho", "gamma", "delta", "alpha")


# -------------------------------------------------------------- merit functions

class SsimMerit:
    """``1 - SSIM(u, g)``; needs a ground truth per sample."""

    needs_truth = True

    def __init__(self, cfg: SsimConfig = DEFAULT_SSIM):
        self.cfg = cfg

    def __call__(self, u, g):
        if g is None:
            raise InvalidInputError("the SSIM merit needs a ground truth image")
        return ssim_loss_grad(u, g, self.cfg)


class SvrMerit:
    """``exp(-F(u) / 100)`` for a trained quality predictor; ignores ``g``."""

    needs_truth = False

    def __init__(self, model: SvrModel):
        self.model = model

    def __call__(self, u, g=None):
        return svr_loss_grad(self.model, u)


def make_merit(loss, svr_model: SvrModel | None = None):
    if callable(loss):
        return loss
    if loss == "ssim":
        return SsimMerit()
    if loss == "svr":
        if svr_model is None:
            raise InvalidInputError("the SVR merit needs a trained model")
        return SvrMerit(svr_model)
    raise InvalidParameterError(f"unknown loss {loss!r}")


def loss_and_grad(f, g, p: EnergyParams, alpha, merit, eps: float = PROJ_EPS):
    """Merit of the restoration of ``f`` and its gradient in ``theta`` and ``alpha``."""
    ucfg = alpha if isinstance(alpha, UnrollConfig) else UnrollConfig(tuple(alpha), eps)
    ctx = EnergyContext(f, p)
    trace = unroll_forward(f, p, ucfg, ctx)
    loss, gu = merit(trace.u_star, g)
    gt, ga = backprop_params(trace, p, ucfg, gu, ctx)
    return float(loss), gt, ga


def loss_only(f, g, p: EnergyParams, alpha, merit, eps: float = PROJ_EPS) -> float:
    ucfg = alpha if isinstance(alpha, UnrollConfig) else UnrollConfig(tuple(alpha), eps)
    return float(merit(restore(f, p, ucfg), g)[0])


# ----------------------------------------------------------------- configuration

DEFAULT_BOUNDS = {
    "r": (0.5, 20.0),
    "rho": (0.0, 1.0),
    "gamma": (0.0, 1.0),
    "delta": (1e-4, 1.0),
    "alpha": (1e-4, 10.0),
}


@dataclass
class LearnConfig:
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    max_outer_iters: int = 50
    rel_tol: float = 1e-7
    free: tuple = GROUPS
    armijo: float = 1e-4
    max_backtracks: int = 30
    init_move: float = 0.1
    max_move: float = 0.5
    step_bounds: tuple = (1e-12, 1e12)
    eps: float = PROJ_EPS
    n_jobs: int = 1

    def __post_init__(self):
        merged = dict(DEFAULT_BOUNDS)
        merged.update(self.bounds)
        self.bounds = merged
        for name, (lo, hi) in self.bounds.items():
            if name not in GROUPS:
                raise InvalidParameterError(f"unknown parameter group {name!r}")
            if not lo < hi:
                raise InvalidParameterError(f"empty box for {name}: [{lo}, {hi}]")
        if self.bounds["r"][0] <= 0 or self.bounds["delta"][0] <= 0:
            raise InvalidParameterError("boxes for r and delta must stay positive")
        bad = set(self.free) - set(GROUPS)
        if bad:
            raise InvalidParameterError(f"unknown free groups {sorted(bad)}")


@dataclass
class LearnResult:
    theta_star: EnergyParams
    alpha_star: tuple
    loss_history: list
    sample_losses: list
    n_evals: int
    stop_reason: str


def _layout(K: int):
    groups = np.array([0, 1, 2, 3] + [4] * K)
    return groups


def _box(cfg: LearnConfig, K: int):
    lo = np.array([cfg.bounds[n][0] for n in PARAM_NAMES] + [cfg.bounds["alpha"][0]] * K)
    hi = np.array([cfg.bounds[n][1] for n in PARAM_NAMES] + [cfg.bounds["alpha"][1]] * K)
    return lo, hi


def _split(x: np.ndarray):
    return EnergyParams.from_array(x[:4]), tuple(float(a) for a in x[4:])


def default_init(samples, K: int, radii: Sequence[float] = tuple(np.arange(1.0, 8.01, 0.5)),
                 rho: float = 0.01, gamma: float = 0.01, delta: float = 0.01, merit=None):
    """Starting point: constant steplength ``1/L`` and a radius picked by a grid scan.

    With ``merit`` given, each candidate radius is scored by the mean merit of
    the ``K``-step restorations.  Otherwise the relative data-fidelity
    residual ``||H(r) u - f|| / ||f||`` of the restorations is used; it tends
    to favour the smallest radius and is only a fallback.
    """
    alpha = 1.0 / lipschitz_estimate(gamma, delta)
    cfg = UnrollConfig.constant(K, alpha)
    best, best_r = math.inf, float(radii[0])
    for r in radii:
        p = EnergyParams(float(r), rho, gamma, delta)
        score = 0.0
        for f, g in samples:
            f = np.asarray(f, dtype=np.float64)
            u = restore(f, p, cfg)
            if merit is None:
                ctx = EnergyContext(f, p)
                score += np.linalg.norm(ctx.residual(u)) / max(np.linalg.norm(f), 1e-300)
            else:
                score += merit(u, g)[0]
        if score < best:
            best, best_r = score, float(r)
    return EnergyParams(best_r, rho, gamma, delta), (alpha,) * K


# --------------------------------------------------------------------- solver

class _Objective:
    def __init__(self, samples, merit, eps, n_jobs):
        self.samples = list(samples)
        self.merit = merit
        self.eps = eps
        self.n_jobs = n_jobs
        self.n_evals = 0

    def _map(self, fn):
        if self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as ex:
                return list(ex.map(fn, self.samples))
        return [fn(s) for s in self.samples]

    def value(self, x):
        p, alpha = _split(x)
        ucfg = UnrollConfig(alpha, self.eps)
        self.n_evals += 1
        vals = self._map(lambda s: loss_only(s[0], s[1], p, ucfg, self.merit))
        return float(np.mean(vals)), vals

    def value_grad(self, x):
        p, alpha = _split(x)
        ucfg = UnrollConfig(alpha, self.eps)
        self.n_evals += 1
        out = self._map(lambda s: loss_and_grad(s[0], s[1], p, ucfg, self.merit))
        n = len(out)
        loss = sum(o[0] for o in out) / n
        grad = np.concatenate([sum(o[1] for o in out), sum(o[2] for o in out)]) / n
        return float(loss), grad, [o[0] for o in out]


def _safe_value(obj: _Objective, x):
    try:
        v, per = obj.value(x)
    except (NumericFailureError, FloatingPointError):
        return math.inf, None
    return (v, per) if math.isfinite(v) else (math.inf, None)


def learn_params(trainset, init, cfg: LearnConfig = LearnConfig(), loss="ssim",
                 svr_model: SvrModel | None = None,
                 callback: Callable | None = None) -> LearnResult:
    """Minimise the mean merit over ``trainset`` = [(f, g or None), ...].

    ``init`` is ``(EnergyParams, alphas)`` and must lie inside the box.
    """
    merit = make_merit(loss, svr_model)
    samples = [(np.asarray(f, dtype=np.float64), None if g is None else np.asarray(g, np.float64))
               for f, g in trainset]
    if not samples:
        raise InvalidInputError("empty training set")
    if getattr(merit, "needs_truth", False) and any(g is None for _, g in samples):
        raise InvalidInputError("the SSIM merit needs ground truths for all samples")
    p0, alpha0 = init
    K = len(alpha0)
    groups = _layout(K)
    lo, hi = _box(cfg, K)
    free = np.isin(groups, [GROUPS.index(n) for n in cfg.free])
    x = np.concatenate([p0.as_array(), np.asarray(alpha0, float)])
    outside = [i for i in range(x.size) if not lo[i] <= x[i] <= hi[i]]
    if outside:
        i = outside[0]
        name = PARAM_NAMES[i] if i < 4 else f"alpha[{i - 4}]"
        raise InvalidParameterError(f"initial {name} = {x[i]!r} outside [{lo[i]}, {hi[i]}]")

    obj = _Objective(samples, merit, cfg.eps, cfg.n_jobs)
    fx, g, per = obj.value_grad(x)
    if not math.isfinite(fx):
        raise NumericFailureError("merit is not finite at the initial point")
    history = [fx]
    lam_min, lam_max = cfg.step_bounds
    masks = [(groups == k) & free for k in range(5)]

    def move_cap(k, x, g):
        # steplength giving a move of ``max_move`` times the group's magnitude
        m = masks[k]
        gmax = np.max(np.abs(g[m]))
        scale = max(np.max(np.abs(x[m])), 1e-3 * (hi[m][0] - lo[m][0]))
        return cfg.max_move * scale / gmax if gmax > 0 else lam_max

    lam = np.zeros(5)
    for k in range(5):
        if masks[k].any():
            lam[k] = move_cap(k, x, g) * cfg.init_move / cfg.max_move
    lam = np.clip(lam, lam_min, lam_max)
    reason = "max_iter"

    for it in range(cfg.max_outer_iters):
        y_trial = np.clip(x - lam[groups] * g, lo, hi)
        d = np.where(free, y_trial - x, 0.0)
        slope = float(g @ d)
        if not np.any(d) or slope >= 0:
            reason = "stationary"
            break
        eta, accepted, seen_finite = 1.0, False, False
        for _ in range(cfg.max_backtracks):
            xn = np.clip(x + eta * d, lo, hi)
            fn, _ = _safe_value(obj, xn)
            if math.isfinite(fn):
                seen_finite = True
                if fn <= fx + cfg.armijo * eta * slope:
                    accepted = True
                    break
            eta *= 0.5
        if not accepted:
            if not seen_finite:
                raise NumericFailureError(
                    f"merit non-finite for {cfg.max_backtracks} consecutive trial steps")
            reason = "linesearch"
            break
        fn, gn, per = obj.value_grad(xn)
        s, yv = xn - x, gn - g
        for k in range(5):
            mask = masks[k]
            if not mask.any():
                continue
            sy = float(s[mask] @ yv[mask])
            ss = float(s[mask] @ s[mask])
            yy = float(yv[mask] @ yv[mask])
            if sy <= 0 or ss == 0:
                lam[k] = lam[k] * 2.0
            else:
                lam[k] = ss / sy if it % 2 == 0 else sy / yy
            lam[k] = np.clip(min(lam[k], move_cap(k, xn, gn)), lam_min, lam_max)
        rel = abs(fx - fn) / max(abs(fx), 1e-300)
        x, fx, g = xn, fn, gn
        history.append(fx)
        log.info("outer %d: loss %.6g (step %.3g)", it, fx, eta)
        if callback is not None:
            callback(it, x.copy(), fx)
        if rel < cfg.rel_tol:
            reason = "rel_tol"
            break

    p, alpha = _split(x)
    return LearnResult(p, alpha, history, list(per), obj.n_evals, reason)


# ------------------------------------------------------------------ persistence

def save_params(path, p: EnergyParams, alpha, eps: float = PROJ_EPS) -> None:
    """Write ``key = value`` lines; floats use ``repr`` for exact round trips."""
    lines = ["# unrolled-deblur learned parameters",
             f"r = {p.r!r}", f"rho = {p.rho!r}", f"gamma = {p.gamma!r}", f"delta = {p.delta!r}",
             f"eps = {float(eps)!r}", f"K = {len(alpha)}",
             "alpha = " + ", ".join(repr(float(a)) for a in alpha)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path) -> tuple[EnergyParams, UnrollConfig]:
    vals = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise InvalidInputError(f"{path}: malformed line {line!r}")
        vals[key.strip()] = val.strip()
    try:
        p = EnergyParams(*(float(vals[n]) for n in PARAM_NAMES))
        alpha = tuple(float(a) for a in vals["alpha"].split(","))
        K = int(vals.get("K", len(alpha)))
        eps = float(vals.get("eps", PROJ_EPS))
    except (KeyError, ValueError) as exc:
        raise InvalidInputError(f"{path}: incomplete parameter file") from exc
    if K != len(alpha):
        raise InvalidInputError(f"{path}: K = {K} but {len(alpha)} steplengths")
    return p, UnrollConfig(alpha, eps)
