"""Epsilon-insensitive support vector regression with a Gaussian kernel.

The dual problem

    min  1/2 sum (v_s - v*_s)(v_t - v*_t) K(x_s, x_t)
         + eps sum (v_s + v*_s) - sum y_s (v_s - v*_s)
    s.t. sum (v_s - v*_s) = 0,  0 <= v_s, v*_s <= C

is solved by sequential minimal optimisation over the 2S stacked variables
``[v; v*]`` with second-order working-set selection.  The predictor is
``F(x) = sum (v_s - v*_s) K(x_s, x) + b`` and the merit function used for
parameter learning is ``exp(-F(u) / 100)``.

Model file format (text, UTF-8)::

    UNROLLED-DEBLUR-SVR 1
    sigma <float>
    C <float>
    eps_tube <float>
    bias <float>
    shape <rows> <cols>
    downsample <int>
    n_support <S>
    <v_s> <v*_s> <x_1> ... <x_d>      # one line per support vector

Floats are written with ``repr`` so a load/save round trip is exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, NumericFailureError
from .imgcore import as_image, resize, resize_adjoint

log = logging.getLogger(__name__)

MAGIC = "UNROLLED-DEBLUR-SVR 1"
DEFAULT_C = 48.0
DEFAULT_EPS_TUBE = 4.8


def gaussian_kernel(x, xp, sigma: float) -> float:
    x = np.ravel(np.asarray(x, dtype=np.float64))
    xp = np.ravel(np.asarray(xp, dtype=np.float64))
    if x.shape != xp.shape:
        raise InvalidInputError(f"length mismatch: {x.size} vs {xp.size}")
    if not sigma > 0:
        raise InvalidParameterError("sigma must be positive")
    d = x - xp
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between the rows of A and B."""
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def kernel_matrix(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-sq_distances(A, B) / (2.0 * sigma * sigma))


def median_bandwidth(X: np.ndarray) -> float:
    """Median of the pairwise distances between distinct training vectors."""
    d = np.sqrt(sq_distances(X, X)[np.triu_indices(len(X), 1)])
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


@dataclass
class SvrTrainSet:
    """Flattened training images and scores in ``[0, 100]``.

    ``shape`` is the image shape after downsampling by ``downsample``.
    """

    X: np.ndarray
    y: np.ndarray
    shape: tuple[int, int]
    downsample: int = 1

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if len(self.X) != len(self.y):
            raise InvalidInputError("sample and label counts differ")
        if self.X.shape[1] != self.shape[0] * self.shape[1]:
            raise InvalidInputError("vector length does not match the image shape")
        if np.any(self.y < 0) or np.any(self.y > 100):
            raise InvalidInputError("scores must lie in [0, 100]")

    @classmethod
    def from_images(cls, images, scores, downsample: int = 1) -> "SvrTrainSet":
        small = [resize(as_image(im), 1.0 / downsample) for im in images]
        shapes = {s.shape for s in small}
        if len(shapes) != 1:
            raise InvalidInputError("training images must share one shape")
        X = np.stack([s.ravel() for s in small]) if small else np.zeros((0, 0))
        return cls(X, np.asarray(scores, dtype=np.float64), shapes.pop(), downsample)

    def __len__(self):
        return len(self.y)


@dataclass
class SvrModel:
    upsilon: np.ndarray
    upsilon_star: np.ndarray
    vectors: np.ndarray
    bias: float
    sigma: float
    C: float
    eps_tube: float
    shape: tuple[int, int]
    downsample: int = 1
    history: list = field(default_factory=list, repr=False)

    @property
    def coef(self) -> np.ndarray:
        return self.upsilon - self.upsilon_star

    @property
    def input_shape(self) -> tuple[int, int]:
        return (self.shape[0] * self.downsample, self.shape[1] * self.downsample)

    def features(self, x) -> np.ndarray:
        """Map an image (full or already downsampled) or vector to a feature row."""
        x = np.asarray(x, dtype=np.float64)
        d = self.shape[0] * self.shape[1]
        if x.ndim == 2 and x.shape == self.input_shape and self.downsample > 1:
            x = resize(x, 1.0 / self.downsample)
        x = x.ravel()
        if x.size != d:
            raise InvalidInputError(f"input has {x.size} values, model expects {d}")
        return x


# --------------------------------------------------------------------- solver

def dual_objective(coef_pos, coef_neg, Kmat, y, eps_tube) -> float:
    b = coef_pos - coef_neg
    return float(0.5 * b @ Kmat @ b + eps_tube * np.sum(coef_pos + coef_neg) - y @ b)


def _smo(Kmat, y, C, eps_tube, tol, max_iter, record):
    S = len(y)
    z = np.concatenate([np.ones(S), -np.ones(S)])
    Q = np.block([[Kmat, -Kmat], [-Kmat, Kmat]])
    p = np.concatenate([eps_tube - y, eps_tube + y])
    A = np.zeros(2 * S)
    G = p.copy()
    qd = np.diag(Q).copy()
    history = [0.0] if record else []
    tau = 1e-12

    for it in range(max_iter):
        up = ((z > 0) & (A < C)) | ((z < 0) & (A > 0))
        low = ((z < 0) & (A < C)) | ((z > 0) & (A > 0))
        score = -z * G
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        gmax = score[i]
        gmin = score[low].min()
        if gmax - gmin < tol:
            break
        # second-order choice of j among violating low-set members
        cand = np.flatnonzero(low & (score < gmax))
        b = gmax - score[cand]
        a = qd[i] + qd[cand] - 2.0 * z[i] * z[cand] * Q[i, cand]
        a = np.where(a > 0, a, tau)
        j = int(cand[np.argmin(-(b * b) / a)])

        Ai, Aj = A[i], A[j]
        if z[i] != z[j]:
            quad = max(qd[i] + qd[j] + 2.0 * Q[i, j], tau)
            delta = (-G[i] - G[j]) / quad
            diff = Ai - Aj
            ni, nj = Ai + delta, Aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            else:
                if ni < 0:
                    ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            else:
                if nj > C:
                    nj, ni = C, C + diff
        else:
            quad = max(qd[i] + qd[j] - 2.0 * Q[i, j], tau)
            delta = (G[i] - G[j]) / quad
            tot = Ai + Aj
            ni, nj = Ai - delta, Aj + delta
            if tot > C:
                if ni > C:
                    ni, nj = C, tot - C
            else:
                if nj < 0:
                    nj, ni = 0.0, tot
            if tot > C:
                if nj > C:
                    nj, ni = C, tot - C
            else:
                if ni < 0:
                    ni, nj = 0.0, tot
        dAi, dAj = ni - Ai, nj - Aj
        A[i], A[j] = ni, nj
        G += Q[:, i] * dAi + Q[:, j] * dAj
        if record:
            history.append(float(0.5 * A @ (G + p)))
    else:
        log.warning("SMO stopped at the iteration cap (%d)", max_iter)

    # bias from free variables, else the midpoint of the feasible interval
    free = (A > 0) & (A < C)
    score = -z * G
    if free.any():
        bias = float(np.mean(score[free]))
    else:
        up = ((z > 0) & (A < C)) | ((z < 0) & (A > 0))
        low = ((z < 0) & (A < C)) | ((z > 0) & (A > 0))
        hi = score[up].max() if up.any() else np.inf
        lo = score[low].min() if low.any() else -np.inf
        bias = float(0.5 * (hi + lo)) if np.isfinite(hi + lo) else float(np.mean(y))
    return A[:S], A[S:], bias, history


def svr_train(ts: SvrTrainSet, C: float = DEFAULT_C, eps_tube: float = DEFAULT_EPS_TUBE,
              sigma: float | None = None, tol: float = 1e-9, max_iter: int = 100_000,
              record: bool = False, keep_all: bool = False) -> SvrModel:
    """Fit the dual coefficients and bias on ``ts``.

    ``sigma=None`` selects the median pairwise distance.  Only samples with a
    non-zero coefficient are retained unless ``keep_all`` is set.
    """
    if len(ts) < 2:
        raise InvalidInputError("at least two training samples are required")
    if not C > 0 or eps_tube < 0:
        raise InvalidParameterError("need C > 0 and eps_tube >= 0")
    if sigma is None:
        sigma = median_bandwidth(ts.X)
    if not sigma > 0:
        raise InvalidParameterError("sigma must be positive")
    Kmat = kernel_matrix(ts.X, ts.X, sigma)
    up, un, bias, history = _smo(Kmat, ts.y, float(C), float(eps_tube), tol, max_iter, record)
    if not np.isfinite(bias):
        raise NumericFailureError("non-finite SVR bias")
    keep = np.ones(len(ts), bool) if keep_all else (up > 0) | (un > 0)
    return SvrModel(up[keep].copy(), un[keep].copy(), ts.X[keep].copy(), bias, float(sigma),
                    float(C), float(eps_tube), tuple(ts.shape), ts.downsample, history)


def kkt_residuals(model: SvrModel, ts: SvrTrainSet) -> dict:
    """Largest violation of each dual optimality condition on ``ts``.

    The model's retained vectors are matched back to the training rows; rows
    that were pruned carry zero coefficients.
    """
    S = len(ts)
    up = np.zeros(S)
    un = np.zeros(S)
    for vec, a, b in zip(model.vectors, model.upsilon, model.upsilon_star):
        hit = np.flatnonzero(np.all(ts.X == vec, axis=1))
        if hit.size == 0:
            raise InvalidInputError("support vector not found in training set")
        up[hit[0]], un[hit[0]] = a, b
    C, eps, tol_box = model.C, model.eps_tube, 1e-9
    F = np.array([svr_predict(model, x) for x in ts.X])
    err = F - ts.y
    res = {
        "box": float(max(0.0, -min(up.min(), un.min()), max(up.max(), un.max()) - C)),
        "equality": float(abs(np.sum(up - un))),
        "complementarity": float(np.max(up * un)),
    }
    # stationarity: v free -> err = -eps, v* free -> err = +eps
    # v = 0 -> err >= -eps ; v = C -> err <= -eps ; mirrored for v*
    viol = [0.0]
    for s in range(S):
        e = err[s]
        if up[s] <= tol_box:
            viol.append(max(0.0, -eps - e))
        elif up[s] >= C - tol_box:
            viol.append(max(0.0, e + eps))
        else:
            viol.append(abs(e + eps))
        if un[s] <= tol_box:
            viol.append(max(0.0, e - eps))
        elif un[s] >= C - tol_box:
            viol.append(max(0.0, eps - e))
        else:
            viol.append(abs(e - eps))
    res["stationarity"] = float(max(viol))
    zero = (up <= tol_box) & (un <= tol_box)
    res["tube"] = float(np.max(np.abs(err[zero]) - eps, initial=0.0))
    return res


def svr_predict(model: SvrModel, x) -> float:
    xf = model.features(x)
    if len(model.vectors) == 0:
        return float(model.bias)
    k = np.exp(-sq_distances(model.vectors, xf[None, :])[:, 0] / (2.0 * model.sigma ** 2))
    return float(model.coef @ k + model.bias)


def svr_loss_grad(model: SvrModel, u) -> tuple[float, np.ndarray]:
    """``exp(-F(u) / 100)`` and its gradient with respect to ``u``.

    If ``u`` is a full-size image it is downsampled first and the gradient is
    mapped back through the block average.
    """
    u = np.asarray(u, dtype=np.float64)
    full = u.ndim == 2 and u.shape == model.input_shape and model.downsample > 1
    xf = model.features(u)
    if len(model.vectors):
        diff = xf[None, :] - model.vectors
        k = np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * model.sigma ** 2))
        F = float(model.coef @ k + model.bias)
        gF = -((model.coef * k) @ diff) / model.sigma ** 2
    else:
        F = float(model.bias)
        gF = np.zeros_like(xf)
    loss = float(np.exp(-F / 100.0))
    grad = -loss / 100.0 * gF
    if full:
        grad = resize_adjoint(grad.reshape(model.shape), 1.0 / model.downsample, u.shape)
    else:
        grad = grad.reshape(u.shape)
    return loss, grad


# ---------------------------------------------------------------- persistence

def save_model(model: SvrModel, path) -> None:
    lines = [MAGIC,
             f"sigma {model.sigma!r}",
             f"C {model.C!r}",
             f"eps_tube {model.eps_tube!r}",
             f"bias {model.bias!r}",
             f"shape {model.shape[0]} {model.shape[1]}",
             f"downsample {model.downsample}",
             f"n_support {len(model.vectors)}"]
    for a, b, vec in zip(model.upsilon, model.upsilon_star, model.vectors):
        lines.append(" ".join(repr(float(v)) for v in (a, b, *vec)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> SvrModel:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != MAGIC:
        raise InvalidInputError(f"{path}: not an SVR model file (bad header)")
    head = {}
    for line in text[1:8]:
        key, *vals = line.split()
        head[key] = vals
    try:
        shape = (int(head["shape"][0]), int(head["shape"][1]))
        n = int(head["n_support"][0])
        rows = np.array([[float(v) for v in line.split()] for line in text[8:8 + n]])
    except (KeyError, IndexError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed SVR model file") from exc
    rows = rows.reshape(n, 2 + shape[0] * shape[1])
    return SvrModel(rows[:, 0].copy(), rows[:, 1].copy(), rows[:, 2:].copy(),
                    float(head["bias"][0]), float(head["sigma"][0]), float(head["C"][0]),
                    float(head["eps_tube"][0]), shape, int(head["downsample"][0]))
