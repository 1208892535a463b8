"""Maps from score vectors onto the probability simplex.

All transforms act on the last axis, so a single vector and a stack of
attention-logit rows go through the same code. Outputs follow the threshold
form ``p = [(alpha - 1) * z - tau]_+ ** (1 / (alpha - 1))``; ``tau`` is
reported in that convention for every sparse solver.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class SolverError(RuntimeError):
    """Bisection did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class EntmaxResult(NamedTuple):
    probs: np.ndarray
    tau: np.ndarray
    kappa: np.ndarray


def _as_scores(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise ValueError("score vector must be non-empty")
    if not np.all(np.isfinite(z)):
        raise ValueError("score vector must be finite")
    return z


def check_alpha(alpha: float, lo_open: bool = False) -> float:
    alpha = float(alpha)
    if not (1.0 <= alpha <= 2.0) or (lo_open and alpha == 1.0):
        bound = "(1, 2]" if lo_open else "[1, 2]"
        raise ValueError(f"alpha must lie in {bound}, got {alpha}")
    return alpha


def support(p: np.ndarray) -> np.ndarray:
    """Indices of the nonzero entries of a single probability vector."""
    return np.flatnonzero(np.asarray(p) > 0)


def kappa(p: np.ndarray) -> np.ndarray:
    """Support size along the last axis."""
    return np.count_nonzero(np.asarray(p) > 0, axis=-1)


def softmax(z, beta: float = 1.0) -> np.ndarray:
    z = _as_scores(z)
    if beta <= 0:
        raise ValueError("beta must be positive")
    s = beta * z
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def lse(beta: float, z) -> np.ndarray:
    """``log(sum(exp(beta * z))) / beta`` with a max shift."""
    z = _as_scores(z)
    if beta <= 0:
        raise ValueError("beta must be positive")
    s = beta * z
    smax = s.max(axis=-1)
    return (smax + np.log(np.exp(s - smax[..., None]).sum(axis=-1))) / beta


def _sort_desc(z: np.ndarray) -> np.ndarray:
    # Stable on ties; the threshold only depends on values so ties stay symmetric.
    return -np.sort(-z, axis=-1, kind="stable")


def sparsemax(z) -> EntmaxResult:
    """Euclidean projection onto the simplex by sort-and-threshold."""
    z = _as_scores(z)
    zs = _sort_desc(z)
    k = np.arange(1, z.shape[-1] + 1, dtype=np.float64)
    cums = np.cumsum(zs, axis=-1) - 1.0
    kap = np.count_nonzero(zs - cums / k > 0, axis=-1)
    tau = np.take_along_axis(cums, kap[..., None] - 1, axis=-1)[..., 0] / kap
    p = np.maximum(z - tau[..., None], 0.0)
    return EntmaxResult(p, tau, kappa(p))


def entmax15(z) -> EntmaxResult:
    """Exact 1.5-entmax from the sorted closed form on ``z / 2``."""
    z = _as_scores(z)
    zmax = z.max(axis=-1, keepdims=True)
    x = (z - zmax) / 2.0
    xs = _sort_desc(x)
    k = np.arange(1, z.shape[-1] + 1, dtype=np.float64)
    mean = np.cumsum(xs, axis=-1) / k
    mean_sq = np.cumsum(xs * xs, axis=-1) / k
    ss = k * (mean_sq - mean * mean)
    delta = np.maximum((1.0 - ss) / k, 0.0)
    tau_k = mean - np.sqrt(delta)
    kap = np.count_nonzero(tau_k <= xs, axis=-1)
    tau = np.take_along_axis(tau_k, kap[..., None] - 1, axis=-1)[..., 0]
    p = np.maximum(x - tau[..., None], 0.0) ** 2
    return EntmaxResult(p, tau + zmax[..., 0] / 2.0, kappa(p))


def entmax_bisect(z, alpha: float, tol: float = 1e-12, max_iter: int = 100) -> EntmaxResult:
    """General alpha-entmax by bisection on the threshold.

    Works on ``(alpha - 1) * (z - max z)`` so the bracket is always
    ``[-1, 0]``; the reported ``tau`` is shifted back to the raw scores.
    """
    z = _as_scores(z)
    alpha = check_alpha(alpha, lo_open=True)
    if tol <= 0:
        raise ValueError("tol must be positive")
    am1 = alpha - 1.0
    power = 1.0 / am1
    zmax = z.max(axis=-1, keepdims=True)
    s = am1 * (z - zmax)

    batch = s.shape[:-1]
    lo = np.full(batch, -1.0)
    hi = np.zeros(batch)
    tau = np.empty(batch)
    resid = np.full(batch, np.inf)
    done = np.zeros(batch, dtype=bool)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        mass = (np.maximum(s - mid[..., None], 0.0) ** power).sum(axis=-1)
        err = mass - 1.0
        newly = ~done & (np.abs(err) <= tol)
        tau[newly] = mid[newly]
        resid[newly] = err[newly]
        done |= newly
        if done.all():
            break
        lo = np.where(err > 0, mid, lo)
        hi = np.where(err > 0, hi, mid)
        # keep the last midpoint for rows that never converge
        tau = np.where(done, tau, mid)
        resid = np.where(done, resid, err)
    if not done.all():
        worst = float(np.max(np.abs(resid[~done])))
        raise SolverError(f"entmax bisection did not converge in {max_iter} iterations", worst)

    p = np.maximum(s - tau[..., None], 0.0) ** power
    p = p / p.sum(axis=-1, keepdims=True)
    return EntmaxResult(p, tau + am1 * zmax[..., 0], kappa(p))


def entmax(z, alpha: float) -> np.ndarray:
    alpha = check_alpha(alpha)
    if alpha == 1.0:
        return softmax(z, 1.0)
    if alpha == 1.5:
        return entmax15(z).probs
    if alpha == 2.0:
        return sparsemax(z).probs
    return entmax_bisect(z, alpha, tol=1e-12, max_iter=100).probs


def entmax_threshold(z, alpha: float) -> EntmaxResult:
    """Like ``entmax`` but also returns the threshold; needs ``alpha > 1``."""
    alpha = check_alpha(alpha, lo_open=True)
    if alpha == 1.5:
        return entmax15(z)
    if alpha == 2.0:
        return sparsemax(z)
    return entmax_bisect(z, alpha)


def from_threshold(z, alpha: float, tau) -> np.ndarray:
    """Rebuild probabilities from a threshold via the closed form."""
    z = np.asarray(z, dtype=np.float64)
    am1 = alpha - 1.0
    return np.maximum(am1 * z - np.asarray(tau)[..., None], 0.0) ** (1.0 / am1)


def tsallis_psi(p, alpha: float) -> np.ndarray:
    """Convex regularizer whose argmax-dual is alpha-entmax.

    Negative Tsallis entropy for ``alpha > 1`` and negative Shannon entropy
    (``sum p log p``) at ``alpha == 1``.
    """
    alpha = check_alpha(alpha)
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-6) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("p is not on the probability simplex")
    p = np.clip(p, 0.0, None)
    if alpha == 1.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0, p * np.log(p), 0.0)
        return plogp.sum(axis=-1)
    return -(p - p**alpha).sum(axis=-1) / (alpha * (alpha - 1.0))


def psi_conjugate(beta: float, z, alpha: float) -> np.ndarray:
    """``(1/beta) * max_p <p, beta z> - psi(p)``; equals ``lse`` at alpha 1."""
    alpha = check_alpha(alpha)
    z = _as_scores(z)
    if beta <= 0:
        raise ValueError("beta must be positive")
    if alpha == 1.0:
        return lse(beta, z)
    p = entmax(beta * z, alpha)
    return ((p * (beta * z)).sum(axis=-1) - tsallis_psi(p, alpha)) / beta


def entmax_oracle(z, alpha: float, iters: int = 300, newton_iters: int = 150) -> np.ndarray:
    """Slow reference solver working directly on the regularized objective.

    Maximizes ``<p, z> + H_alpha(p)`` over the simplex. A projected gradient
    ascent phase with diminishing steps (sparsemax as the Euclidean
    projector) finds the active face; Newton steps on that face then polish
    the iterate, re-admitting any coordinate whose gradient beats the
    multiplier. Never touches the threshold formula, so it can check the
    fast solvers independently.
    """
    alpha = check_alpha(alpha, lo_open=True)
    z = _as_scores(z)
    am1 = alpha - 1.0
    const = 1.0 / (alpha * am1)
    z = z - z.max(axis=-1, keepdims=True)

    def grad(p):
        return z + const - p**am1 / am1

    p = np.full(z.shape, 1.0 / z.shape[-1])
    for k in range(iters):
        eta = 0.5 / (1.0 + k / 20.0)
        p = sparsemax(p + eta * grad(p)).probs

    for _ in range(newton_iters):
        g = grad(p)
        act = p > 0
        d = np.where(act, p ** (2.0 - alpha), 0.0)
        nu = (d * g).sum(axis=-1, keepdims=True) / d.sum(axis=-1, keepdims=True)
        # coordinates at zero whose gradient beats the multiplier belong in the support
        enter = ~act & (g > nu + 1e-12)
        if enter.any():
            # enter from below: Newton on the convex stationarity residual then never overshoots
            p = np.where(enter, 1e-12, p)
            p = p / p.sum(axis=-1, keepdims=True)
            continue
        step = d * (g - nu)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(step < 0, -p / step, np.inf)
        t = np.minimum(1.0, ratio.min(axis=-1, keepdims=True))
        # a coordinate that hits the boundary leaves the face
        p = np.where(act & (ratio > t), p + t * step, 0.0)
        p = np.maximum(p, 0.0)
        p = p / p.sum(axis=-1, keepdims=True)
    return p
