"""Closed-form noise predictor for the blob dataset.

For ``x0 ~ N(mu, s^2 I)`` and ``x_t = sqrt(a) x0 + sqrt(1-a) eps``,

    E[eps | x_t] = sqrt(1-a) / (a s^2 + 1 - a) * (x_t - sqrt(a) mu).

The null condition is the uniform mixture over the 16 data cells; its
posterior mean weights the per-component estimates by their
responsibilities under ``N(sqrt(a) mu_k, (a s^2 + 1 - a) I)``.
"""
from __future__ import annotations

import math

import numpy as np

from . import data
from .schedule import NoiseSchedule


def _per_component(x_t, a, mu, data_sigma):
    var = a * data_sigma**2 + 1.0 - a
    return math.sqrt(1.0 - a) / var * (x_t - math.sqrt(a) * mu), var


def analytic_epsilon(x_t, t: int, conds, sched: NoiseSchedule, data_sigma: float = 0.05) -> np.ndarray:
    """Exact posterior-mean noise for a batch sharing timestep ``t >= 1``."""
    if int(t) < 1:
        raise ValueError("analytic_epsilon needs t >= 1")
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    conds = np.broadcast_to(np.atleast_2d(conds), (len(x_t), 2))
    a = float(sched.abar(int(t)))
    out = np.empty_like(x_t)

    null = conds[:, 0] < 0
    if np.any(~null):
        out[~null], _ = _per_component(x_t[~null], a, data.mean_images(conds[~null]), data_sigma)
    if np.any(null):
        mus = data.cell_means()  # (K, P)
        xn = x_t[null]
        eps_k, var = _per_component(xn[:, None, :], a, mus[None], data_sigma)  # (B, K, P)
        d2 = ((xn[:, None, :] - math.sqrt(a) * mus[None]) ** 2).sum(-1)
        logw = -0.5 * d2 / var
        logw -= logw.max(axis=1, keepdims=True)
        r = np.exp(logw)
        r /= r.sum(axis=1, keepdims=True)
        out[null] = np.einsum("bk,bkp->bp", r, eps_k)
    return out


class AnalyticDenoiser:
    """Drop-in for :class:`~pladis.diffusion.model.Denoiser`; attention arguments are ignored."""

    def __init__(self, sched: NoiseSchedule, data_sigma: float = 0.05):
        self.sched = sched
        self.data_sigma = data_sigma
        self.nfe = 0

    def __call__(self, x_t, t, conds, attn=None, perturb=None, seg_sigma=math.inf):
        self.nfe += 1
        t = np.atleast_1d(t)
        if np.all(t == t[0]):
            return analytic_epsilon(x_t, int(t[0]), conds, self.sched, self.data_sigma)
        x_t = np.atleast_2d(x_t)
        conds = np.broadcast_to(np.atleast_2d(conds), (len(x_t), 2))
        return np.concatenate([analytic_epsilon(x_t[i:i + 1], int(t[i]), conds[i:i + 1], self.sched,
                                                self.data_sigma) for i in range(len(x_t))])
