"""Noise schedule, forward noising, Tweedie estimate and the DDIM update."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule; arrays are indexed by timestep with ``alpha_bar[0] = 1``."""

    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 4e-2

    def __post_init__(self):
        if self.T < 1 or not (0 < self.beta_start <= self.beta_end < 1):
            raise ValueError("invalid noise schedule")
        betas = np.concatenate([[0.0], np.linspace(self.beta_start, self.beta_end, self.T)])
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - betas))

    def abar(self, t) -> np.ndarray:
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise IndexError(f"timestep out of range [0, {self.T}]")
        return self.alpha_bar[t]

    def to_dict(self) -> dict:
        return dict(T=self.T, beta_start=self.beta_start, beta_end=self.beta_end)


def _col(a, like):
    # per-sample scalars broadcast over the pixel axis
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(a.shape + (1,) * (np.ndim(like) - a.ndim))


def forward_noising(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    ab = _col(sched.abar(t), x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def tweedie_x0(x_t, eps_hat, t, sched: NoiseSchedule) -> np.ndarray:
    ab = sched.abar(t)
    if np.any(ab <= 0):
        raise ValueError("alpha_bar must be positive for the Tweedie estimate")
    ab = _col(ab, x_t)
    return (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def ddim_step(x_t, eps_hat, t, t_prev, sched: NoiseSchedule) -> np.ndarray:
    """Deterministic DDIM move from ``t`` to ``t_prev < t``."""
    if np.any(np.asarray(t_prev) >= np.asarray(t)):
        raise ValueError("ddim_step needs t_prev < t")
    x0 = tweedie_x0(x_t, eps_hat, t, sched)
    ab_prev = _col(sched.abar(t_prev), x_t)
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat


def timesteps(steps: int, T: int) -> np.ndarray:
    """Evenly spaced descending timesteps ``T = t_0 > ... > t_steps = 0``."""
    if not 1 <= steps <= T:
        raise ValueError(f"steps must be in [1, {T}]")
    return np.round(np.linspace(T, 0, steps + 1)).astype(int)
