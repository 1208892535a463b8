"""Guided DDIM sampling with optional PLADIS cross-attention."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..attention import BASELINE, AttentionConfig
from . import data
from .schedule import NoiseSchedule, ddim_step, timesteps

METHODS = ("none", "cfg", "pag", "seg")
NFE_PER_STEP = {"none": 1, "cfg": 2, "pag": 2, "seg": 2}


@dataclass(frozen=True)
class GuidanceConfig:
    """``w`` scales CFG, ``s`` scales PAG/SEG. ``pladis_in_uncond=False`` keeps the
    null-condition branch on plain attention."""

    method: str = "none"
    w: float | None = None
    s: float | None = None
    seg_sigma: float | None = None
    pladis_in_uncond: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown guidance method {self.method!r}")
        if self.method == "cfg" and self.w is None:
            raise ValueError("cfg guidance needs w")
        if self.method in ("pag", "seg") and self.s is None:
            raise ValueError(f"{self.method} guidance needs s")
        if self.method == "seg" and self.seg_sigma is None:
            raise ValueError("seg guidance needs seg_sigma")
        for v in (self.w, self.s):
            if v is not None and not math.isfinite(v):
                raise ValueError("guidance scales must be finite")
        if self.seg_sigma is not None and not self.seg_sigma > 0:
            raise ValueError("seg_sigma must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    seed: int = 0
    attn: AttentionConfig = field(default=BASELINE)


@dataclass
class SampleResult:
    images: np.ndarray
    trajectory: list | None
    nfe: int


def guided_epsilon(x_t, t, conds, denoiser, g: GuidanceConfig, attn: AttentionConfig = BASELINE) -> np.ndarray:
    eps_c = denoiser(x_t, t, conds, attn)
    if g.method == "none":
        return eps_c
    if g.method == "cfg":
        uncond_attn = attn if g.pladis_in_uncond else BASELINE
        eps_u = denoiser(x_t, t, data.null_conds(len(np.atleast_2d(x_t))), uncond_attn)
        return eps_c + g.w * (eps_c - eps_u)
    if g.method == "pag":
        eps_w = denoiser(x_t, t, conds, attn, perturb="identity")
    else:
        eps_w = denoiser(x_t, t, conds, attn, perturb="blur", seg_sigma=g.seg_sigma)
    return eps_c + g.s * (eps_c - eps_w)


def initial_noise(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, data.PIXELS))


def sample(denoiser, conds, sched: NoiseSchedule, sampler: SamplerConfig = SamplerConfig(),
           g: GuidanceConfig = GuidanceConfig(), keep_trajectory: bool = False) -> SampleResult:
    """DDIM from ``x_T ~ N(0, I)`` (drawn from ``sampler.seed``) to ``t = 0``."""
    conds = np.atleast_2d(np.asarray(conds, dtype=np.int64))
    ts = timesteps(sampler.steps, sched.T)
    x = initial_noise(len(conds), sampler.seed)
    traj = [x.copy()] if keep_trajectory else None
    start = denoiser.nfe
    for t, t_prev in zip(ts[:-1], ts[1:]):
        eps = guided_epsilon(x, int(t), conds, denoiser, g, sampler.attn)
        x = ddim_step(x, eps, int(t), int(t_prev), sched)
        if keep_trajectory:
            traj.append(x.copy())
    return SampleResult(x, traj, denoiser.nfe - start)
