"""Denoising score matching: the loss, and Adam training through a torch twin.

The twin reproduces :func:`pladis.diffusion.model.forward` with dense
softmax attention only; training never sees PLADIS. Parameters go in and
come out as the numpy dict used everywhere else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import data, model
from .model import ModelConfig
from .schedule import NoiseSchedule, forward_noising


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    width: int = 64
    blocks: int = 2
    heads: int = 2
    lr: float = 2e-3
    batch: int = 64
    iters: int = 800
    cond_dropout: float = 0.1
    grad_clip: float = 1.0

    def __post_init__(self):
        if min(self.width, self.blocks, self.heads, self.batch) < 1 or self.lr <= 0 or self.iters < 0:
            raise ValueError("training hyperparameters must be positive")
        if not 0 <= self.cond_dropout < 1:
            raise ValueError("cond_dropout must be in [0, 1)")

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.width, self.blocks, self.heads)


@dataclass
class TrainResult:
    params: dict
    losses: list = field(default_factory=list)
    config: TrainConfig = TrainConfig()

    def smoothed(self, window: int = 50) -> np.ndarray:
        x = np.asarray(self.losses, dtype=np.float64)
        if len(x) < window:
            return x
        return np.convolve(x, np.ones(window) / window, mode="valid")


def draw_dsm_batch(x0, conds, sched: NoiseSchedule, cond_dropout_p: float, rng: np.random.Generator):
    """``t ~ U{1..T}``, ``eps ~ N(0, I)``, condition replaced by null with prob ``p``."""
    n = len(x0)
    t = rng.integers(1, sched.T + 1, size=n)
    eps = rng.standard_normal(np.shape(x0))
    drop = rng.random(n) < cond_dropout_p
    c = np.array(conds, dtype=np.int64, copy=True)
    c[drop] = data.NULL
    return forward_noising(x0, t, eps, sched), t, c, eps


def dsm_loss(denoiser, x0, conds, sched: NoiseSchedule, cond_dropout_p: float = 0.1, seed: int = 0) -> float:
    """Mean per-pixel squared error of the noise prediction.

    ``denoiser`` is a parameter dict or any callable ``(x_t, t, conds) -> eps``.
    """
    if not 0 <= cond_dropout_p < 1:
        raise ValueError("cond_dropout_p must be in [0, 1)")
    if isinstance(denoiser, dict):
        denoiser = model.Denoiser(denoiser, _infer_config(denoiser))
    x_t, t, c, eps = draw_dsm_batch(np.asarray(x0, dtype=np.float64), conds, sched, cond_dropout_p,
                                    np.random.default_rng(seed))
    return float(np.mean((denoiser(x_t, t, c) - eps) ** 2))


def _infer_config(params) -> ModelConfig:
    width = params["in_w"].shape[1]
    blocks = sum(1 for k in params if k.endswith(".ln1_g"))
    return ModelConfig(width=width, blocks=blocks)


# -- torch twin ----------------------------------------------------------------

def _ln(x, g, b):
    return torch.nn.functional.layer_norm(x, x.shape[-1:], g, b, eps=model.LN_EPS)


def _gelu(x):
    return 0.5 * x * (1.0 + torch.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def _mha(x, ctx, p, pre, heads):
    B, N, W = x.shape
    dh = W // heads
    q = (x @ p[pre + "wq"]).view(B, N, heads, dh).transpose(1, 2)
    k = (ctx @ p[pre + "wk"]).view(B, ctx.shape[1], heads, dh).transpose(1, 2)
    v = (ctx @ p[pre + "wv"]).view(B, ctx.shape[1], heads, dh).transpose(1, 2)
    w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
    out = (w @ v).transpose(1, 2).reshape(B, N, W)
    return out @ p[pre + "wo"] + p[pre + "bo"]


def torch_forward(p: dict, cfg: ModelConfig, x_t, t, tok_ids):
    """Same network as the numpy forward, dense attention only."""
    dtype = p["in_w"].dtype
    tf = torch.as_tensor(model.time_features(np.asarray(t), cfg.width), dtype=dtype)
    h = x_t[..., None] * p["in_w"][0] + p["in_b"] + p["pos"]
    temb = torch.nn.functional.silu(tf @ p["t_w1"] + p["t_b1"]) @ p["t_w2"] + p["t_b2"]
    h = h + temb[:, None, :]
    emb = p["tok_emb"][tok_ids]
    bos = p["bos"].expand(len(tok_ids), 1, -1)
    ctx = torch.cat([bos, emb], dim=1) + p["ctx_pos"]
    for i in range(cfg.blocks):
        pre = f"b{i}."
        a = _ln(h, p[pre + "ln1_g"], p[pre + "ln1_b"])
        h = h + _mha(a, a, p, pre + "self.", cfg.heads)
        h = h + _mha(_ln(h, p[pre + "ln2_g"], p[pre + "ln2_b"]), ctx, p, pre + "cross.", cfg.heads)
        a = _ln(h, p[pre + "ln3_g"], p[pre + "ln3_b"])
        h = h + _gelu(a @ p[pre + "ff_w1"] + p[pre + "ff_b1"]) @ p[pre + "ff_w2"] + p[pre + "ff_b2"]
    h = _ln(h, p["lnf_g"], p["lnf_b"])
    return (h @ p["out_w"])[..., 0] + p["out_b"][0]


def to_torch(params: dict, dtype=torch.float32) -> dict:
    return {k: torch.tensor(v, dtype=dtype, requires_grad=True) for k, v in params.items()}


def to_numpy(tparams: dict) -> dict:
    return {k: v.detach().to(torch.float64).numpy().copy() for k, v in tparams.items()}


def train(dataset: data.Dataset, sched: NoiseSchedule, hyper: TrainConfig, seed: int,
          log_every: int = 0) -> TrainResult:
    """Adam on the DSM objective; deterministic for a fixed seed."""
    mcfg = hyper.model
    init = model.init_params(mcfg, seed)
    if hyper.iters == 0:
        return TrainResult(init, [], hyper)

    torch.manual_seed(seed)
    p = to_torch(init)
    opt = torch.optim.Adam(p.values(), lr=hyper.lr)
    sched_lr = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=hyper.iters, eta_min=hyper.lr * 0.05)
    rng = np.random.default_rng([seed, 1])
    losses = []
    for it in range(hyper.iters):
        idx = rng.integers(len(dataset), size=hyper.batch)
        x_t, t, c, eps = draw_dsm_batch(dataset.images[idx], dataset.conds[idx], sched, hyper.cond_dropout, rng)
        pred = torch_forward(p, mcfg, torch.as_tensor(x_t, dtype=torch.float32), t,
                             torch.as_tensor(data.token_ids(c)))
        loss = torch.mean((pred - torch.as_tensor(eps, dtype=torch.float32)) ** 2)
        val = float(loss.detach())
        if not math.isfinite(val):
            raise TrainingError(f"loss became {val} at iteration {it}")
        opt.zero_grad()
        loss.backward()
        if hyper.grad_clip:
            torch.nn.utils.clip_grad_norm_(p.values(), hyper.grad_clip)
        opt.step()
        sched_lr.step()
        losses.append(val)
        if log_every and it % log_every == 0:
            print(f"iter {it:5d}  loss {val:.4f}", flush=True)
    return TrainResult(to_numpy(p), losses, hyper)
