"""Small conditional transformer denoiser, inference side (numpy).

Weights live in a flat ``dict[str, ndarray]``. The forward pass here drives
all sampling so that attention swaps (PLADIS, PAG, SEG) go through
:mod:`pladis.attention`; the torch twin in :mod:`pladis.diffusion.train`
mirrors it for training only.

Tokens: 64 pixel tokens attend to themselves (self-attention) and to a
3-token context ``[bos, row, col]`` (cross-attention).
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .. import attention as attn_ops
from ..attention import AttentionConfig, ProjectionWeights
from . import data
from .schedule import NoiseSchedule

CTX_LEN = 3
LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    width: int = 64
    blocks: int = 2
    heads: int = 2
    ff_mult: int = 4

    def __post_init__(self):
        if self.width % self.heads or self.width % 2:
            raise ValueError("width must be even and divisible by heads")


def init_params(cfg: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Random initial weights, rounded to float32 so a torch round trip is exact."""
    rng = np.random.default_rng(seed)
    W, F = cfg.width, cfg.ff_mult * cfg.width

    def lin(fan_in, fan_out, scale=1.0):
        return scale * rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)

    p = {
        "in_w": lin(1, W),
        "in_b": np.zeros(W),
        "pos": 0.1 * rng.standard_normal((data.PIXELS, W)),
        "t_w1": lin(W, W), "t_b1": np.zeros(W),
        "t_w2": lin(W, W), "t_b2": np.zeros(W),
        "tok_emb": rng.standard_normal((data.VOCAB + 1, W)),
        "bos": rng.standard_normal(W),
        "ctx_pos": 0.1 * rng.standard_normal((CTX_LEN, W)),
        "lnf_g": np.ones(W), "lnf_b": np.zeros(W),
        "out_w": lin(W, 1, 0.02), "out_b": np.zeros(1),
    }
    for i in range(cfg.blocks):
        for j in (1, 2, 3):
            p[f"b{i}.ln{j}_g"] = np.ones(W)
            p[f"b{i}.ln{j}_b"] = np.zeros(W)
        for kind in ("self", "cross"):
            for name in ("wq", "wk", "wv", "wo"):
                p[f"b{i}.{kind}.{name}"] = lin(W, W)
            p[f"b{i}.{kind}.bo"] = np.zeros(W)
        p[f"b{i}.ff_w1"] = lin(W, F)
        p[f"b{i}.ff_b1"] = np.zeros(F)
        p[f"b{i}.ff_w2"] = lin(F, W)
        p[f"b{i}.ff_b2"] = np.zeros(W)
    return {k: v.astype(np.float32).astype(np.float64) for k, v in p.items()}


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def silu(x):
    return x / (1.0 + np.exp(-x))


def time_features(t, width: int) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def context_tokens(params, conds) -> np.ndarray:
    ids = data.token_ids(conds)
    emb = params["tok_emb"][ids]  # (B, 2, W)
    bos = np.broadcast_to(params["bos"], (len(ids), 1, emb.shape[-1]))
    return np.concatenate([bos, emb], axis=1) + params["ctx_pos"]


def cross_attention_logits(params, cfg: ModelConfig, x_t, t, conds, block: int = 0,
                           temperature: float = 1.0) -> np.ndarray:
    """Per-head cross-attention logits ``(B, heads, 64, 3)`` of one block."""
    rec = {}
    forward(params, cfg, x_t, t, conds, record=rec)
    a, ctx = rec[f"b{block}.cross"]
    w = projections(params, block, "cross")
    q = attn_ops.split_heads(a @ w.W_Q, cfg.heads)
    k = attn_ops.split_heads(ctx @ w.W_K, cfg.heads)
    return attn_ops.logits(q, k, temperature)


def projections(params, block: int, kind: str) -> ProjectionWeights:
    pre = f"b{block}.{kind}."
    return ProjectionWeights(params[pre + "wq"], params[pre + "wk"], params[pre + "wv"],
                             params[pre + "wo"], params[pre + "bo"])


def forward(params, cfg: ModelConfig, x_t, t, conds, attn: AttentionConfig = attn_ops.BASELINE,
            perturb: str | None = None, seg_sigma: float = math.inf, record: dict | None = None) -> np.ndarray:
    """Predicted noise for a batch ``x_t`` of shape ``(B, 64)``.

    If ``record`` is a dict, the normalized inputs of each cross-attention
    layer are stored in it as ``(tokens, context)`` under ``"b{i}.cross"``.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    B = len(x_t)
    t = np.broadcast_to(np.asarray(t), (B,))
    conds = np.broadcast_to(np.atleast_2d(conds), (B, 2))
    attn = replace(attn, heads=cfg.heads)

    h = x_t[..., None] * params["in_w"][0] + params["in_b"] + params["pos"]
    temb = silu(time_features(t, cfg.width) @ params["t_w1"] + params["t_b1"]) @ params["t_w2"] + params["t_b2"]
    h = h + temb[:, None, :]
    ctx = context_tokens(params, conds)
    for i in range(cfg.blocks):
        pre = f"b{i}."
        a = layer_norm(h, params[pre + "ln1_g"], params[pre + "ln1_b"])
        h = h + attn_ops.multihead_layer(a, None, projections(params, i, "self"), attn, "self",
                                         group=i, perturb=perturb, seg_sigma=seg_sigma)
        a = layer_norm(h, params[pre + "ln2_g"], params[pre + "ln2_b"])
        if record is not None:
            record[pre + "cross"] = (a, ctx)
        h = h + attn_ops.multihead_layer(a, ctx, projections(params, i, "cross"), attn, "cross", group=i)
        a = layer_norm(h, params[pre + "ln3_g"], params[pre + "ln3_b"])
        h = h + gelu(a @ params[pre + "ff_w1"] + params[pre + "ff_b1"]) @ params[pre + "ff_w2"] + params[pre + "ff_b2"]
    h = layer_norm(h, params["lnf_g"], params["lnf_b"])
    return (h @ params["out_w"])[..., 0] + params["out_b"][0]


class Denoiser:
    """Callable noise predictor that counts its own evaluations."""

    def __init__(self, params: dict, cfg: ModelConfig = ModelConfig()):
        self.params = params
        self.cfg = cfg
        self.nfe = 0

    def __call__(self, x_t, t, conds, attn: AttentionConfig = attn_ops.BASELINE,
                 perturb: str | None = None, seg_sigma: float = math.inf) -> np.ndarray:
        self.nfe += 1
        return forward(self.params, self.cfg, x_t, t, conds, attn, perturb, seg_sigma)


# -- checkpoints --------------------------------------------------------------
# layout: magic(8) | version u32 | header_len u64 | JSON header | float64 LE arrays
MAGIC = b"PLDSCKPT"
VERSION = 1


def save_checkpoint(path, params: dict, cfg: ModelConfig, sched: NoiseSchedule, extra: dict | None = None):
    arrays, offset = [], 0
    for name in sorted(params):
        a = np.ascontiguousarray(params[name], dtype="<f8")
        arrays.append(dict(name=name, shape=list(a.shape), offset=offset))
        offset += a.nbytes
    header = dict(version=VERSION, model=asdict(cfg), schedule=sched.to_dict(),
                  dtype="<f8", arrays=arrays, extra=extra or {})
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<IQ", VERSION, len(blob)) + blob)
        for name in sorted(params):
            f.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return path


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen])
    body = raw[20 + hlen:]
    params = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        params[spec["name"]] = np.frombuffer(body, dtype="<f8", count=n, offset=spec["offset"]).reshape(spec["shape"]).copy()
    return params, ModelConfig(**header["model"]), NoiseSchedule(**header["schedule"]), header
