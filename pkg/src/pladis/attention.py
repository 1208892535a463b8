"""Attention operators: dense, sparse, PAG/SEG perturbations, and the PLADIS mix.

Every operator takes ``Q (..., Nq, d)``, ``K (..., Nk, d)``, ``V (..., Nk, dv)``
and broadcasts over leading axes (batch, heads). Logits are
``Q K^T / (sqrt(d) * temperature)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import simplex


@dataclass(frozen=True)
class AttentionConfig:
    """How cross-attention (and optionally self-attention) is replaced at inference.

    ``lam = 0`` is the unmodified model. ``temperature`` only rescales the
    sparse branch; the dense branch stays at the temperature the model was
    trained with, so ``lam = 0`` is always the baseline.
    ``layer_group_mask`` holds one flag per block; ``None`` enables all.
    """

    alpha: float = 1.5
    lam: float = 2.0
    temperature: float = 1.0
    heads: int = 2
    layer_group_mask: Optional[Sequence[bool]] = None
    targets: str = "cross"  # "cross", "self" or "both"

    def __post_init__(self):
        simplex.check_alpha(self.alpha)
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.targets not in ("cross", "self", "both"):
            raise ValueError(f"unknown attention target {self.targets!r}")
        if self.layer_group_mask is not None:
            object.__setattr__(self, "layer_group_mask", tuple(bool(f) for f in self.layer_group_mask))

    def active(self, mode: str, group: Optional[int] = None) -> bool:
        """Whether the PLADIS substitution applies to this layer."""
        if self.lam == 0:
            return False
        if self.targets != "both" and self.targets != mode:
            return False
        if self.layer_group_mask is None or group is None:
            return True
        return self.layer_group_mask[group]


BASELINE = AttentionConfig(alpha=1.0, lam=0.0)


@dataclass
class ProjectionWeights:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    b_O: Optional[np.ndarray] = None


def _check_inputs(Q, K, V):
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ValueError(f"incompatible attention shapes Q{Q.shape} K{K.shape} V{V.shape}")
    return Q, K, V


def logits(Q, K, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return Q @ np.swapaxes(K, -1, -2) / (math.sqrt(Q.shape[-1]) * temperature)


def attention_weights(Q, K, alpha: float = 1.0, temperature: float = 1.0) -> np.ndarray:
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    return simplex.entmax(logits(Q, K, temperature), alpha)


def dense_attention(Q, K, V, temperature: float = 1.0) -> np.ndarray:
    Q, K, V = _check_inputs(Q, K, V)
    return simplex.softmax(logits(Q, K, temperature)) @ V


def sparse_attention(Q, K, V, alpha: float, temperature: float = 1.0) -> np.ndarray:
    if simplex.check_alpha(alpha) == 1.0:
        raise ValueError("sparse attention needs alpha > 1; use dense_attention")
    Q, K, V = _check_inputs(Q, K, V)
    return simplex.entmax(logits(Q, K, temperature), alpha) @ V


def pladis_attention(Q, K, V, cfg: AttentionConfig) -> np.ndarray:
    """``dense + lam * (sparse - dense)``; exact endpoints at ``lam`` 0 and 1.

    With ``alpha = 1`` the second branch is softmax at ``cfg.temperature``,
    which is the temperature-only variant.
    """
    dense = dense_attention(Q, K, V)
    if cfg.lam == 0:
        return dense
    if cfg.alpha == 1.0:
        sparse = dense_attention(Q, K, V, cfg.temperature)
    else:
        sparse = sparse_attention(Q, K, V, cfg.alpha, cfg.temperature)
    if cfg.lam == 1:
        return sparse
    return dense + cfg.lam * (sparse - dense)


def pladis_weights(Q, K, cfg: AttentionConfig) -> np.ndarray:
    """Effective mixed attention map; rows sum to one, may go negative for ``lam > 1``."""
    dense = attention_weights(Q, K)
    sparse = attention_weights(Q, K, cfg.alpha, cfg.temperature)
    return dense + cfg.lam * (sparse - dense)


def identity_attention(Q, K, V) -> np.ndarray:
    """PAG perturbation: the attention map becomes the identity."""
    Q, K, V = _check_inputs(Q, K, V)
    if Q.shape[-2] != K.shape[-2]:
        raise ValueError("identity attention needs as many queries as keys")
    return V.copy()


def blur_kernel(n: int, sigma: float) -> np.ndarray:
    """Row-normalized Gaussian smoothing matrix over ``n`` positions.

    Truncated at ``3 sigma``; rows near the edges are renormalized over
    the in-range taps. ``sigma = inf`` gives uniform averaging.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if math.isinf(sigma):
        return np.full((n, n), 1.0 / n)
    idx = np.arange(n)
    dist = idx[:, None] - idx[None, :]
    radius = math.ceil(3.0 * sigma)
    k = np.where(np.abs(dist) <= radius, np.exp(-0.5 * (dist / sigma) ** 2), 0.0)
    return k / k.sum(axis=1, keepdims=True)


def blurred_attention(Q, K, V, sigma: float, temperature: float = 1.0) -> np.ndarray:
    """SEG perturbation: Gaussian blur of the logits along the query axis, then softmax."""
    Q, K, V = _check_inputs(Q, K, V)
    if Q.shape[-2] != K.shape[-2]:
        raise ValueError("blurred attention needs as many queries as keys")
    lg = blur_kernel(Q.shape[-2], sigma) @ logits(Q, K, temperature)
    return simplex.softmax(lg) @ V


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    *lead, n, width = x.shape
    if width % heads:
        raise ValueError(f"width {width} not divisible by {heads} heads")
    x = x.reshape(*lead, n, heads, width // heads)
    return np.swapaxes(x, -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    x = np.swapaxes(x, -2, -3)
    *lead, n, heads, dh = x.shape
    return x.reshape(*lead, n, heads * dh)


def multihead_layer(x_tokens, context_tokens, w: ProjectionWeights, cfg: AttentionConfig,
                    mode: str = "cross", group: Optional[int] = None,
                    perturb: Optional[str] = None, seg_sigma: float = math.inf) -> np.ndarray:
    """Projected multi-head attention over token matrices ``(..., N, width)``.

    In self mode the context is ``x_tokens``. ``perturb`` ("identity" or
    "blur") swaps the self-attention map for the PAG/SEG weak branch; the
    PLADIS substitution follows ``cfg.active(mode, group)``.
    """
    if mode not in ("self", "cross"):
        raise ValueError(f"mode must be 'self' or 'cross', got {mode!r}")
    x = np.asarray(x_tokens, dtype=np.float64)
    ctx = x if mode == "self" else np.asarray(context_tokens, dtype=np.float64)
    q = split_heads(x @ w.W_Q, cfg.heads)
    k = split_heads(ctx @ w.W_K, cfg.heads)
    v = split_heads(ctx @ w.W_V, cfg.heads)

    if perturb is not None and mode == "self":
        if perturb == "identity":
            out = identity_attention(q, k, v)
        elif perturb == "blur":
            out = blurred_attention(q, k, v, seg_sigma)
        else:
            raise ValueError(f"unknown perturbation {perturb!r}")
    elif cfg.active(mode, group):
        out = pladis_attention(q, k, v, cfg)
    else:
        out = dense_attention(q, k, v)

    y = merge_heads(out) @ w.W_O
    if w.b_O is not None:
        y = y + w.b_O
    return y


def row_entropy(weights: np.ndarray) -> np.ndarray:
    """Shannon entropy of each attention row (0 log 0 = 0)."""
    w = np.asarray(weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(w > 0, -w * np.log(w), 0.0)
    return t.sum(axis=-1)
