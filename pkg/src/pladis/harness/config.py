"""Flat JSON experiment configs.

Every key below may appear at the top level of the config file; anything
else is rejected. Missing keys take the defaults. Randomness for a run is
derived from the single ``seed`` through :func:`derive_seed`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "default"
    seed: int = 0
    out: str = "runs"

    # hopfield sweeps
    bound_instances: int = 10_000
    bound_dim: int = 16
    bound_patterns: int = 32
    betas: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    bound_alphas: list = field(default_factory=lambda: [1.25, 1.5, 1.75, 2.0])
    bound_lambdas: list = field(default_factory=lambda: [-0.5, 0.0, 0.5, 1.0, 1.5, 2.0])
    noise_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.4])
    noise_alphas: list = field(default_factory=lambda: [1.0, 1.5, 2.0])
    noise_trials: int = 1000
    noise_beta: float = 4.0

    # diffusion model and data
    checkpoint: str | None = None
    n_data: int = 4096
    data_sigma: float = 0.05
    width: int = 64
    blocks: int = 2
    heads: int = 2
    train_iters: int = 800
    train_batch: int = 64
    train_lr: float = 2e-3
    cond_dropout: float = 0.1

    # sampling sweeps
    sample_seeds: list = field(default_factory=lambda: [1])
    samples_per_condition: int = 4
    steps: int = 50
    guidance: str = "cfg"
    w: float = 3.0
    s: float = 2.0
    seg_sigma: float = 2.0
    alphas: list = field(default_factory=lambda: [1.0, 1.25, 1.5, 1.75, 2.0])
    lambdas: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    taus: list = field(default_factory=lambda: [1.0, 0.7, 0.5, 0.3, 0.1])
    attn_alpha: float = 1.5
    attn_lam: float = 2.0
    timing_repeats: int = 5

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("betas", "bound_alphas", "bound_lambdas", "noise_grid", "noise_alphas",
                     "sample_seeds", "alphas", "lambdas", "taus"):
            v = getattr(self, name)
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{name} must be a non-empty list")
            if not all(isinstance(x, (int, float)) and math.isfinite(x) for x in v):
                raise ConfigError(f"{name} must hold finite numbers")
        if len(set(self.sample_seeds)) != len(self.sample_seeds):
            raise ConfigError("sample_seeds must be distinct")
        for name in ("bound_instances", "noise_trials", "n_data", "width", "blocks", "heads",
                     "train_batch", "samples_per_condition", "steps", "timing_repeats"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.train_iters < 0:
            raise ConfigError("train_iters must be >= 0")
        if self.guidance not in ("none", "cfg", "pag", "seg"):
            raise ConfigError(f"unknown guidance {self.guidance!r}")
        if any(a < 1 or a > 2 for a in self.alphas + self.bound_alphas + self.noise_alphas):
            raise ConfigError("alphas must lie in [1, 2]")
        if any(t <= 0 for t in self.taus):
            raise ConfigError("taus must be positive")
        if self.data_sigma < 0 or not 0 <= self.cond_dropout < 1:
            raise ConfigError("data_sigma must be >= 0 and cond_dropout in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


KEYS = tuple(f.name for f in fields(ExperimentConfig))


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a flat JSON object; unknown keys raise :class:`ConfigError`."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(raw) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for a run: first word of ``SeedSequence([master, *keys])``."""
    return int(np.random.SeedSequence([master, *keys]).generate_state(1, np.uint64)[0])
