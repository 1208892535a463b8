"""Synthetic conditional dataset: one Gaussian blob per image on an 8x8 grid.

A condition names the blob center by a row token and a column token. The
16 conditions used for data place the center at rows/cols 2..5, far enough
from the border that the clean blob's centroid sits on the center.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIZE = 8
PIXELS = SIZE * SIZE
BLOB_SIGMA = 0.8
CENTERS = (2, 3, 4, 5)
CELLS = [(r, c) for r in CENTERS for c in CENTERS]
NULL = (-1, -1)

# token ids: rows 0..7, cols 8..15, null 16
VOCAB = 2 * SIZE
NULL_TOKEN = VOCAB


@dataclass(frozen=True)
class ConditionSpec:
    row: int
    col: int

    def __post_init__(self):
        if not (0 <= self.row < SIZE and 0 <= self.col < SIZE):
            raise ValueError(f"condition ({self.row}, {self.col}) is off the grid")

    @property
    def tokens(self) -> tuple[int, int]:
        return self.row, SIZE + self.col


def token_ids(conds) -> np.ndarray:
    """``(B, 2)`` (row, col) pairs -> ``(B, 2)`` token ids; ``(-1, -1)`` is null."""
    conds = np.atleast_2d(np.asarray(conds, dtype=np.int64))
    null = conds[:, 0] < 0
    ids = np.stack([conds[:, 0], SIZE + conds[:, 1]], axis=1)
    ids[null] = NULL_TOKEN
    if np.any(ids < 0) or np.any(ids > NULL_TOKEN):
        raise ValueError("condition out of range")
    return ids


def null_conds(n: int) -> np.ndarray:
    return np.full((n, 2), -1, dtype=np.int64)


def cell_index(conds) -> np.ndarray:
    conds = np.atleast_2d(conds)
    return (conds[:, 0] - CENTERS[0]) * len(CENTERS) + (conds[:, 1] - CENTERS[0])


def blob(row: float, col: float, sigma: float = BLOB_SIGMA) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(SIZE), np.arange(SIZE), indexing="ij")
    return np.exp(-((ii - row) ** 2 + (jj - col) ** 2) / (2 * sigma**2)).ravel()


def mean_images(conds) -> np.ndarray:
    """Clean blob for each condition row, shape ``(B, 64)``."""
    conds = np.atleast_2d(conds)
    return np.stack([blob(r, c) for r, c in conds])


def cell_means() -> np.ndarray:
    return mean_images(CELLS)


@dataclass
class Dataset:
    images: np.ndarray  # (n, 64)
    conds: np.ndarray  # (n, 2) row, col
    noise_sigma: float
    seed: int

    def __len__(self):
        return len(self.images)


def make_dataset(n: int, noise_sigma: float, seed: int) -> Dataset:
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    conds = np.array(CELLS, dtype=np.int64)[rng.integers(len(CELLS), size=n)]
    images = mean_images(conds) + noise_sigma * rng.standard_normal((n, PIXELS))
    return Dataset(images, conds, float(noise_sigma), seed)


def centroids(images) -> np.ndarray:
    """Intensity-weighted (row, col) centroid; negative pixels are clipped to zero."""
    w = np.clip(np.atleast_2d(images), 0.0, None).reshape(-1, SIZE, SIZE)
    total = w.sum(axis=(1, 2))
    total = np.where(total > 0, total, 1.0)
    idx = np.arange(SIZE)
    r = (w.sum(axis=2) * idx).sum(axis=1) / total
    c = (w.sum(axis=1) * idx).sum(axis=1) / total
    return np.stack([r, c], axis=1)


# -- on-disk cache: flat little-endian binaries plus a JSON manifest ---------

def save_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ds.images.astype("<f8").tofile(d / "images.bin")
    ds.conds.astype("<i8").tofile(d / "conds.bin")
    manifest = dict(format="pladis-dataset", version=1, n=len(ds), pixels=PIXELS,
                    images=dict(file="images.bin", dtype="<f8", shape=[len(ds), PIXELS]),
                    conds=dict(file="conds.bin", dtype="<i8", shape=[len(ds), 2]),
                    noise_sigma=ds.noise_sigma, seed=ds.seed, blob_sigma=BLOB_SIGMA)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    if man.get("format") != "pladis-dataset" or man.get("version") != 1:
        raise ValueError(f"unsupported dataset manifest in {d}")
    images = np.fromfile(d / man["images"]["file"], dtype=man["images"]["dtype"]).reshape(man["images"]["shape"])
    conds = np.fromfile(d / man["conds"]["file"], dtype=man["conds"]["dtype"]).reshape(man["conds"]["shape"])
    return Dataset(images.astype(np.float64), conds.astype(np.int64), man["noise_sigma"], man["seed"])
