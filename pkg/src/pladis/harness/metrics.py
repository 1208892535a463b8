"""Sample-quality metrics and cost measurement."""
from __future__ import annotations

import statistics
import time
import tracemalloc

import numpy as np

from ..diffusion import data


def _pair(samples, conds):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    conds = np.atleast_2d(np.asarray(conds))
    if samples.size == 0 or len(samples) != len(conds):
        raise ValueError("need a non-empty set of samples paired with conditions")
    return samples, conds


def correct(samples, conds) -> np.ndarray:
    """Per-sample flag: rounded centroid lands on the conditioned cell."""
    samples, conds = _pair(samples, conds)
    return np.all(np.round(data.centroids(samples)) == conds, axis=1)


def conditional_accuracy(samples, conds) -> float:
    return float(correct(samples, conds).mean())


def centroid_errors(samples, conds) -> np.ndarray:
    samples, conds = _pair(samples, conds)
    return np.linalg.norm(data.centroids(samples) - conds, axis=1)


def centroid_error(samples, conds) -> float:
    return float(centroid_errors(samples, conds).mean())


def energy_distance(x, y) -> float:
    """``2 E|X-Y| - E|X-X'| - E|Y-Y'|`` with V-statistic averages."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)

    def mean_dist(a, b):
        return float(np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0)).mean())

    return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y)


def conditional_energy_distance(samples, conds, data_sigma: float, seed: int) -> float:
    """Energy distance to exact draws from each condition's data distribution,
    averaged over the conditions present."""
    samples, conds = _pair(samples, conds)
    rng = np.random.default_rng(seed)
    keys = sorted({tuple(c) for c in conds.tolist()})
    out = []
    for key in keys:
        mask = np.all(conds == key, axis=1)
        ref = data.mean_images([key]) + data_sigma * rng.standard_normal((max(mask.sum(), 8), data.PIXELS))
        out.append(energy_distance(samples[mask], ref))
    return float(np.mean(out))


def time_call(fn, repeats: int = 5):
    """Median wall time (monotonic clock) over ``repeats`` calls, and the last result."""
    times, result = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), times, result


def peak_alloc(fn):
    """Peak traced Python allocation in bytes while running ``fn`` once."""
    tracemalloc.start()
    try:
        result = fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return peak, result
