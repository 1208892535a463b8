"""Dense and sparse modern-Hopfield energies, one-step retrieval, and error bounds.

Patterns are stored column-wise in ``xi`` (shape ``d x M``); a query ``x``
has shape ``(d,)``. Retrieval error bounds are returned as plain floats so
they can be compared directly against ``||T(x) - xi_mu||``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import simplex


@dataclass(frozen=True)
class PatternMatrix:
    patterns: np.ndarray
    m_norm: float = field(init=False)

    def __post_init__(self):
        xi = np.asarray(self.patterns, dtype=np.float64)
        if xi.ndim != 2 or not np.all(np.isfinite(xi)):
            raise ValueError("patterns must be a finite d x M matrix")
        object.__setattr__(self, "patterns", xi)
        object.__setattr__(self, "m_norm", max_norm(xi))

    def __array__(self, dtype=None, copy=None):
        return self.patterns if dtype is None else self.patterns.astype(dtype)

    @property
    def shape(self):
        return self.patterns.shape


@dataclass
class RetrievalReport:
    retrieved: np.ndarray
    target_index: int
    error: float
    bound: float
    inner_products: np.ndarray  # sorted, non-increasing
    kappa: int


def max_norm(xi) -> float:
    return float(np.linalg.norm(np.asarray(xi, dtype=np.float64), axis=0).max())


def _check(x, xi):
    x = np.asarray(x, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim != 2 or x.shape != (xi.shape[0],):
        raise ValueError(f"query of shape {x.shape} does not match patterns {xi.shape}")
    return x, xi


def _check_mu(mu, xi):
    if not 0 <= mu < xi.shape[1]:
        raise IndexError(f"pattern index {mu} out of range for {xi.shape[1]} patterns")


def dense_energy(x, xi, beta: float) -> float:
    x, xi = _check(x, xi)
    return float(-simplex.lse(beta, xi.T @ x) + 0.5 * x @ x)


def sparse_energy(x, xi, beta: float, alpha: float) -> float:
    x, xi = _check(x, xi)
    return float(-simplex.psi_conjugate(beta, xi.T @ x, alpha) + 0.5 * x @ x)


def retrieve_dense(x, xi, beta: float) -> np.ndarray:
    x, xi = _check(x, xi)
    return xi @ simplex.softmax(xi.T @ x, beta)


def retrieve_alpha(x, xi, beta: float, alpha: float) -> np.ndarray:
    x, xi = _check(x, xi)
    if simplex.check_alpha(alpha) == 1.0:
        return retrieve_dense(x, xi, beta)
    return xi @ simplex.entmax(beta * (xi.T @ x), alpha)


def retrieve_pladis(x, xi, beta: float, alpha: float, lam: float) -> np.ndarray:
    """Mixture ``lam * T_alpha + (1 - lam) * T_dense``; extrapolates for ``lam > 1``."""
    return lam * retrieve_alpha(x, xi, beta, alpha) + (1.0 - lam) * retrieve_dense(x, xi, beta)


def bound_dense(x, xi, mu: int, beta: float, exclude_self: bool = False) -> float:
    """Exponential error bound for softmax retrieval.

    The max over pattern overlaps runs over every pattern, ``mu`` included;
    ``exclude_self`` restricts it to ``nu != mu`` for comparison runs.
    Only valid for queries inside the basin of ``xi[:, mu]``.
    """
    x, xi = _check(x, xi)
    _check_mu(mu, xi)
    M = xi.shape[1]
    if M == 1:
        return 0.0
    overlaps = xi[:, mu] @ xi
    if exclude_self:
        overlaps = np.delete(overlaps, mu)
    m = max_norm(xi)
    return float(2.0 * m * (M - 1) * np.exp(-beta * (xi[:, mu] @ x - overlaps.max())))


def sorted_scores(x, xi) -> np.ndarray:
    x, xi = _check(x, xi)
    return -np.sort(-(xi.T @ x))


def bound_alpha2(x, xi, mu: int, beta: float) -> float:
    """Sparsemax retrieval bound ``m + m*beta*(kappa*(max - s_(kappa)) + 1/beta)``."""
    x, xi = _check(x, xi)
    _check_mu(mu, xi)
    s = sorted_scores(x, xi)
    kap = int(simplex.sparsemax(beta * s).kappa)
    m = max_norm(xi)
    return float(m + m * beta * (kap * (s[0] - s[kap - 1]) + 1.0 / beta))


def kth_sorted_score(s: np.ndarray, k: int, alpha: float, beta: float) -> float:
    """``s_(k)`` (1-indexed) with ``s_(M+1) := s_(M) - M^(1-alpha) / ((alpha-1) * beta)``.

    The extension is written in raw inner-product units, i.e. the
    convention on ``beta * s`` divided by ``beta``.
    """
    M = s.shape[0]
    if k <= M:
        return float(s[k - 1])
    return float(s[M - 1] - M ** (1.0 - alpha) / ((alpha - 1.0) * beta))


def bound_general(x, xi, mu: int, beta: float, alpha: float) -> float:
    """Polynomial retrieval bound for ``1 < alpha <= 2``.

    ``m + m*kappa*[(alpha-1)*beta*(max_nu <xi_nu, x> - s_(kappa+1))]^(1/(alpha-1))``
    with kappa the support size of ``alpha``-entmax at the same beta.
    """
    alpha = simplex.check_alpha(alpha)
    if alpha == 1.0:
        raise ValueError("alpha = 1 has no polynomial bound; use bound_dense")
    x, xi = _check(x, xi)
    _check_mu(mu, xi)
    s = sorted_scores(x, xi)
    kap = int(simplex.entmax_threshold(beta * s, alpha).kappa)
    gap = s[0] - kth_sorted_score(s, kap + 1, alpha, beta)
    m = max_norm(xi)
    return float(m + m * kap * ((alpha - 1.0) * beta * gap) ** (1.0 / (alpha - 1.0)))


def bound_pladis(x, xi, mu: int, beta: float, alpha: float, lam: float) -> float:
    return abs(lam) * bound_general(x, xi, mu, beta, alpha) + abs(1.0 - lam) * bound_dense(x, xi, mu, beta)


def retrieval_report(x, xi, mu: int, beta: float, alpha: float, lam: float = 1.0) -> RetrievalReport:
    """One retrieval step with its observed error and the matching bound."""
    x, xi = _check(x, xi)
    _check_mu(mu, xi)
    s = sorted_scores(x, xi)
    if alpha == 1.0:
        out = retrieve_dense(x, xi, beta)
        bound = bound_dense(x, xi, mu, beta)
        kap = xi.shape[1]
    else:
        out = retrieve_pladis(x, xi, beta, alpha, lam)
        bound = bound_pladis(x, xi, mu, beta, alpha, lam)
        kap = int(simplex.entmax_threshold(beta * s, alpha).kappa)
    err = float(np.linalg.norm(out - xi[:, mu]))
    return RetrievalReport(out, mu, err, bound, s, kap)


# -- instance generators -----------------------------------------------------

def orthonormal_patterns(d: int, M: int, m: float, rng: np.random.Generator) -> np.ndarray:
    """``M <= d`` orthogonal columns of norm ``m`` (QR of a Gaussian matrix)."""
    if M > d:
        raise ValueError("need M <= d for orthonormal patterns")
    q, r = np.linalg.qr(rng.standard_normal((d, M)))
    q = q * np.sign(np.diag(r))
    return m * q


def sphere_patterns(d: int, M: int, m: float, rng: np.random.Generator) -> np.ndarray:
    xi = rng.standard_normal((d, M))
    return m * xi / np.linalg.norm(xi, axis=0)


def basin_radius(xi, mu: int) -> float:
    """Largest ``r`` such that ``<xi_nu, xi_mu + eta> <= ||xi_mu||^2`` for all
    ``nu != mu`` whenever ``||eta|| <= r`` (equal-norm patterns)."""
    xi = np.asarray(xi, dtype=np.float64)
    overlaps = np.delete(xi[:, mu] @ xi, mu)
    m = max_norm(xi)
    return max(0.0, float((xi[:, mu] @ xi[:, mu] - overlaps.max()) / m))


def random_direction(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def noise_robustness_experiment(xi, mu: int, beta: float, alphas, noise_grid, trials: int,
                                seed: int) -> list[dict]:
    """Retrieval error of ``T_alpha(xi_mu + eta)`` for Gaussian-direction noise.

    Every (noise level, trial) pair draws its own noise from a counter-keyed
    child of ``seed``, and the same noise is shared across alphas, so rows
    are reproducible and the alpha curves are paired.
    """
    xi = np.asarray(xi, dtype=np.float64)
    d = xi.shape[0]
    rows = []
    for gi, norm in enumerate(noise_grid):
        for trial in range(trials):
            rng = np.random.default_rng([seed, gi, trial])
            x = xi[:, mu] + norm * random_direction(d, rng)
            for alpha in alphas:
                rep = retrieval_report(x, xi, mu, beta, alpha)
                rows.append(dict(alpha=float(alpha), beta=float(beta), noise_norm=float(norm),
                                 trial=trial, error=rep.error, bound=rep.bound, kappa=rep.kappa))
    return rows


def summarize_noise(rows: list[dict]) -> list[dict]:
    """Mean and max error per (alpha, noise_norm)."""
    keys = sorted({(r["alpha"], r["noise_norm"]) for r in rows})
    out = []
    for alpha, norm in keys:
        errs = np.array([r["error"] for r in rows if r["alpha"] == alpha and r["noise_norm"] == norm])
        out.append(dict(alpha=alpha, noise_norm=norm, mean_error=float(errs.mean()),
                        max_error=float(errs.max()), trials=len(errs)))
    return out
