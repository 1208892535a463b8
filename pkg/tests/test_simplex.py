import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from pladis import simplex

ALPHAS = [1.0, 1.25, 1.5, 1.75, 2.0]
SPARSE_ALPHAS = [1.25, 1.5, 1.75, 2.0]

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)
scores = hnp.arrays(np.float64, st.integers(1, 24), elements=finite)


def support_enumeration_sparsemax(z):
    """Euclidean projection by trying every support set; tiny M only."""
    M = len(z)
    best, best_d = None, np.inf
    for r in range(1, M + 1):
        for S in itertools.combinations(range(M), r):
            S = list(S)
            tau = (z[S].sum() - 1) / r
            p = np.zeros(M)
            p[S] = z[S] - tau
            if np.all(p[S] >= 0):
                d = np.sum((p - z) ** 2)
                if d < best_d:
                    best, best_d = p, d
    return best


# -- softmax / lse -----------------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(simplex.softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(simplex.softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], rtol=1e-14)
    p = simplex.softmax([1000.0, 0.0])
    assert np.all(np.isfinite(p)) and p[0] == 1.0 and p[1] >= 0


def test_softmax_strictly_positive_full_support():
    z = np.random.default_rng(0).standard_normal(10)
    p = simplex.softmax(z, 2.0)
    assert np.all(p > 0) and simplex.kappa(p) == 10


def test_lse_examples():
    assert simplex.lse(1.0, [0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert simplex.lse(1.0, [3.7]) == pytest.approx(3.7, abs=1e-15)
    naive = math.log(math.exp(2.0) + math.exp(0.0)) / 2.0
    assert simplex.lse(2.0, [1.0, 0.0]) == pytest.approx(naive, rel=1e-14)


@pytest.mark.parametrize("fn", [lambda z: simplex.softmax(z), lambda z: simplex.lse(1.0, z),
                                lambda z: simplex.sparsemax(z), lambda z: simplex.entmax15(z),
                                lambda z: simplex.entmax_bisect(z, 1.3)])
def test_empty_and_nonfinite_rejected(fn):
    with pytest.raises(ValueError):
        fn(np.array([]))
    with pytest.raises(ValueError):
        fn(np.array([1.0, np.nan]))


# -- exact solvers -----------------------------------------------------------

def test_sparsemax_examples():
    np.testing.assert_allclose(simplex.sparsemax([0.6, 0.4, 0.0]).probs, [0.6, 0.4, 0.0], atol=1e-15)
    np.testing.assert_array_equal(simplex.sparsemax([1.0, 0.0]).probs, [1.0, 0.0])
    r = simplex.sparsemax([0.5, 0.3, -0.2])
    np.testing.assert_allclose(r.probs, [0.6, 0.4, 0.0], atol=1e-15)
    assert r.tau == pytest.approx(-0.1, abs=1e-15)
    assert r.kappa == 2


@given(hnp.arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)))
def test_sparsemax_matches_support_enumeration(z):
    np.testing.assert_allclose(simplex.sparsemax(z).probs, support_enumeration_sparsemax(z), atol=1e-12)


def test_entmax15_examples():
    np.testing.assert_allclose(simplex.entmax15([0.0, 0.0]).probs, [0.5, 0.5])
    np.testing.assert_array_equal(simplex.entmax15([10.0, 0.0]).probs, [1.0, 0.0])
    z = np.array([0.5, 0.1, -0.3])
    np.testing.assert_allclose(simplex.entmax15(z).probs, simplex.entmax_oracle(z, 1.5), atol=1e-8)


def test_bisect_examples():
    z = np.array([0.8, 0.2, -0.5, -0.5])
    np.testing.assert_allclose(simplex.entmax_bisect(z, 1.25).probs, simplex.entmax_oracle(z, 1.25), atol=1e-6)


def test_bisect_rejects_bad_args():
    with pytest.raises(ValueError):
        simplex.entmax_bisect([0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        simplex.entmax_bisect([0.0, 1.0], 1.5, tol=0.0)


def test_bisect_nonconvergence_carries_residual():
    z = np.random.default_rng(1).standard_normal((4, 9))
    with pytest.raises(simplex.SolverError) as err:
        simplex.entmax_bisect(z, 1.3, tol=1e-15, max_iter=3)
    assert err.value.residual > 0


@pytest.mark.parametrize("alpha", [1.5, 2.0])
def test_bisect_matches_exact_solvers(alpha):
    rng = np.random.default_rng(2)
    exact = simplex.entmax15 if alpha == 1.5 else simplex.sparsemax
    for M in (2, 3, 7, 16, 64):
        z = rng.standard_normal((300, M)) * rng.uniform(0.1, 5.0, (300, 1))
        np.testing.assert_allclose(simplex.entmax_bisect(z, alpha).probs, exact(z).probs, atol=1e-8)


# -- dispatch ----------------------------------------------------------------

def test_entmax_dispatch():
    z = np.random.default_rng(3).standard_normal(12)
    np.testing.assert_array_equal(simplex.entmax(z, 1.0), simplex.softmax(z, 1.0))
    np.testing.assert_allclose(simplex.entmax([0.5, 0.3, -0.2], 2.0), [0.6, 0.4, 0.0], atol=1e-15)
    np.testing.assert_allclose(simplex.entmax([0.0, 0.0, 0.0], 1.5), [1 / 3] * 3, atol=1e-15)
    for bad in (0.99, 2.01, -1.0):
        with pytest.raises(ValueError):
            simplex.entmax(z, bad)


@pytest.mark.parametrize("alpha", ALPHAS)
def test_single_entry_is_one(alpha):
    assert simplex.entmax([3.2], alpha).tolist() == [1.0]
    if alpha > 1:
        assert simplex.entmax_threshold([3.2], alpha).kappa == 1


# -- invariants (hypothesis) ---------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(scores, st.sampled_from(ALPHAS))
def test_output_on_simplex(z, alpha):
    p = simplex.entmax(z, alpha)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-9
    assert simplex.kappa(p) == len(simplex.support(p))


@settings(max_examples=60, deadline=None)
@given(scores, st.sampled_from(ALPHAS), st.randoms(use_true_random=False))
def test_permutation_equivariance(z, alpha, rnd):
    perm = list(range(len(z)))
    rnd.shuffle(perm)
    perm = np.array(perm)
    np.testing.assert_allclose(simplex.entmax(z[perm], alpha), simplex.entmax(z, alpha)[perm], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(scores, st.sampled_from(ALPHAS), st.floats(-100, 100))
def test_shift_invariance(z, alpha, c):
    np.testing.assert_allclose(simplex.entmax(z + c, alpha), simplex.entmax(z, alpha), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(scores, st.sampled_from(SPARSE_ALPHAS))
def test_threshold_identity(z, alpha):
    r = simplex.entmax_threshold(z, alpha)
    np.testing.assert_allclose(simplex.from_threshold(z, alpha, r.tau), r.probs, atol=1e-10)


def lemma_violations(z, alpha, eps=1e-12):
    """Sorted-coordinate bound: p_(nu) <= [(a-1)(z_(nu) - z_(kappa+1))]^(1/(a-1)) for nu <= kappa."""
    z = np.atleast_2d(z)
    M = z.shape[1]
    p = simplex.entmax(z, alpha)
    kap = simplex.kappa(p)
    zs = -np.sort(-z, axis=1)
    ps = -np.sort(-p, axis=1)
    ext = zs[:, -1] - M ** (1 - alpha) / (alpha - 1)
    nxt = np.where(kap < M, zs[np.arange(len(z)), np.minimum(kap, M - 1)], ext)
    bound = np.maximum((alpha - 1) * (zs - nxt[:, None]), 0) ** (1 / (alpha - 1))
    nu = np.arange(1, M + 1)[None, :]
    viol = (nu <= kap[:, None]) & (ps > bound + eps)
    return int(viol.sum()), int((kap == M).sum())


@settings(max_examples=80, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 16), elements=st.floats(-5, 5)), st.sampled_from(SPARSE_ALPHAS))
def test_sorted_coordinate_lemma(z, alpha):
    assert lemma_violations(z, alpha)[0] == 0


def test_lemma_covers_full_support_case():
    # small spread forces kappa = M, exercising the (M+1) extension
    z = np.random.default_rng(4).uniform(0, 0.05, (200, 5))
    viol, full = lemma_violations(z, 1.5)
    assert viol == 0 and full == 200


def test_sparsity_trend():
    z = np.random.default_rng(5).standard_normal((1000, 32))
    mean_k = [simplex.kappa(simplex.entmax(z, a)).mean() for a in SPARSE_ALPHAS]
    assert all(b <= a for a, b in zip(mean_k, mean_k[1:]))


def test_softmax_limit():
    z = np.random.default_rng(6).standard_normal((50, 10))
    np.testing.assert_allclose(simplex.entmax_bisect(z, 1 + 1e-4).probs, simplex.softmax(z), atol=1e-3)


# -- regularizer and conjugate -----------------------------------------------------

def test_tsallis_examples():
    assert simplex.tsallis_psi([1.0, 0.0], 2.0) == 0.0
    assert simplex.tsallis_psi([0.5, 0.5], 2.0) == pytest.approx(-0.25, abs=1e-15)
    import mpmath
    mpmath.mp.dps = 40
    exact = -(4 * (mpmath.mpf(1) / 4 - (mpmath.mpf(1) / 4) ** mpmath.mpf(1.5))) / (mpmath.mpf(1.5) * mpmath.mpf(0.5))
    assert simplex.tsallis_psi(np.full(4, 0.25), 1.5) == pytest.approx(float(exact), rel=1e-14)
    # alpha -> 1 limit is the negative Shannon entropy
    p = np.array([0.2, 0.3, 0.5])
    assert simplex.tsallis_psi(p, 1.0 + 1e-7) == pytest.approx(simplex.tsallis_psi(p, 1.0), abs=1e-6)


def test_tsallis_rejects_off_simplex():
    with pytest.raises(ValueError):
        simplex.tsallis_psi([0.5, 0.6], 1.5)


def test_psi_conjugate_examples():
    z = np.random.default_rng(7).standard_normal(6)
    assert simplex.psi_conjugate(1.7, z, 1.0) == pytest.approx(simplex.lse(1.7, z), abs=1e-10)
    assert simplex.psi_conjugate(1.0, [10.0, 0.0], 2.0) == pytest.approx(10.0, abs=1e-12)


@pytest.mark.parametrize("alpha", [1.0, 1.5, 1.75, 2.0])
def test_psi_conjugate_dominates_feasible_points(alpha):
    rng = np.random.default_rng(8)
    beta = 1.3
    z = rng.standard_normal(5)
    top = simplex.psi_conjugate(beta, z, alpha)
    for p in rng.dirichlet(np.ones(5), 100):
        assert top >= (p @ (beta * z) - simplex.tsallis_psi(p, alpha)) / beta - 1e-12


# -- oracle ------------------------------------------------------------------

def test_oracle_examples():
    np.testing.assert_allclose(simplex.entmax_oracle([0.5, 0.3, -0.2], 2.0), [0.6, 0.4, 0.0], atol=1e-5)
    np.testing.assert_allclose(simplex.entmax_oracle([0.0, 0.0], 1.5), [0.5, 0.5], atol=1e-6)
    z = np.random.default_rng(9).standard_normal((20, 8))
    np.testing.assert_allclose(simplex.entmax_oracle(z, 1.75), simplex.entmax_bisect(z, 1.75).probs, atol=1e-5)
