import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from walklab import library
from walklab.markov_core import affine_full_branch_map
from walklab.spectral import (DegenerateVariance, atom_masses, azuma_bound, clt_check,
                              invariant_density, ld_rate, mean_drift, sigma_squared,
                              strong_transience_margin, ulam_matrix)
from walklab.walk import DriftFunction, RandomWalk


def walk_from(lengths, drift, eps=None):
    return RandomWalk(affine_full_branch_map(lengths, eps=eps), DriftFunction(tuple(drift)))


def test_ulam_doubling_four_bins():
    m = ulam_matrix(affine_full_branch_map((0.5, 0.5)), 4).matrix.toarray()
    assert np.allclose(m, [[.5, .5, 0, 0], [0, 0, .5, .5], [.5, .5, 0, 0], [0, 0, .5, .5]])


@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.sampled_from([16, 64, 250]))
def test_ulam_rows_stochastic(e1, e2, bins):
    m = ulam_matrix(affine_full_branch_map((0.3, 0.7), eps=(e1, e2)), bins).matrix
    assert np.max(np.abs(np.asarray(m.sum(axis=1)).ravel() - 1)) <= 1e-12
    assert m.min() >= 0


def test_density_uniform_cases():
    for lengths in [(0.5, 0.5), (2 / 3, 1 / 3)]:
        d = invariant_density(ulam_matrix(affine_full_branch_map(lengths), 1024)).density
        assert np.max(np.abs(d - 1)) <= 1e-3


def test_density_not_onto_matches_markov_oracle():
    w = library.not_onto()
    # atom-level chain: P[a, b] = |b| / |image a| for b inside image a
    P = np.array([[0, .5, .5], [1 / 3, 1 / 3, 1 / 3], [.5, .5, 0]])
    vals, vecs = np.linalg.eig(P.T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    pi /= pi.sum()
    masses = atom_masses(w.base, 999)
    assert np.allclose(masses, pi, atol=1e-9)
    assert np.allclose(pi * 3, [6 / 7, 9 / 7, 6 / 7])


def test_mean_drift_examples():
    assert abs(mean_drift(library.symmetric()).M) <= 1e-12
    assert abs(mean_drift(library.thirds_zero()).M) <= 1e-9
    assert mean_drift(library.positive()).M == pytest.approx(0.5, abs=1e-9)
    assert mean_drift(library.geometric()).M == pytest.approx(1.0, abs=1e-6)


def test_mean_drift_requires_homogeneous():
    from walklab.stability import PerturbationSchedule, perturb
    G = perturb(library.positive(), PerturbationSchedule(0.1, 0.5), 0)
    with pytest.raises(ValueError):
        mean_drift(G)


@pytest.mark.parametrize("name", ["symmetric", "positive", "thirds-zero", "mild-positive", "geometric"])
def test_bin_refinement_consistency(name):
    est = mean_drift(library.get_walk(name), 1024)
    assert est.error <= 1e-6


def test_sigma_constant_is_zero():
    res = sigma_squared(library.constant_up())
    assert res.sigma2 == 0.0


def test_sigma_symmetric_is_one_every_depth():
    res = sigma_squared(library.symmetric(), depth_max=12)
    assert res.sigma2 == pytest.approx(1.0, abs=1e-12)
    assert all(abs(v - 1.0) <= 1e-12 for _, v in res.table)


def test_sigma_thirds_positive():
    res = sigma_squared(library.thirds_zero(), depth_max=16)
    assert res.sigma2 > 0
    # i.i.d. digits under the uniform measure: variance 2/3 + 4/3 = 2 at every depth
    assert res.sigma2 == pytest.approx(2.0, abs=1e-9)


@given(st.integers(1, 4), st.sampled_from([(0.5, 0.5), (0.25, 0.75), (0.2, 0.3, 0.5)]))
def test_sigma_pm_c_equals_c_squared(c, lengths):
    # +-c with equal masses only for equal lengths; use the two-atom equal split
    w = walk_from((0.5, 0.5), (c, -c))
    res = sigma_squared(w, depth_max=8)
    assert all(abs(v - c * c) <= 1e-9 for _, v in res.table)


def test_clt_examples():
    w = library.symmetric()
    ks = [clt_check(w, n, 10_000, seed=7).ks for n in (16, 64, 1024)]
    assert ks[-1] <= 0.05
    assert ks[0] > ks[-1]
    with pytest.raises(DegenerateVariance):
        clt_check(library.constant_up(), 64, 100, seed=1)


def test_clt_deterministic():
    w = library.symmetric()
    assert clt_check(w, 64, 500, seed=3).ks == clt_check(w, 64, 500, seed=3).ks


def test_ld_rate_matches_cramer():
    eps = 0.25
    exact = 0.625 * math.log(1.25) + 0.375 * math.log(0.75)
    res = ld_rate(library.symmetric(), eps)
    assert abs(res.rate - exact) <= 0.15 * exact
    assert 0 < res.gamma < 1


def test_ld_tails_are_binomial():
    eps = 0.25
    res = ld_rate(library.symmetric(), eps)
    for n, tail in res.tails.items():
        n = int(n)
        k = np.arange(n + 1)
        avg = (2 * k - n) / n
        oracle = binom.pmf(k, n, 0.5)[np.abs(avg) >= eps - 1e-12].sum()
        assert tail == pytest.approx(oracle, rel=1e-9, abs=1e-15)


def test_ld_tails_monotone_on_aligned_n():
    # the exact tails oscillate with the lattice; along n with eps*n an even
    # integer the threshold sits on the lattice and the tails decrease
    res = ld_rate(library.symmetric(), 0.25, n_schedule=(8, 16, 24))
    t = [res.tails[n] for n in (8, 16, 24)]
    assert t[0] > t[1] > t[2]


def test_ld_constant_and_large_eps():
    res = ld_rate(library.constant_up(), 0.1)
    assert res.gamma == 0.0
    assert all(v == 0 for v in res.tails.values())
    res = ld_rate(library.symmetric(), 1.5)
    assert all(v == 0 for v in res.tails.values())


def test_azuma_examples():
    b = azuma_bound([1.0], 1.0)
    assert b.raw == pytest.approx(2 * math.exp(-0.5))
    assert b.bound == 1.0
    n = 7
    assert azuma_bound([1.0] * n, math.sqrt(2 * n * math.log(2))).raw == pytest.approx(1.0)
    assert azuma_bound([1, 1, 1, 1], 4).raw == pytest.approx(2 * math.exp(-2))
    assert azuma_bound([0.0, 0.0], 1.0).bound == 0.0


@given(st.lists(st.floats(0.1, 3.0), min_size=1, max_size=5), st.floats(0.1, 5), st.floats(0.01, 2))
def test_azuma_monotone(c, t, dt):
    assert azuma_bound(c, t + dt).raw <= azuma_bound(c, t).raw
    c2 = list(c)
    c2[0] += dt
    assert azuma_bound(c2, t).raw >= azuma_bound(c, t).raw


def test_margin_examples():
    assert strong_transience_margin(library.constant_up()).K == 1.0
    assert strong_transience_margin(library.thirds_positive()).K == pytest.approx(1.0, abs=1e-12)
    assert strong_transience_margin(library.symmetric()).K == 0.0
    m = strong_transience_margin(library.symmetric())
    assert not m.certified


def test_margin_perturbed_positive():
    from walklab.stability import PerturbationSchedule, perturb
    G = perturb(library.positive(), PerturbationSchedule(0.1, 0.5), 1)
    m = strong_transience_margin(G)
    assert 0.4 < m.K <= 0.5 + 1e-12
