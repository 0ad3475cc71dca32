import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walklab import library
from walklab.markov_core import PartitionError, affine_full_branch_map
from walklab.stability import (KAPPA, LABELS, PerturbationSchedule, SymbolicMismatch, asymp_verify,
                               classify, conjugacy, conjugacy_eval, conjugacy_eval_many,
                               msqs_test, perturb)
from walklab.walk import DriftFunction, RandomWalk, WalkPoint, step


def walk_from(lengths, drift):
    return RandomWalk(affine_full_branch_map(lengths), DriftFunction(tuple(drift)))


def test_zero_schedule_is_identity():
    F = library.negative()
    G = perturb(F, PerturbationSchedule(0.0, 0.5), seed=1)
    fit = asymp_verify(F, G)
    assert (fit.C, fit.lam) == (0.0, 0.0) and fit.passed
    xs = np.linspace(0.01, 0.99, 50)
    assert np.array_equal(conjugacy_eval_many(conjugacy(F, G), xs, 3), xs)


def test_perturb_edit_magnitudes_bounded():
    F = library.positive()
    sched = PerturbationSchedule(0.1, 0.5)
    G = perturb(F, sched, seed=4)
    for n in range(-10, 11):
        a = np.array([j.lo for j in F.map_at(n).partition.atoms])
        b = np.array([j.lo for j in G.map_at(n).partition.atoms])
        shift = np.max(np.abs(a - b))
        assert shift <= KAPPA * sched.magnitude(n) * 0.5 + 1e-15
        if abs(n) > 8:
            assert shift == 0.0


def test_perturb_fit_lambda():
    F = library.negative()
    G = perturb(F, PerturbationSchedule(0.1, 0.5, (-8, 8)), seed=0)
    fit = asymp_verify(F, G, seed=0)
    assert 0 < fit.lam <= 0.75
    assert fit.passed


def test_perturb_refuses_unbounded_without_freeze():
    with pytest.raises(PartitionError):
        perturb(library.geometric(), PerturbationSchedule(0.1, 0.5), seed=0)
    G = perturb(library.geometric(), PerturbationSchedule(0.1, 0.5, (0, 4),
                                                          negative_states_frozen=True), seed=0)
    assert G.window[0] >= 0


def test_perturb_refuses_large_edits():
    with pytest.raises(PartitionError):
        perturb(library.negative(), PerturbationSchedule(3.0, 0.5), seed=0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        PerturbationSchedule(0.1, 1.5)
    with pytest.raises(ValueError):
        PerturbationSchedule(-0.1, 0.5)


def test_conjugacy_identity():
    F = library.symmetric()
    h = conjugacy(F, F, 1e-12)
    xs = np.random.default_rng(0).uniform(0, 1, 100)
    assert np.allclose(conjugacy_eval_many(h, xs, 0), xs, atol=1e-12)


def test_conjugacy_boundary_matching():
    F = walk_from((0.5, 0.5), (1, -1))
    G = walk_from((0.6, 0.4), (1, -1))
    p = conjugacy_eval(conjugacy(F, G), WalkPoint(0.5, 2))
    assert p.n == 2
    assert p.x == pytest.approx(0.6, abs=1e-15)


def test_conjugacy_commutes():
    F = library.positive()
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed=6)
    tol = 1e-10
    h = conjugacy(F, G, tol)
    rng = np.random.default_rng(1)
    for x, n in zip(rng.uniform(0, 1, 100), rng.integers(-4, 5, 100)):
        Fp = step(F, WalkPoint(float(x), int(n)))
        lhs = conjugacy_eval(h, Fp)
        hp = conjugacy_eval(h, WalkPoint(float(x), int(n)))
        rhs = step(G, hp)
        assert lhs.n == rhs.n
        assert abs(lhs.x - rhs.x) <= 2 * tol


@given(st.integers(-5, 5), st.integers(0, 1000))
def test_conjugacy_monotone(n, seed):
    F = library.negative()
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed=seed % 7)
    xs = np.sort(np.random.default_rng(seed).uniform(0, 1, 40))
    hx = conjugacy_eval_many(conjugacy(F, G), xs, n)
    assert np.all(np.diff(hx) >= 0)


def test_conjugacy_symbolic_mismatch():
    F = library.symmetric()
    G = walk_from((1 / 3, 1 / 3, 1 / 3), (1, -1, 0))
    with pytest.raises(SymbolicMismatch):
        conjugacy(F, G)


def test_classify_constant():
    res = classify(library.constant_up(), 200, 2000, seed=1)
    assert res.verdict == "transientPlus"
    assert res.fractions["transientPlus"] == 1.0
    assert res.strong_transience_margin == 1.0


@pytest.mark.slow
def test_classify_mild_positive():
    res = classify(library.mild_positive(), 1000, 100_000, seed=3)
    assert res.verdict == "transientPlus"
    assert res.fractions["transientPlus"] >= 0.95


@pytest.mark.slow
def test_classify_symmetric_recurrent():
    res = classify(library.symmetric(), 1000, 100_000, seed=5)
    assert res.verdict == "recurrent"
    assert res.fractions["recurrent"] >= 0.9
    assert res.strong_transience_margin is None


@given(st.integers(0, 2 ** 31 - 1))
def test_classify_fractions_sum_and_determinism(seed):
    a = classify(library.symmetric(), 50, 300, seed)
    b = classify(library.symmetric(), 50, 300, seed, threads=2)
    assert set(a.fractions) == set(LABELS)
    assert sum(a.fractions.values()) == pytest.approx(1.0)
    assert a.fractions == b.fractions and a.verdict == b.verdict


def test_asymp_uniform_change_fails():
    F = walk_from((0.5, 0.5), (1, -1))
    G = walk_from((0.45, 0.55), (1, -1))
    fit = asymp_verify(F, G)
    assert fit.lam == pytest.approx(1.0, abs=1e-6)
    assert not fit.passed


def test_omega_inequality_desk():
    F = library.negative()
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed=0)
    from walklab.dimension import dimension_estimate
    for a, b in zip(dimension_estimate(F, 0, 0, (4, 8, 12)), dimension_estimate(G, 0, 0, (4, 8, 12))):
        assert b.beta >= a.beta - 0.02


def test_msqs_identity():
    F = library.positive()
    res = msqs_test(F, F, 6)
    assert res.alpha == 1.0 and res.C == pytest.approx(1.0)


def test_msqs_affine_transient_pair():
    F = library.positive()
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed=2)
    res = msqs_test(F, G, 8)
    assert 0 < res.alpha <= 1
    assert not res.exploratory
    assert res.forward.size and res.backward.size


def test_msqs_recurrent_pair_is_exploratory():
    F = library.symmetric()
    G = perturb(F, PerturbationSchedule(0.2, 0.5), seed=2)
    assert msqs_test(F, G, 6).exploratory
