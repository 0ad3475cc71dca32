import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walklab import library
from walklab.markov_core import (AdmissibilityError, BoundaryError,
                                 affine_full_branch_map, build_partition, eval_map, make_map)
from walklab.spectral import mean_drift
from walklab.stability import PerturbationSchedule, conjugacy, perturb
from walklab.walk import (DriftFunction, RandomWalk, WalkPoint, check_good_drift, cylinder,
                          dist_n, enumerate_paths, orbit_states, refine_partition,
                          simulate_ensemble, step)


def walk_from(lengths, drift):
    return RandomWalk(affine_full_branch_map(lengths), DriftFunction(tuple(drift)))


def test_step_examples():
    w = library.symmetric()
    p = step(w, WalkPoint(0.3, 5))
    assert (p.x, p.n) == (pytest.approx(0.6), 6)
    p = step(w, WalkPoint(0.75, 0))
    assert (p.x, p.n) == (pytest.approx(0.5), -1)
    with pytest.raises(BoundaryError):
        step(w, WalkPoint(0.5, 0))


def test_orbit_constant_drift():
    assert orbit_states(library.constant_up(), WalkPoint(0.3, 0), 4).tolist() == [0, 1, 2, 3, 4]


def test_orbit_symmetric_increments():
    s = np.array(orbit_states(library.symmetric(), WalkPoint(0.1234567, 0), 200).tolist())
    assert len(s) == 201
    assert set(np.diff(s).tolist()) <= {-1, 1}


def test_orbit_tail_escape_marker():
    w = library.geometric(tolerance=1e-3)
    o = orbit_states(w, WalkPoint(1e-6, 0), 5)
    assert o.escaped_at == 1
    assert len(o) == 1


def test_ensemble_mean_matches_drift():
    w = library.mild_positive()
    n = 200
    ens = simulate_ensemble(w, 1000, n, seed=9)
    M = mean_drift(w).M
    # per-step variance of psi under the uniform density
    var = 0.4 * 4 + 0.6 * 1 - M ** 2
    emp = float(np.mean(ens.final)) / n
    # generous: Birkhoff sums are correlated only weakly for full affine branches
    assert abs(emp - M) <= 3 * math.sqrt(var / (n * 1000)) * 2


def test_ensemble_is_thread_and_block_independent():
    w = library.symmetric()
    a = simulate_ensemble(w, 300, 500, seed=4, threads=1, block=4096)
    b = simulate_ensemble(w, 300, 500, seed=4, threads=3, block=64)
    assert np.array_equal(a.final, b.final)
    assert np.array_equal(a.returns, b.returns)


def test_cylinder_examples():
    w = library.symmetric()
    c = cylinder(w, 0, (0, 1))
    assert (c.lo, c.hi) == (pytest.approx(0.25), pytest.approx(0.5))
    c = cylinder(w, 0, (0, 0, 0))
    assert (c.lo, c.hi) == (pytest.approx(0.0), pytest.approx(0.125))
    assert c.states == (0, 1, 2, 3)


def test_inadmissible_cylinder():
    w = library.not_onto()
    with pytest.raises(AdmissibilityError):
        cylinder(w, 0, (0, 0))       # atom 0 maps onto [1/3, 1]


def test_refine_examples():
    fam = refine_partition(library.symmetric(), 0, 3)
    assert len(fam) == 8
    assert np.allclose(fam.lengths, 1 / 8)
    fam = refine_partition(walk_from((2 / 3, 1 / 3), (-1, 2)), 0, 2)
    assert np.allclose(fam.lengths, [4 / 9, 2 / 9, 2 / 9, 1 / 9])


def test_refine_geometric_total():
    tol = 1e-6
    fam = refine_partition(library.geometric(tol), 0, 2, cap=10 ** 4)
    assert len(fam) == 400
    assert fam.total_length >= 1 - 2 * tol
    assert fam.total_length + fam.omitted_length == pytest.approx(1.0, abs=1e-9)


def test_refine_cap_reports_partial():
    fam = refine_partition(library.symmetric(), 0, 6, cap=10)
    assert fam.partial
    assert len(fam) <= 10


@given(st.integers(1, 5), st.integers(0, 2 ** 16))
def test_cylinder_nesting(depth, code):
    w = walk_from((0.4, 0.6), (2, -1))
    path = [(code >> i) & 1 for i in range(depth + 1)]
    big = cylinder(w, 0, path[:-1]) if depth else None
    small = cylinder(w, 0, path)
    theta = w.expansion_bound
    if big is not None:
        assert big.lo - 1e-15 <= small.lo and small.hi <= big.hi + 1e-15
        assert small.length <= theta * big.length + 1e-15


@given(st.integers(1, 7))
def test_refine_lengths_sum(depth):
    fam = refine_partition(library.not_onto(), 0, depth)
    assert abs(fam.total_length + fam.omitted_length - 1.0) <= 1e-9


def test_birkhoff_sum_identity():
    w = walk_from((0.4, 0.6), (2, -1))
    psi = w.drift.values
    rng = np.random.default_rng(0)
    for x0 in rng.uniform(0, 1, 100):
        traj = orbit_states(w, WalkPoint(float(x0), 3), 1000).tolist()
        x, total, expect = float(x0), 3, [3]
        for _ in range(1000):
            y, _, j = eval_map(w.base, x)
            total += psi[j]
            expect.append(total)
            x = y
        assert traj == expect


def test_dist_identity_and_affine_sum():
    F = library.positive()
    h = conjugacy(F, F)
    assert dist_n(F, F, h, cylinder(F, 0, (0, 1, 0))) == 0.0
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed=1)
    hg = conjugacy(F, G)
    cyl = cylinder(F, 0, (0, 1, 1, 0))
    # direct product of slopes along the path
    prod_f = prod_g = 1.0
    for a, s in zip(cyl.path, cyl.states[:-1]):
        bf, bg = F.map_at(s).branches[a], G.map_at(s).branches[a]
        prod_f *= bf.slope
        prod_g *= bg.slope
    assert dist_n(F, G, hg, cyl) == pytest.approx(abs(math.log(prod_g / prod_f)), abs=1e-12)


def test_dist_subadditive_affine():
    F = library.positive()
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed=2)
    h = conjugacy(F, G)
    c1 = cylinder(F, 0, (0, 1))
    full = cylinder(F, 0, (0, 1, 1, 0))
    c2 = cylinder(F, c1.states[-1], (1, 0))
    assert dist_n(F, G, h, full) <= dist_n(F, G, h, c1) + dist_n(F, G, h, c2) + 1e-12


def test_dist_bounded_far_from_window():
    F = library.positive()
    sched = PerturbationSchedule(0.1, 0.5)
    G = perturb(F, sched, seed=3)
    h = conjugacy(F, G)
    s = 5
    cyl = cylinder(F, s, (0, 0, 0))          # states 5, 7, 9
    bound = sum(sched.magnitude(n) for n in cyl.states[:-1])
    assert dist_n(F, G, h, cyl) <= bound


def test_good_drift_geometric():
    fit = check_good_drift(library.geometric())
    assert fit.ok
    assert fit.gamma == pytest.approx(0.5, abs=1e-6)


def test_good_drift_bounded_convention():
    w = walk_from((0.25, 0.25, 0.5), (3, 1, -1))
    fit = check_good_drift(w)
    assert fit.ok and fit.gamma == 0.0
    assert fit.C == pytest.approx(0.5)


def test_good_drift_heavy_tail_flagged():
    K = 40
    ks = np.arange(1, K + 1)
    lengths = np.append(1.0 / ks[:-1] ** 2 - 1.0 / (ks[:-1] + 1) ** 2, 1.0 / K ** 2)
    w = walk_from(lengths, ks)
    assert not check_good_drift(w).ok


def test_drift_unbounded_below_refused():
    with pytest.raises(ValueError):
        DriftFunction((0,), (), ((0, -1),))


def test_enumerate_floor_prunes_below():
    paths, states, partial = enumerate_paths(library.symmetric(), 0, 3, floor=0)
    assert not partial
    assert sorted(map(tuple, paths.tolist())) == [(0, 0, 0), (0, 0, 1), (0, 1, 0)]
    assert np.all(states >= 0)


def test_cross_state_markov_check():
    part = build_partition([(0, 0.5), (0.5, 1)])
    other = build_partition([(0, 0.4), (0.4, 1)])
    fmap = make_map(part, [(0.0, 0.5), (0.0, 1.0)])
    odd = make_map(other, [(0.0, 1.0), (0.0, 1.0)])
    # atom 0 at state 0 moves to state 1 whose partition has no boundary at 0.5
    with pytest.raises(ValueError):
        RandomWalk(fmap, DriftFunction((1, -1)), ((1, odd),))
