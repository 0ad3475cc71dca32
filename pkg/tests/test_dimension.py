import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walklab import library
from walklab.dimension import (beta_survivor_family, dd_cover, dimension_estimate, hd_bounds,
                               partition_moment_sum, root_cylinder_ratio, survivor_family, vhd)
from walklab.walk import cylinder

lengths_st = st.lists(st.floats(1e-3, 0.3), min_size=1, max_size=12)


def test_vhd_examples():
    assert vhd([0.5]) == pytest.approx(0.0, abs=1e-10)
    assert vhd([0.5, 0.5]) == pytest.approx(1.0, abs=1e-10)
    assert vhd([0.25, 0.25]) == pytest.approx(0.5, abs=1e-10)
    with pytest.raises(ValueError):
        vhd([])


@given(lengths_st)
def test_vhd_root_residual(L):
    b = vhd(L)
    assert abs(np.sum(np.array(L) ** b) - 1) <= 1e-10 or b == 0.0


@given(lengths_st, st.floats(1e-3, 0.3))
def test_vhd_adding_cylinder_increases(L, extra):
    if len(L) < 2:
        L = L + [0.1]
    assert vhd(L + [extra]) > vhd(L)


@given(lengths_st, st.floats(0.1, 0.95))
def test_vhd_scaling_decreases(L, t):
    L = L + [0.2]
    assert vhd([t * x for x in L]) < vhd(L)


@given(lengths_st)
def test_vhd_at_most_one_when_total_short(L):
    L = np.array(L)
    if L.sum() <= 1:
        assert vhd(L) <= 1 + 1e-12


def test_hd_bounds_examples():
    b = hd_bounds(0.6, 0.5, 0.0)
    assert b.lower == b.upper == 0.6
    b = hd_bounds(0.5, 0.5, 0.01)
    assert b.half_width == pytest.approx(0.01 / (math.log(2) - 0.01), abs=1e-12)
    b = hd_bounds(0.5, 0.5, 1.0)
    assert (b.lower, b.upper) == (0.0, 1.0) and b.warning


def ballot_paths(depth, up, down, floor=0):
    out = []
    for steps in itertools.product((0, 1), repeat=depth):
        h, ok = 0, True
        for s in steps:
            h += up if s == 0 else -down
            ok &= h >= floor
        if ok:
            out.append(steps)
    return out


def test_survivor_examples():
    w = library.symmetric()
    fam = survivor_family(w, 0, 3).family
    assert sorted(map(tuple, fam.paths.tolist())) == [(0, 0, 0), (0, 0, 1), (0, 1, 0)]
    assert np.allclose(fam.lengths, 1 / 8)
    assert len(survivor_family(library.constant_up(), 0, 6)) == 64
    assert len(survivor_family(w, 0, 3, floor=1)) == 0


@pytest.mark.parametrize("depth", [4, 7, 10])
def test_survivor_matches_brute_force(depth):
    fam = survivor_family(library.negative(), 0, depth).family
    expect = ballot_paths(depth, 1, 2)
    assert sorted(map(tuple, fam.paths.tolist())) == expect


def test_beta_survivor_examples():
    w = library.symmetric()
    fam = beta_survivor_family(w, 0, 6, 1.0).family
    assert fam.paths.tolist() == [[0] * 6]
    assert vhd(fam) == pytest.approx(0.0, abs=1e-12)
    fam = beta_survivor_family(w, 0, 4, 0.5).family
    brute = [p for p in ballot_paths(4, 1, 1) if sum(1 if s == 0 else -1 for s in p) >= 2]
    assert sorted(map(tuple, fam.paths.tolist())) == brute
    assert len(brute) == 4      # ++++, +++-, ++-+, +-++
    assert len(beta_survivor_family(w, 0, 5, 2.0)) == 0


@given(st.integers(1, 9))
def test_survivor_hereditary(n):
    w = library.negative()
    a = survivor_family(w, 0, n).family
    b = survivor_family(w, 0, n + 1).family
    prefixes = {tuple(p) for p in a.paths.tolist()}
    assert all(tuple(p[:-1]) in prefixes for p in b.paths.tolist())


def test_dimension_estimate_constant_full():
    for e in dimension_estimate(library.constant_up(), 0, 0, (2, 4, 6)):
        assert e.beta == pytest.approx(1.0, abs=1e-10)
        assert e.hd_lower == e.hd_upper == e.beta


def test_dimension_trichotomy_trends():
    sched = (4, 8, 12)
    neg = [e.beta for e in dimension_estimate(library.negative(), 0, 0, sched)]
    sym = [e.beta for e in dimension_estimate(library.symmetric(), 0, 0, sched)]
    pos = [e.beta for e in dimension_estimate(library.constant_up(), 0, 0, sched)]
    assert all(a < b < c for a, b, c in zip(neg, sym, pos))
    assert all(y > x for x, y in zip(sym, sym[1:]))
    # exact ballot numbers: beta_n = log2 C(n, n/2) / n
    assert sym[-1] == pytest.approx(math.log2(math.comb(12, 6)) / 12, abs=1e-10)


def test_dd_single_cylinder():
    w = library.symmetric()
    c = cylinder(w, 0, (0, 1, 1))
    cov = dd_cover(w, 0, (c.lo, c.hi), level=3)
    assert len(cov) == 1
    dd = cov.intervals[0]
    assert len(dd.lo) == 1 and dd.root_index == 0
    assert root_cylinder_ratio(dd, 1.0) == pytest.approx((1.0, 1.0))
    assert all(r == pytest.approx(1.0) for r in cov.ratios.values())


def test_dd_two_adjacent_cylinders():
    w = library.symmetric()
    cov = dd_cover(w, 0, (0.25, 0.75), level=2)
    assert len(cov) <= 2
    assert 1.0 <= cov.ratios[1.0] <= 2.0


def test_dd_separator_split():
    w = library.two_sided()
    cov = dd_cover(w, 0, (0.4, 0.6))
    assert cov.separators == (0.5,)
    assert len(cov) == 2
    assert all(not (iv.hull.lo < 0.5 < iv.hull.hi) for iv in cov)


def test_root_ratio_geometric_tail():
    w = library.geometric()
    cov = dd_cover(w, 0, (0.0, 0.5))
    dd = cov.intervals[0]
    assert dd.n_tail_cells == 1
    assert root_cylinder_ratio(dd, 1.0)[1] == pytest.approx(0.5, abs=1e-9)
    assert root_cylinder_ratio(dd, 0.5)[1] == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-9)
    with pytest.raises(ValueError):
        root_cylinder_ratio(dd, 0.1)


@given(st.floats(0.0, 0.98), st.floats(0.01, 1.0))
def test_dd_cover_invariants(a, width):
    b = min(a + width, 1.0)
    w = library.two_sided()
    cov = dd_cover(w, 0, (a, b))
    N = len(cov.separators)
    assert len(cov) <= max(1, 2 * N)
    hulls = sorted((iv.hull.lo, iv.hull.hi) for iv in cov)
    assert all(h1[1] <= h2[0] + 1e-15 for h1, h2 in zip(hulls, hulls[1:]))
    assert hulls[0][0] <= a + 1e-15 and hulls[-1][1] >= b - 1e-15
    assert all(not (lo < s < hi) for lo, hi in hulls for s in cov.separators)


def test_moment_sum_doubling():
    ms = partition_moment_sum(library.symmetric(), 0, 10, 0.1)
    assert ms.growth == pytest.approx(2 ** 0.1, abs=1e-9)
    assert np.allclose(ms.sums, [2 ** (0.1 * k) for k in range(1, 11)])
    ms0 = partition_moment_sum(library.symmetric(), 0, 6, 0.0)
    assert all(s <= 1 + 1e-12 for s in ms0.sums)


def test_moment_sum_geometric():
    ms = partition_moment_sum(library.geometric(), 0, 4, 0.1)
    assert math.isfinite(ms.growth)
    assert ms.growth <= 1 + ms.alpha + 1e-12
    assert all(s <= ms.C * (1 + ms.alpha) ** k * (1 + 1e-9) for k, s in enumerate(ms.sums, 1))
