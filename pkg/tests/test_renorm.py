import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from walklab import library
from walklab.markov_core import PartitionError, affine_full_branch_map
from walklab.renorm import (QuotientData, accumulation_parameter, drift_verdict, extract_quotient,
                            feigenbaum_induced, fibonacci_model, homogeneous_from_quotient,
                            wild_attractor_criterion)
from walklab.spectral import mean_drift
from walklab.stability import PerturbationSchedule, asymp_verify, classify, perturb
from walklab.walk import DriftFunction

# Published value of the period-doubling accumulation point of x^2 + c.
ACCUMULATION_REFERENCE = -1.4011551890920506


@pytest.fixture(scope="module")
def cascade():
    return feigenbaum_induced(max_level=8)


def test_accumulation_parameter():
    acc = accumulation_parameter()
    assert abs(acc.c - ACCUMULATION_REFERENCE) <= 1e-10
    assert acc.error <= 1e-10
    assert acc.delta[-1] == pytest.approx(4.6692016, abs=1e-4)


def test_superstable_orbits_return_to_zero():
    acc = accumulation_parameter(8)
    for k, c in enumerate(acc.superstable):
        x = 0.0
        for _ in range(2 ** k):
            x = x * x + c
        assert abs(x) < 1e-9


def test_cascade_intervals_nest(cascade):
    assert len(cascade.levels) >= 6
    ivs = cascade.intervals
    for (a, b), (c, d) in zip(ivs, ivs[1:]):
        assert a < c < d < b
        assert c == -d


def test_cascade_boundary_residuals(cascade):
    for lv in cascade.levels[1:]:
        assert lv["residual"] <= 1e-10
        assert lv["multiplier"] < -1


def test_cascade_ratio_converges(cascade):
    r = cascade.ratios
    assert abs(r[-1] - r[-2]) < abs(r[1] - r[0])
    # scaling toward the universal ratio 1/|alpha|
    assert r[-1] == pytest.approx(1 / 2.5029, abs=0.02)


def test_branch_return_times(cascade):
    lv = cascade.levels[2]
    assert lv["branches"]
    assert all(b["return_time"] is not None for b in lv["branches"])


def test_cascade_stops_before_accumulation():
    rep = feigenbaum_induced(-1.1, max_level=8)
    assert len(rep.levels) == 2
    assert rep.stop_reason == "renormalization depth exhausted"


def test_cascade_rejects_deep_levels():
    with pytest.raises(ValueError):
        feigenbaum_induced(max_level=11)
    with pytest.raises(ValueError):
        feigenbaum_induced(-2.5)


def test_quotient_roundtrip():
    q = affine_full_branch_map((0.5, 0.5))
    w = homogeneous_from_quotient(QuotientData(q, DriftFunction((1, -1)), 0.3))
    back = extract_quotient(w)
    assert back.q is q and back.scale == 0.3
    assert back.psi.values == (1, -1)
    with pytest.raises(ValueError):
        QuotientData(q, DriftFunction((1, -1)), 1.0)


def test_fibonacci_model_valid():
    w = fibonacci_model()
    est = mean_drift(w, 1024)
    assert est.M == pytest.approx(-2 / 15, abs=1e-3)
    res = classify(w, 50, 2000, seed=1)
    assert sum(res.fractions.values()) == pytest.approx(1.0)
    verdict = wild_attractor_criterion(w)
    assert verdict.verdict == "dimensionDeficit"


def test_fibonacci_perturbation_passes_fit():
    F = fibonacci_model()
    sched = PerturbationSchedule(0.1, 0.5, (0, 6), endpoint_shifts=False, branch_edits=True,
                                 negative_states_frozen=True)
    G = perturb(F, sched, seed=3)
    fit = asymp_verify(F, G, seed=3)
    assert fit.passed and fit.lam <= 0.75


def test_fibonacci_inadmissible_spec():
    with pytest.raises(PartitionError):
        fibonacci_model(branch_spec={"outer": [{"length": 1.0, "drift": 0}]})
    with pytest.raises(PartitionError):
        fibonacci_model(branch_spec={"outer": [{"drift": 0}]})
    with pytest.raises(ValueError):
        fibonacci_model(scale=1.0)


def test_wild_attractor_verdicts():
    assert wild_attractor_criterion(library.positive()).verdict == "positiveMeasureWildAttractor"
    assert wild_attractor_criterion(library.symmetric()).verdict == "nullFullDimension"
    assert wild_attractor_criterion(library.negative()).verdict == "dimensionDeficit"


def test_withheld_verdict():
    v = drift_verdict(0.001, 0.01)
    assert v.withheld
    assert set(v.candidates) == {"dimensionDeficit", "nullFullDimension", "positiveMeasureWildAttractor"}


@given(st.floats(-2, 2), st.floats(0, 1))
def test_verdict_consistent_with_interval(M, err):
    v = drift_verdict(M, err)
    lo, hi = v.interval
    if v.verdict == "positiveMeasureWildAttractor":
        assert lo > 0
    elif v.verdict == "dimensionDeficit":
        assert hi < 0
    elif not v.withheld:
        assert math.isclose(M, 0, abs_tol=1e-9)


@pytest.mark.parametrize("name", ["positive", "symmetric", "negative", "not-onto", "two-sided"])
def test_verdict_stable_under_bin_doubling(name):
    w = library.get_walk(name)
    assert wild_attractor_criterion(w, 512).verdict == wild_attractor_criterion(w, 1024).verdict
