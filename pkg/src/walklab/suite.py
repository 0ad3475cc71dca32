"""Acceptance battery.

Each criterion is a function returning a :class:`CriterionResult`; the CLI
``suite`` subcommand and the acceptance tests share them.  Reported values
are deterministic given the seed; wall-clock times are kept separately.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from . import library
from .dimension import (beta_survivor_family, dd_cover, dimension_estimate, hd_bounds,
                        partition_moment_sum, vhd)
from .markov_core import affine_full_branch_map
from .output import plain
from .renorm import feigenbaum_induced
from .spectral import (clt_check, invariant_density, ld_rate, mean_drift,
                       strong_transience_margin, ulam_matrix)
from .stability import (PerturbationSchedule, asymp_verify, classify, conjugacy,
                        conjugacy_eval_many, msqs_test, perturb)
from .walk import WalkPoint, simulate_ensemble, step

__all__ = ["CriterionResult", "CRITERIA", "run_criterion", "shipped_perturbations",
           "binomial_rate"]


@dataclass
class CriterionResult:
    id: int
    title: str
    checks: dict
    values: dict = field(default_factory=dict)
    runtime: float = 0.0
    notes: str = ""

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def line(self) -> str:
        failed = [k for k, v in self.checks.items() if not v]
        tail = "" if not failed else "  failed: " + ", ".join(failed)
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id:2d}. {self.title}{tail}"

    def to_json(self) -> dict:
        return {"id": self.id, "title": self.title, "passed": self.passed,
                "checks": {k: bool(v) for k, v in self.checks.items()},
                "values": plain(self.values), "notes": self.notes}


def binomial_rate(eps: float) -> float:
    """Cramer rate of a fair +-1 coin at mean eps."""
    a, b = (1 + eps) / 2, (1 - eps) / 2
    return a * math.log(2 * a) + b * math.log(2 * b)


def shipped_perturbations(seed: int = 0) -> list:
    """(name, base walk, schedule) for every perturbation the package ships."""
    return [
        ("negative-shift", library.negative(), PerturbationSchedule(0.1, 0.5)),
        ("symmetric-shift", library.symmetric(), PerturbationSchedule(0.2, 0.5, (-6, 6))),
        ("positive-shift", library.positive(), PerturbationSchedule(0.1, 0.5)),
        ("thirds-bump", library.thirds_zero(),
         PerturbationSchedule(0.1, 0.5, (-4, 4), endpoint_shifts=False, branch_edits=True)),
        ("fibonacci-bump", library.fibonacci(),
         PerturbationSchedule(0.1, 0.5, (0, 6), endpoint_shifts=False, branch_edits=True,
                              negative_states_frozen=True)),
    ]


# ----------------------------------------------------------- criteria

def c01_density(seed, **kw):
    fmap = affine_full_branch_map((0.5, 0.5))
    t = time.perf_counter()
    model = invariant_density(ulam_matrix(fmap, 1024))
    dt = time.perf_counter() - t
    dev = float(np.max(np.abs(model.density - 1.0)))
    return CriterionResult(1, "invariant density of the doubling map",
                           {"sup_deviation<=1e-3": dev <= 1e-3, "runtime<5s": dt < 5},
                           {"sup_deviation": dev, "iterations": model.iterations}, dt)


def c02_mean_drift(seed, **kw):
    cases = [("symmetric", 0.0, 1e-12), ("thirds-zero", 0.0, 1e-9), ("positive", 0.5, 1e-9)]
    checks, vals = {}, {}
    for name, target, tol in cases:
        M = mean_drift(library.get_walk(name)).M
        vals[name] = M
        checks[f"{name}: |M-{target}|<={tol:g}"] = abs(M - target) <= tol
    return CriterionResult(2, "mean drift on exact examples", checks, vals)


def c03_trichotomy(seed, ensemble=1000, horizon=100_000, threads=1, **kw):
    expected = {"negative": "transientMinus", "symmetric": "recurrent", "positive": "transientPlus"}
    checks, vals = {}, {}
    t = time.perf_counter()
    for name, want in expected.items():
        w = library.get_walk(name)
        res = classify(w, ensemble, horizon, seed, threads=threads)
        vals[name] = {"M": mean_drift(w).M, "verdict": res.verdict, "fractions": res.fractions}
        checks[f"{name}->{want}"] = res.verdict == want and res.fractions[want] >= 0.9
    dt = time.perf_counter() - t
    checks["runtime<300s"] = dt < 300
    return CriterionResult(3, "drift-sign trichotomy by ensemble classification", checks,
                           {"ensemble": ensemble, "horizon": horizon, **vals}, dt)


def c04_strong_transience(seed, ensemble=1000, horizon=10_000, threads=1, **kw):
    checks, vals = {}, {}
    ns = (10, 20, 50, 100, 150, 200)
    for name in library.available():
        w = library.get_walk(name)
        K = strong_transience_margin(w, 8).K
        entry = {"K": K}
        if K > 0:
            res = classify(w, ensemble, horizon, seed, threads=threads)
            entry["verdict"] = res.verdict
            checks[f"{name} certified -> transientPlus"] = res.verdict == "transientPlus"
            ens = simulate_ensemble(w, ensemble, max(ns), seed, record_times=ns, threads=threads)
            frac = [float(np.mean(ens.recorded[:, i] < (K - 0.1) * n)) for i, n in enumerate(ns)]
            pos = [(n, f) for n, f in zip(ns, frac) if f > 0]
            if len(pos) >= 2:
                rate = -float(np.polyfit([p[0] for p in pos], np.log([p[1] for p in pos]), 1)[0])
            else:
                rate = math.inf          # lag events vanish outright
            entry.update(lag_fractions=frac, lag_rate=rate)
            checks[f"{name} lag fraction decays"] = rate > 0
        vals[name] = entry
    return CriterionResult(4, "strong-transience margin implies transience", checks, vals)


def c05_vhd(seed, **kw):
    a, b, c = vhd([0.5, 0.5]), vhd([0.25, 0.25]), vhd([0.3])
    hb = hd_bounds(0.5, 0.5, 0.01)
    expect = 0.01 / (math.log(2.0) - 0.01)
    checks = {"{1/2,1/2}->1": abs(a - 1) <= 1e-10, "{1/4,1/4}->1/2": abs(b - 0.5) <= 1e-10,
              "singleton->0": abs(c) <= 1e-10, "half-width": abs(hb.half_width - expect) <= 1e-12}
    return CriterionResult(5, "virtual dimension on exact families", checks,
                           {"vhd": [a, b, c], "half_width": hb.half_width, "expected": expect})


def c06_survivor_trends(seed, depths=(2, 4, 6, 8, 10, 12, 14), **kw):
    t = time.perf_counter()
    sym = dimension_estimate(library.symmetric(), 0, 0, depths)
    neg = dimension_estimate(library.negative(), 0, 0, depths)
    dt = time.perf_counter() - t
    bs = [e.beta for e in sym]
    bn = [e.beta for e in neg]
    ballot = [int(comb(n, n // 2, exact=True)) for n in depths]
    checks = {
        "symmetric families are ballot paths": [e.family_size for e in sym] == ballot,
        "symmetric beta(14)>=0.95": bs[-1] >= 0.95,
        "symmetric beta increasing": all(y > x for x, y in zip(bs, bs[1:])),
        "negative beta(14)<=0.999": bn[-1] <= 0.999,
        "negative beta decreasing in tail": bn[-1] < bn[-2] < bn[-3],
        "runtime<60s": dt < 60,
    }
    return CriterionResult(6, "survivor dimension trends", checks,
                           {"depths": list(depths), "symmetric": bs, "negative": bn,
                            "ballot_counts": ballot}, dt)


def c07_dimension_stability(seed, depths=(2, 4, 6, 8, 10, 12), beta_slope=0.2, **kw):
    F = library.negative()
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed)
    bF = [e.beta for e in dimension_estimate(F, 0, 0, depths)]
    bG = [e.beta for e in dimension_estimate(G, 0, 0, depths)]
    sF, sG = [], []
    for d in depths:
        fF = beta_survivor_family(F, 0, d, beta_slope).family
        fG = beta_survivor_family(G, 0, d, beta_slope).family
        sF.append(vhd(fF) if len(fF) else 0.0)
        sG.append(vhd(fG) if len(fG) else 0.0)
    checks = {"beta_G>=beta_F-0.02": all(g >= f - 0.02 for f, g in zip(bF, bG)),
              "|beta-slice diff|<=0.05": all(abs(g - f) <= 0.05 for f, g in zip(sF, sG))}
    return CriterionResult(7, "dimension stability under perturbation", checks,
                           {"depths": list(depths), "beta_F": bF, "beta_G": bG,
                            "slice_F": sF, "slice_G": sG})


def c08_perturbation_contract(seed, **kw):
    checks, vals = {}, {}
    for name, base, sched in shipped_perturbations(seed):
        G = perturb(base, sched, seed)
        fit = asymp_verify(base, G, seed=seed)
        vals[name] = {"lam": fit.lam, "C": fit.C, "residual": fit.residual}
        checks[f"{name}: lam<0.8, residual<=0.1"] = fit.lam < 0.8 and fit.residual <= 0.1
    return CriterionResult(8, "perturbations decay geometrically", checks, vals)


def c09_clt(seed, samples=10_000, **kw):
    w = library.symmetric()
    big = clt_check(w, 1024, samples, seed)
    small = clt_check(w, 64, samples, seed)
    return CriterionResult(9, "central limit behaviour", {"KS(1024)<=0.05": big.ks <= 0.05,
                                                          "KS(64)>KS(1024)": small.ks > big.ks},
                           {"ks_1024": big.ks, "ks_64": small.ks, "sigma2": big.sigma2})


def c10_large_deviations(seed, eps=0.25, **kw):
    res = ld_rate(library.symmetric(), eps, seed=seed)
    exact = binomial_rate(eps)
    rel = abs(res.rate - exact) / exact
    return CriterionResult(10, "large-deviation rate", {"within 15% of exact": rel <= 0.15},
                           {"rate": res.rate, "exact": exact, "relative_error": rel,
                            "raw_tail_fit_rate": res.tail_fit_rate, "method": res.method})


def c11_moment_sums(seed, **kw):
    dbl = partition_moment_sum(library.symmetric(), 0, 12, 0.1)
    geo = partition_moment_sum(library.geometric(), 0, 4, 0.1)
    checks = {"doubling growth=2^0.1": abs(dbl.growth - 2 ** 0.1) <= 1e-9,
              "geometric growth finite": math.isfinite(geo.growth) and geo.growth > 0}
    return CriterionResult(11, "partition moment sums", checks,
                           {"doubling_growth": dbl.growth, "geometric_growth": geo.growth,
                            "geometric_alpha": geo.alpha, "geometric_C": geo.C})


def c12_dd_covers(seed, samples=200, systems=("geometric", "two-sided"), k_max=100.0, **kw):
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(12,)))
    checks, vals = {}, {}
    alphas = (0.5, 0.75, 1.0)
    K = 1.0
    for name in systems:
        w = library.get_walk(name)
        ok_count = ok_cover = ok_sep = True
        worst = 0
        for _ in range(samples):
            a, b = np.sort(rng.uniform(0.0, 1.0, 2))
            if b - a < 1e-6:
                b = a + 1e-6
            cov = dd_cover(w, 0, (float(a), float(b)), alphas=alphas)
            N = len(cov.separators)
            ok_count &= len(cov) <= max(1, 2 * N)
            worst = max(worst, len(cov))
            lo = min(float(iv.lo.min()) for iv in cov)
            hi = max(float(iv.hi.max()) for iv in cov)
            gaps = all(np.all(iv.lo[1:] <= iv.hi[:-1] + 1e-15) for iv in cov)
            ok_cover &= lo <= a + 1e-15 and hi >= b - 1e-15 and gaps
            ok_sep &= all(not (iv.hull.lo < s < iv.hull.hi) for iv in cov for s in cov.separators)
            for r in cov.ratios.values():
                K = max(K, r, 1.0 / r)
        checks[f"{name}: count<=2N"] = ok_count
        checks[f"{name}: covers J"] = ok_cover
        checks[f"{name}: avoids separators"] = ok_sep
        vals[name] = {"max_intervals": worst}
    checks[f"K<={k_max:g}"] = K <= k_max
    vals["K"] = K
    return CriterionResult(12, "dd-interval covers", checks, vals)


def c13_conjugacy(seed, tol=1e-10, points=100, **kw):
    F = library.positive()
    G = perturb(F, PerturbationSchedule(0.1, 0.5), seed)
    h = conjugacy(F, G, tol)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(13,)))
    worst = 0.0
    for x, n in zip(rng.uniform(0, 1, points), rng.integers(-3, 4, points)):
        p = WalkPoint(float(x), int(n))
        Fp = step(F, p)
        lhs = conjugacy_eval_many(h, [Fp.x], Fp.n, tol)[0]
        hp = conjugacy_eval_many(h, [p.x], p.n, tol)[0]
        rhs = step(G, WalkPoint(float(hp), p.n))
        worst = max(worst, abs(lhs - rhs.x))
    ms = msqs_test(F, G, 10, seed=seed)
    checks = {"max|HF-GH|<=2tol": worst <= 2 * tol, "alpha>0": ms.alpha > 0,
              "envelope residual<=0.2": ms.residual <= 0.2}
    return CriterionResult(13, "conjugacy and its regularity", checks,
                           {"max_defect": worst, "alpha": ms.alpha, "C": ms.C,
                            "residual": ms.residual, "label": ms.label})


def c14_feigenbaum(seed, max_level=8, root_tol=1e-10, **kw):
    t = time.perf_counter()
    rep = feigenbaum_induced(None, max_level, root_tol)
    dt = time.perf_counter() - t
    lv = rep.levels[1:]
    nested = all(abs(b["p"]) < abs(a["p"]) for a, b in zip(rep.levels, rep.levels[1:]))
    resid = max(x["residual"] for x in lv)
    sym = all(abs(x["interval"][0] + x["interval"][1]) <= root_tol for x in lv)
    checks = {"c located to 1e-10": rep.c_error <= 1e-10,
              f"levels 1..{max_level}": [x["k"] for x in lv] == list(range(1, max_level + 1)),
              "ratio differences decay": rep.ratio_rate is not None and rep.ratio_rate < 1,
              "nested": nested, "boundary residual<=rootTol": resid <= root_tol,
              "symmetric": sym, "runtime<60s": dt < 60}
    return CriterionResult(14, "period-doubling induced maps", checks,
                           {"c": rep.c, "c_error": rep.c_error, "ratios": rep.ratios,
                            "ratio_rate": rep.ratio_rate, "max_residual": resid,
                            "stop": rep.stop_reason}, dt)


CRITERIA = {1: c01_density, 2: c02_mean_drift, 3: c03_trichotomy, 4: c04_strong_transience,
            5: c05_vhd, 6: c06_survivor_trends, 7: c07_dimension_stability,
            8: c08_perturbation_contract, 9: c09_clt, 10: c10_large_deviations,
            11: c11_moment_sums, 12: c12_dd_covers, 13: c13_conjugacy, 14: c14_feigenbaum}


def run_criterion(cid: int, seed: int, **params) -> CriterionResult:
    t = time.perf_counter()
    res = CRITERIA[cid](seed, **params)
    if not res.runtime:
        res.runtime = time.perf_counter() - t
    return res
