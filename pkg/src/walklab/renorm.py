"""Walks built from renormalisation data.

Includes the quotient construction (a homogeneous walk from a map on a
fundamental domain plus a drift), an induced-map builder for the
period-doubling cascade of x -> x^2 + c, an illustrative Fibonacci-type
walk model, and the drift-sign criterion for wild attractors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .markov_core import (GeometricRun, MarkovMap, PartitionError,
                          build_partition, check_properties, make_map)
from .spectral import mean_drift
from .walk import DriftFunction, RandomWalk, check_good_drift

__all__ = [
    "QuotientData", "homogeneous_from_quotient", "extract_quotient",
    "accumulation_parameter", "AccumulationEstimate", "InducedMapReport",
    "feigenbaum_induced", "fibonacci_model", "WildAttractorVerdict",
    "drift_verdict", "wild_attractor_criterion",
]


@dataclass(frozen=True, eq=False)
class QuotientData:
    q: MarkovMap
    psi: DriftFunction
    scale: float

    def __post_init__(self):
        if not 0.0 < self.scale < 1.0:
            raise ValueError("scale must lie in (0, 1)")


def homogeneous_from_quotient(data: QuotientData, name: str = "quotient") -> RandomWalk:
    """Homogeneous walk with state map q and drift psi, after property checks."""
    rep = check_properties(data.q)
    bad = [p for p in ("Mk", "Ex") if not rep[p]]
    if bad:
        raise PartitionError(f"quotient map fails {', '.join(bad)}")
    walk = RandomWalk(data.q, data.psi, (), name, json.dumps({"scale": data.scale}))
    gd = check_good_drift(walk)
    if not gd.ok:
        raise PartitionError(f"drift violates the geometric tail condition: {gd.message}")
    return walk


def extract_quotient(walk: RandomWalk) -> QuotientData:
    if not walk.homogeneous:
        raise ValueError("walk is not homogeneous")
    meta = json.loads(walk.note) if walk.note else {}
    return QuotientData(walk.base, walk.drift, float(meta.get("scale", 0.5)))


# ------------------------------------------------------ period doubling

def _orbit_of_zero(c: float, n: int):
    """f_c^n(0) and its derivative in c."""
    x, dx = 0.0, 0.0
    for _ in range(n):
        dx = 2.0 * x * dx + 1.0
        x = x * x + c
    return x, dx


def _iterate(x, c: float, n: int):
    """(f^n(x), d/dx f^n(x), d/dc f^n(x)) for arrays or scalars."""
    dx = np.ones_like(x) if isinstance(x, np.ndarray) else 1.0
    dc = np.zeros_like(x) if isinstance(x, np.ndarray) else 0.0
    for _ in range(n):
        dc = 2.0 * x * dc + 1.0
        dx = dx * 2.0 * x
        x = x * x + c
    return x, dx, dc


@dataclass
class AccumulationEstimate:
    c: float
    error: float
    superstable: list
    delta: list
    bracket: tuple


def accumulation_parameter(levels: int = 12) -> AccumulationEstimate:
    """Accumulation of the period-doubling cascade of x^2 + c.

    Superstable parameters (0 periodic with period 2^k) are found by Newton
    steps from a geometric extrapolation of the previous two; Aitken's
    delta-squared process on the last three gives the limit, and the change
    between successive Aitken values is the error estimate.
    """
    cs = [0.0, -1.0]
    delta = 4.0
    deltas = []
    aitken = []
    for k in range(2, levels + 1):
        c = cs[-1] + (cs[-1] - cs[-2]) / delta
        for _ in range(100):
            g, dg = _orbit_of_zero(c, 2 ** k)
            step = g / dg
            c -= step
            if abs(step) < 1e-16:
                break
        cs.append(c)
        if k >= 3:
            delta = (cs[-2] - cs[-3]) / (cs[-1] - cs[-2])
            deltas.append(delta)
            d1, d2 = cs[-1] - cs[-2], cs[-2] - cs[-3]
            aitken.append(cs[-1] - d1 * d1 / (d1 - d2))
    c_inf = aitken[-1]
    err = max(abs(aitken[-1] - aitken[-2]), 4 * np.finfo(float).eps)
    if not cs[-1] > c_inf - err:
        raise ArithmeticError("extrapolated limit lies outside the last superstable bracket")
    return AccumulationEstimate(c_inf, err, cs, deltas, (cs[-1], cs[-2]))


@dataclass
class InducedMapReport:
    c: float
    c_error: float
    levels: list
    ratios: list
    ratio_differences: list
    ratio_rate: float | None
    rescaled_differences: list
    rescaled_rate: float | None
    stop_reason: str
    superstable: list = field(default_factory=list)

    @property
    def intervals(self) -> list:
        return [lv["interval"] for lv in self.levels]

    @property
    def periodic_points(self) -> list:
        return [lv["p"] for lv in self.levels]


def _exp_rate(values: Sequence[float]):
    pts = [(k, v) for k, v in enumerate(values) if v > 0]
    if len(pts) < 2:
        return None
    k, v = np.array(pts).T
    return float(math.exp(np.polyfit(k, np.log(v), 1)[0]))


def _reversing_fixed_point(c: float, n: int, half: float, grid: int = 20001):
    """Orientation-reversing repelling fixed point of f^n in [-half, half] nearest 0."""
    xs = np.linspace(-half, half, grid)
    g = _iterate(xs, c, n)[0] - xs
    found = []
    for i in np.nonzero(np.sign(g[:-1]) != np.sign(g[1:]))[0]:
        r = brentq(lambda x: _iterate(x, c, n)[0] - x, xs[i], xs[i + 1], xtol=1e-16, rtol=1e-15)
        _, d, dc = _iterate(r, c, n)
        found.append((r, d, dc))
    for i in np.nonzero(g == 0)[0]:
        _, d, dc = _iterate(xs[i], c, n)
        found.append((xs[i], d, dc))
    rev = [f for f in found if f[1] < 0]
    if not rev:
        return None, "no orientation-reversing fixed point"
    r = min(rev, key=lambda t: abs(t[0]))
    if r[1] >= -1.0:
        return None, "renormalization depth exhausted"
    return r, ""


def _branch_pieces(c: float, k: int, p_prev: float, p_k: float, max_return: int = 8):
    """Pieces of I_{k-1} minus I_k cut by the orbit of +-p_k, with return times."""
    n = 2 ** k
    orbit = [p_k]
    x = p_k
    for _ in range(n - 1):
        x = x * x + c
        orbit.append(x)
    cuts = sorted({v for o in orbit for v in (o, -o)})
    a, b = abs(p_k), abs(p_prev)
    pieces = []
    for lo, hi in ((-b, -a), (a, b)):
        pts = [lo] + [v for v in cuts if lo < v < hi] + [hi]
        pieces.extend((u, v) for u, v in zip(pts[:-1], pts[1:]) if v - u > 1e-15)
    step = 2 ** (k - 1)
    out = []
    for u, v in pieces:
        xs = np.linspace(u, v, 201)
        t_ret = None
        for t in range(1, max_return + 1):
            y = _iterate(xs, c, t * step)[0]
            if y.min() <= -a + 1e-12 and y.max() >= a - 1e-12:
                t_ret = t
                break
        out.append({"interval": [float(u), float(v)], "return_time": t_ret})
    return out


def feigenbaum_induced(c: float | None = None, max_level: int = 8, root_tol: float = 1e-10,
                       accumulation_levels: int = 12) -> InducedMapReport:
    """Renormalisation intervals of x^2 + c up to ``max_level``.

    Level k uses the orientation-reversing fixed point p_k of f^(2^(k-1))
    nearest the critical point; I_k = [-|p_k|, |p_k|] and the first return
    to I_k takes 2^k steps.  Levels stop when that fixed point disappears or
    stops repelling, or when the parameter uncertainty moves p_k by more
    than ``root_tol``.
    """
    if max_level > 10:
        raise ValueError("max_level above 10 is below double precision")
    superstable = []
    if c is None:
        acc = accumulation_parameter(accumulation_levels)
        c, c_err, superstable = acc.c, acc.error, acc.superstable
    else:
        c_err = 4 * np.finfo(float).eps * abs(c)
    if not -2.0 < c < 0.25:
        raise ValueError("parameter outside the interval (-2, 1/4)")
    beta = (1.0 + math.sqrt(1.0 - 4.0 * c)) / 2.0
    levels = [{"k": 0, "p": beta, "interval": [-beta, beta], "period": 1, "residual": 0.0,
               "multiplier": 2 * beta, "ratio": None, "branches": [], "sensitivity": 0.0}]
    stop = "max level reached"
    for k in range(1, max_level + 1):
        half = abs(levels[-1]["p"])
        root, why = _reversing_fixed_point(c, 2 ** (k - 1), half)
        if root is None:
            stop = why
            break
        p, mult, dc = root
        sens = abs(dc / (mult - 1.0))       # |dp/dc|
        if sens * c_err > root_tol:
            stop = "parameter precision exhausted"
            break
        fp = _iterate(p, c, 2 ** k)[0]
        fm = _iterate(-p, c, 2 ** k)[0]
        residual = max(abs(fp - p), abs(fm - p))
        if residual > root_tol:
            stop = "boundary residual above tolerance"
            break
        levels.append({
            "k": k, "p": float(p), "interval": [-abs(p), abs(p)], "period": 2 ** k,
            "residual": float(residual), "multiplier": float(mult),
            "ratio": abs(p) / half, "sensitivity": float(sens),
            "branches": _branch_pieces(c, k, levels[-1]["p"], p),
        })
    ratios = [lv["ratio"] for lv in levels[1:]]
    rdiff = [abs(b - a) for a, b in zip(ratios, ratios[1:])]
    resc = []
    grid = np.linspace(-1.0, 1.0, 401)
    prev = None
    for lv in levels[1:]:
        p = lv["p"]
        cur = _iterate(p * grid, c, lv["period"])[0] / p
        if prev is not None:
            resc.append(float(np.max(np.abs(cur - prev))))
        prev = cur
    return InducedMapReport(c, c_err, levels, ratios, rdiff, _exp_rate(rdiff), resc,
                            _exp_rate(resc), stop, superstable)


# ------------------------------------------------------ Fibonacci model

DEFAULT_FIBONACCI_SPEC = {
    # outer atoms from the right end of the domain: length, drift, image
    "outer": [
        {"length": 0.25, "drift": -2, "image": [0.0, 0.75]},
        {"length": 0.25, "drift": -1, "image": [0.0, 1.0]},
    ],
    # geometric run toward 0 filling the rest: atom j has drift offset + slope*j
    "run": {"offset": 0, "slope": 1},
    "tolerance": 1e-9,
}


def fibonacci_model(scale: float = 0.5, branch_spec: dict | None = None) -> RandomWalk:
    """Illustrative Fibonacci-type walk (a model, not a renormalisation fixed point).

    The outermost atom cannot be followed by itself, as in the golden-mean
    shift; the remaining atoms map onto the whole interval.  The run toward
    0 has ratio ``scale`` and linearly growing drift.
    """
    if not 0.0 < scale < 1.0:
        raise ValueError("scale must lie in (0, 1)")
    spec = DEFAULT_FIBONACCI_SPEC if branch_spec is None else branch_spec
    try:
        outer = spec["outer"]
        run_cfg = spec.get("run", {"offset": 0, "slope": 1})
        tol = float(spec.get("tolerance", 1e-9))
        right = 1.0
        atoms, images, drifts = [], [], []
        for o in outer:
            lo = right - float(o["length"])
            atoms.append((lo, right))
            images.append(tuple(o.get("image", (0.0, 1.0))))
            drifts.append(int(o["drift"]))
            right = lo
        if right <= 0:
            raise PartitionError("outer atoms leave no room for the run")
        run = GeometricRun(0.0, scale, right * (1.0 - scale), 1)
        part = build_partition(atoms, [run], tol)
        images += [(0.0, 1.0)] * (part.n_atoms - len(atoms))
        q = make_map(part, images)
    except (KeyError, TypeError) as exc:
        raise PartitionError(f"inadmissible branch specification: {exc}") from None
    rule = (int(run_cfg.get("offset", 0)), int(run_cfg.get("slope", 1)))
    psi = DriftFunction.geometric_rule(q, drifts, [rule])
    walk = homogeneous_from_quotient(QuotientData(q, psi, scale), name="fibonacci-model")
    return walk


# -------------------------------------------------- wild attractor sign

@dataclass
class WildAttractorVerdict:
    verdict: str
    M: float
    error: float
    interval: tuple
    candidates: tuple = ()

    @property
    def withheld(self) -> bool:
        return self.verdict == "withheld"


SIGN_VERDICTS = {-1: "dimensionDeficit", 0: "nullFullDimension", 1: "positiveMeasureWildAttractor"}


def drift_verdict(M: float, error: float, zero_tol: float = 1e-9) -> WildAttractorVerdict:
    """Map a drift estimate with error bar to a verdict.

    |M| and the error both within ``zero_tol`` gives the null case; a sign
    verdict needs |M| above three error bars; anything else is withheld.
    """
    iv = (M - error, M + error)
    if abs(M) <= zero_tol and error <= zero_tol:
        return WildAttractorVerdict(SIGN_VERDICTS[0], M, error, iv)
    if abs(M) > 3.0 * error and abs(M) > zero_tol:
        return WildAttractorVerdict(SIGN_VERDICTS[1 if M > 0 else -1], M, error, iv)
    cands = tuple(SIGN_VERDICTS[s] for s in (-1, 0, 1)
                  if (s == 0 and iv[0] <= 0 <= iv[1]) or (s < 0 and iv[0] < 0) or (s > 0 and iv[1] > 0))
    return WildAttractorVerdict("withheld", M, error, iv, cands)


def wild_attractor_criterion(walk: RandomWalk, bins: int = 1024, zero_tol: float = 1e-9) -> WildAttractorVerdict:
    est = mean_drift(walk, bins)
    err = max(est.error, est.tail_mass)
    return drift_verdict(est.M, err, zero_tol)
