"""Transfer-operator discretisation and drift statistics.

The Ulam matrix of a map is computed from exact preimages of bin edges:
every branch is monotone with an explicit inverse, so the fraction of bin i
sent into bin k is an interval overlap.  Drift statistics of homogeneous
walks use exact cylinder sums.  For affine Markov maps the invariant density
is constant on atoms, so cylinder masses factor as a Markov chain on atoms
and the distribution of Birkhoff sums follows from a dynamic programme over
(current atom, running sum).  Other maps fall back to explicit cylinder
enumeration with masses from the Ulam distribution function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import optimize, sparse, special, stats

from .markov_core import MarkovMap, WalkError
from .walk import RandomWalk, enumerate_paths, pullback, simulate_ensemble, orbit_stream

__all__ = [
    "ConvergenceError", "DegenerateVariance", "UlamModel", "DriftEstimate",
    "SigmaResult", "CLTResult", "LDResult", "AzumaBound", "TransienceMargin",
    "ulam_matrix", "invariant_density", "atom_masses", "mean_drift",
    "birkhoff_distribution", "sigma_squared", "clt_check", "ld_rate",
    "azuma_bound", "strong_transience_margin", "sample_invariant",
]


class ConvergenceError(WalkError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateVariance(WalkError, ValueError):
    """Asymptotic variance vanishes (drift is a coboundary)."""


@dataclass
class UlamModel:
    bins: int
    matrix: sparse.csr_matrix
    density: np.ndarray | None = None
    residual: float | None = None
    iterations: int = 0
    converged: bool = False
    tail_mass: float = 0.0

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.bins + 1)

    def cdf(self, x):
        """Distribution function of the piecewise-constant density."""
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        p = self.density / self.bins
        cum = np.concatenate([[0.0], np.cumsum(p)])
        pos = x * self.bins
        k = np.minimum(pos.astype(np.int64), self.bins - 1)
        return cum[k] + p[k] * (pos - k)


def ulam_matrix(fmap: MarkovMap, bins: int) -> UlamModel:
    """Row-stochastic Ulam matrix with exact preimage overlaps.

    Mass of a bin lying in a truncated tail is spread uniformly over all
    bins; the total is reported as ``tail_mass``.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows, cols, vals = [], [], []
    for br in fmap.branches:
        d, im = br.domain, br.image
        i0 = max(int(math.floor(d.lo * bins)), 0)
        i1 = min(int(math.ceil(d.hi * bins)), bins)
        k0 = max(int(math.floor(im.lo * bins)), 0)
        k1 = min(int(math.ceil(im.hi * bins)), bins)
        src_lo = np.maximum(edges[i0:i1], d.lo)
        src_hi = np.minimum(edges[i0 + 1:i1 + 1], d.hi)
        y = np.clip(edges[k0:k1 + 1], im.lo, im.hi)
        pre = br.inverse(y)
        pre_lo = np.minimum(pre[:-1], pre[1:])
        pre_hi = np.maximum(pre[:-1], pre[1:])
        ov = (np.minimum(src_hi[:, None], pre_hi[None, :])
              - np.maximum(src_lo[:, None], pre_lo[None, :]))
        ii, kk = np.nonzero(ov > 0)
        rows.append(ii + i0)
        cols.append(kk + k0)
        vals.append(ov[ii, kk] * bins)
    tail_mass = 0.0
    for t in fmap.partition.tails:
        i0 = int(math.floor(t.lo * bins))
        i1 = min(int(math.ceil(t.hi * bins)), bins)
        part = np.minimum(edges[i0 + 1:i1 + 1], t.hi) - np.maximum(edges[i0:i1], t.lo)
        tail_mass += float(part.sum())
        ii = np.repeat(np.arange(i0, i1), bins)
        kk = np.tile(np.arange(bins), i1 - i0)
        rows.append(ii)
        cols.append(kk)
        vals.append(np.repeat(part, bins))  # fraction part*bins spread over bins
    P = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(bins, bins))
    P.sum_duplicates()
    return UlamModel(bins, P, tail_mass=tail_mass)


def invariant_density(model: UlamModel, tol: float = 1e-12, max_iter: int = 100_000) -> UlamModel:
    """Fixed probability vector by power iteration from the uniform vector.

    Switches to the lazy chain (I + P)/2 if the plain iteration stalls, which
    removes periodic oscillation without changing the fixed vector.
    """
    PT = model.matrix.T.tocsr()
    p = np.full(model.bins, 1.0 / model.bins)
    residual = math.inf
    lazy = False
    best = math.inf
    stall = 0
    it = 0
    for it in range(1, max_iter + 1):
        q = PT @ p
        if lazy:
            q = 0.5 * (q + p)
        q /= q.sum()
        residual = float(np.abs(q - p).sum())
        p = q
        if residual <= tol:
            break
        if residual < 0.5 * best:
            best, stall = residual, 0
        else:
            stall += 1
            if stall > 200 and not lazy:
                lazy, stall, best = True, 0, math.inf
    model.density = p * model.bins
    model.residual = residual
    model.iterations = it
    model.converged = residual <= tol
    return model


@lru_cache(maxsize=64)
def _density_model(fmap: MarkovMap, bins: int) -> UlamModel:
    return invariant_density(ulam_matrix(fmap, bins))


def atom_masses(fmap: MarkovMap, bins: int = 1024) -> np.ndarray:
    """Invariant mass of each atom, integrated from the Ulam density."""
    model = _density_model(fmap, bins)
    if not model.converged:
        raise ConvergenceError("invariant density did not converge", model.residual)
    part = fmap.partition
    return model.cdf(part.highs) - model.cdf(part.lows)


def _tail_drift_mass(walk: RandomWalk, model: UlamModel) -> tuple:
    """(mass, drift-weighted mass) of truncated tails under the Ulam density."""
    part = walk.base.partition
    mass = drift = 0.0
    for (run, _, count), tail, rule in zip(part.runs, part.tails, walk.drift.tail_rule or
                                           [(0, 0)] * len(part.runs)):
        m = float(model.cdf(tail.hi) - model.cdf(tail.lo))
        off, slope = rule
        r = run.ratio
        # mean index of an omitted atom weighted by length: count + r/(1-r)
        mean_psi = off + slope * (count + r / (1.0 - r))
        mass += m
        drift += m * mean_psi
    return mass, drift


@dataclass
class DriftEstimate:
    M: float
    error: float
    bins: int
    tail_mass: float = 0.0
    residual: float = 0.0

    def __float__(self):
        return self.M


def _require_homogeneous(walk: RandomWalk):
    if not walk.homogeneous:
        raise ValueError("operation needs a homogeneous walk")


def _mean_drift_at(walk: RandomWalk, bins: int):
    model = _density_model(walk.base, bins)
    if not model.converged:
        raise ConvergenceError("invariant density did not converge", model.residual)
    mu = atom_masses(walk.base, bins)
    psi = np.array(walk.drift.values, dtype=float)
    tmass, tdrift = _tail_drift_mass(walk, model)
    return float(np.dot(psi, mu) + tdrift), tmass, model.residual


def mean_drift(walk: RandomWalk, bins: int = 1024) -> DriftEstimate:
    """M = sum of psi(J) mu(J); error bar from doubling the bin count."""
    _require_homogeneous(walk)
    if walk.drift.is_constant:
        return DriftEstimate(float(walk.drift.values[0]), 0.0, bins)
    m1, tmass, res = _mean_drift_at(walk, bins)
    m2, _, _ = _mean_drift_at(walk, 2 * bins)
    return DriftEstimate(m1, abs(m1 - m2), bins, tmass, res)


# ---------------------------------------------------- Birkhoff sum tables

@dataclass
class SumDistribution:
    """Invariant mass of depth-n cylinders grouped by Birkhoff sum."""
    n: int
    sums: np.ndarray
    mass: np.ndarray
    partial: bool = False
    method: str = "markov"

    @property
    def captured(self) -> float:
        return float(self.mass.sum())

    def log_mgf(self, t: float) -> float:
        ok = self.mass > 0
        return float(special.logsumexp(t * self.sums[ok], b=self.mass[ok]))


def _markov_chain(walk: RandomWalk, bins: int):
    fmap = walk.base
    mu = atom_masses(fmap, bins)
    A = fmap.partition.n_atoms
    lengths = np.array([a.length for a in fmap.partition.atoms])
    T = np.zeros((A, A))
    for a, br in enumerate(fmap.branches):
        f, l = br.targets
        T[a, f:l + 1] = lengths[f:l + 1] / br.image.length
    return mu, T


def birkhoff_distribution(walk: RandomWalk, n_max: int, bins: int = 1024,
                          cap: int = 2 ** 20) -> list:
    """Distributions of S_n for n = 1..n_max under the invariant measure."""
    _require_homogeneous(walk)
    psi = np.array(walk.drift.values, dtype=np.int64)
    if walk.base.is_affine:
        mu, T = _markov_chain(walk, bins)
        lo, hi = int(psi.min()), int(psi.max())
        width = n_max * (hi - lo) + 1
        D = np.zeros((len(psi), width))
        D[np.arange(len(psi)), psi - lo] = mu
        out = []
        for n in range(1, n_max + 1):
            if n > 1:
                E = T.T @ D
                D = np.zeros_like(E)
                for b, v in enumerate(psi):
                    sh = v - lo
                    if sh:
                        D[b, sh:] = E[b, :-sh]
                    else:
                        D[b] = E[b]
            tot = D.sum(axis=0)
            sums = np.arange(width) + n * lo
            keep = tot > 0
            out.append(SumDistribution(n, sums[keep], tot[keep]))
        return out
    model = _density_model(walk.base, bins)
    levels = enumerate_paths(walk, 0, n_max, cap=cap, keep_levels=True)
    out = []
    for n, (paths, states, partial) in enumerate(levels, start=1):
        lo_, hi_ = pullback(walk, paths, states)
        mass = model.cdf(hi_) - model.cdf(lo_)
        s = states[:, -1] - states[:, 0]
        u, inv = np.unique(s, return_inverse=True)
        out.append(SumDistribution(n, u, np.bincount(inv, weights=mass), partial, "enumeration"))
    return out


@dataclass
class SigmaResult:
    sigma2: float
    table: list
    differences: list
    partial: bool = False
    method: str = "markov"
    captured_mass: float = 1.0


def sigma_squared(walk: RandomWalk, depth_max: int = 16, bins: int = 1024,
                  cap: int = 2 ** 20) -> SigmaResult:
    """sigma_n^2 = E[(S_n - n M)^2] / n from exact cylinder sums."""
    _require_homogeneous(walk)
    if walk.drift.is_constant:
        table = [(n, 0.0) for n in range(1, depth_max + 1)]
        return SigmaResult(0.0, table, [0.0] * (depth_max - 1), False, "constant")
    M = mean_drift(walk, bins).M
    dists = birkhoff_distribution(walk, depth_max, bins, cap)
    table = []
    for d in dists:
        z = d.captured
        var = float(np.dot(d.mass, (d.sums - d.n * M) ** 2) / z) / d.n
        table.append((d.n, var))
    diffs = [b[1] - a[1] for a, b in zip(table, table[1:])]
    return SigmaResult(table[-1][1], table, diffs, any(d.partial for d in dists),
                       dists[-1].method, dists[-1].captured)


def sample_invariant(walk: RandomWalk, size: int, seed: int, bins: int = 1024) -> np.ndarray:
    """Points drawn from the Ulam density by inverse transform."""
    model = _density_model(walk.base, bins)
    u = orbit_stream(seed, 2 ** 40).random(size)
    p = model.density / model.density.sum()
    cum = np.concatenate([[0.0], np.cumsum(p)])
    k = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, bins - 1)
    frac = (u - cum[k]) / np.where(p[k] > 0, p[k], 1.0)
    return (k + np.clip(frac, 0.0, 1.0)) / bins


@dataclass
class CLTResult:
    ks: float
    n: int
    samples: int
    sigma2: float
    M: float


def clt_check(walk: RandomWalk, n: int, samples: int, seed: int, bins: int = 1024,
              sigma_depth: int = 16) -> CLTResult:
    """KS distance between (S_n - nM)/(sigma sqrt n) and N(0, 1)."""
    _require_homogeneous(walk)
    sig = sigma_squared(walk, sigma_depth, bins)
    if sig.sigma2 <= 1e-9:
        raise DegenerateVariance("sigma^2 vanishes: the drift is cohomologous to a constant")
    M = mean_drift(walk, bins).M
    x0 = sample_invariant(walk, samples, seed, bins)
    ens = simulate_ensemble(walk, samples, n, seed, start_state=0, record_times=(n,), x0=x0)
    z = (ens.recorded[:, 0] - n * M) / math.sqrt(sig.sigma2 * n)
    return CLTResult(float(stats.kstest(z, "norm").statistic), n, samples, sig.sigma2, M)


@dataclass
class LDResult:
    rate: float
    gamma: float
    tails: dict
    tail_fit_rate: float | None
    method: str
    approximate: bool = False
    lambda_fit: dict = field(default_factory=dict)


def _legendre(lam, target: float, sign: int, t_max: float = 60.0) -> float:
    res = optimize.minimize_scalar(lambda t: -(sign * t * target - lam(sign * t)),
                                   bounds=(0.0, t_max), method="bounded",
                                   options={"xatol": 1e-12})
    return max(0.0, float(-res.fun))


def ld_rate(walk: RandomWalk, eps: float, n_schedule: Sequence[int] = tuple(range(2, 25, 2)),
            bins: int = 1024, cap: int = 2 ** 20, mc_samples: int = 100_000,
            seed: int = 0) -> LDResult:
    """Large-deviation rate for |S_n/n - M| >= eps.

    Tails are exact invariant masses of the deviating cylinders.  The rate is
    the Legendre transform of the scaled cumulant generating function, whose
    slope in n is fitted from the exact sums over the upper half of the
    schedule; the log-linear fit of the raw tails is reported alongside.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _require_homogeneous(walk)
    M = mean_drift(walk, bins).M
    ns = sorted(int(n) for n in n_schedule)
    try:
        dists = birkhoff_distribution(walk, ns[-1], bins, cap)
        if any(d.partial for d in dists):
            raise OverflowError
    except OverflowError:
        return _ld_monte_carlo(walk, eps, ns, M, mc_samples, seed)
    tails = {}
    for n in ns:
        d = dists[n - 1]
        dev = np.abs(d.sums / n - M) >= eps - 1e-12
        tails[n] = float(d.mass[dev].sum())
    tail_fit = _tail_fit(tails)
    psi = np.array(walk.drift.values)
    upper = walk.drift.upper_bound
    if all(v == 0.0 for v in tails.values()) and (M + eps > upper and M - eps < psi.min()):
        return LDResult(math.inf, 0.0, tails, tail_fit, "exact")
    use = [n for n in ns if n >= ns[-1] / 2] or ns
    logz = {n: dists[n - 1] for n in use}

    def lam(t: float) -> float:
        y = np.array([logz[n].log_mgf(t) for n in use])
        if len(use) == 1:
            return y[0] / use[0]
        return float(np.polyfit(use, y, 1)[0])

    plus = math.inf if M + eps > upper else _legendre(lam, M + eps, 1)
    minus = math.inf if M - eps < psi.min() else _legendre(lam, M - eps, -1)
    rate = min(plus, minus)
    gamma = 0.0 if math.isinf(rate) else math.exp(-rate)
    return LDResult(rate, gamma, tails, tail_fit, "exact",
                    lambda_fit={"plus": plus, "minus": minus})


def _tail_fit(tails: dict):
    pts = [(n, v) for n, v in tails.items() if v > 0]
    if len(pts) < 2:
        return None
    n, v = np.array(pts).T
    return float(-np.polyfit(n, np.log(v), 1)[0])


def _ld_monte_carlo(walk, eps, ns, M, samples, seed) -> LDResult:
    x0 = sample_invariant(walk, samples, seed)
    ens = simulate_ensemble(walk, samples, ns[-1], seed, record_times=ns, x0=x0)
    tails = {n: float(np.mean(np.abs(ens.recorded[:, k] / n - M) >= eps - 1e-12))
             for k, n in enumerate(ns)}
    fit = _tail_fit(tails)
    rate = math.inf if fit is None else fit
    gamma = 0.0 if fit is None else math.exp(-fit)
    return LDResult(rate, gamma, tails, fit, "monte-carlo", approximate=True)


@dataclass
class AzumaBound:
    bound: float
    raw: float


def azuma_bound(c: Sequence[float], t: float) -> AzumaBound:
    """2 exp(-t^2 / (2 sum c_i^2)) clamped to [0, 1]."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0) or t <= 0:
        raise ValueError("need c_i >= 0 and t > 0")
    s = float(np.dot(c, c))
    if s == 0.0:
        return AzumaBound(0.0, 0.0)
    raw = 2.0 * math.exp(-t * t / (2.0 * s))
    return AzumaBound(min(1.0, raw), raw)


MARGIN_ROUNDING = 1e-12


@dataclass
class TransienceMargin:
    K: float
    per_depth: list
    partial: bool = False
    cylinders: int = 0

    @property
    def certified(self) -> bool:
        return self.K > 0


def strong_transience_margin(walk: RandomWalk, depth_max: int = 8, cap: int = 2 ** 18,
                             start_states: Sequence[int] | None = None) -> TransienceMargin:
    """Minimum Lebesgue-conditional expectation of the next drift value.

    Conditioning is on the cylinder of the first n symbols, n = 0..depth_max,
    which is at least as fine as the definition requires, so a positive
    minimum is a valid certificate.  Mass of children lost in truncated tails
    is counted at the minimum drift, keeping the bound conservative.
    """
    tab = walk.table
    if start_states is None:
        if walk.window is None:
            start_states = (0,)
        else:
            lo, hi = walk.window
            start_states = range(lo - 2, hi + 3)
    lb = walk.drift.lower_bound
    affine = walk.is_affine
    zero = np.zeros((tab.dlen.shape[0], 1))
    cw = np.hstack([zero, np.cumsum(tab.dlen * tab.psi, axis=1)])
    cl = np.hstack([zero, np.cumsum(tab.dlen, axis=1)])
    per_depth = []
    partial = False
    total = 0
    for s0 in start_states:
        levels = enumerate_paths(walk, s0, depth_max + 1, cap=cap, keep_levels=True)
        r0 = tab.rows(np.array([s0]))[0]
        lengths = tab.dlen[r0]
        e0 = float(np.dot(tab.psi[r0], lengths) + lb * (1.0 - lengths.sum()))
        mins = [e0]
        for n in range(1, depth_max + 1):
            ppaths, pstates, p1 = levels[n - 1]
            cpaths, cstates, p2 = levels[n]
            partial |= p1 or p2
            total += len(cpaths)
            if affine and ppaths.shape[1] >= 1:
                # affine branches: the conditional law depends only on the last symbol
                r1 = tab.rows(pstates[:, -2])
                r2 = tab.rows(pstates[:, -1])
                a = ppaths[:, -1]
                f, l = tab.tfirst[r1, a], tab.tlast[r1, a]
                num = cw[r2, l + 1] - cw[r2, f]
                got = cl[r2, l + 1] - cl[r2, f]
                plen = tab.ilen[r1, a]
                e = (num + lb * np.maximum(plen - got, 0.0)) / plen
                mins.append(float(e.min()))
                continue
            plo, phi = pullback(walk, ppaths, pstates)
            clo, chi = pullback(walk, cpaths, cstates)
            # children of a parent are contiguous; match by prefix
            key_p = _row_keys(ppaths)
            key_c = _row_keys(cpaths[:, :-1])
            idx = np.searchsorted(key_p, key_c)
            rows = tab.rows(cstates[:, -2])
            psi_c = tab.psi[rows, cpaths[:, -1]]
            num = np.bincount(idx, weights=psi_c * (chi - clo), minlength=len(ppaths))
            got = np.bincount(idx, weights=chi - clo, minlength=len(ppaths))
            plen = phi - plo
            ok = plen > 0          # cylinders below double resolution carry no mass
            e = (num[ok] + lb * np.maximum(plen[ok] - got[ok], 0.0)) / plen[ok]
            mins.append(float(e.min()))
        per_depth.append(mins)
    table = np.min(np.array(per_depth), axis=0)
    table = np.where(np.abs(table) < MARGIN_ROUNDING, 0.0, table).tolist()   # rounding noise is not a margin
    return TransienceMargin(float(min(table)), table, partial, total)


def _row_keys(paths: np.ndarray) -> np.ndarray:
    """Order-preserving scalar key per path row (lexicographic)."""
    if paths.shape[1] == 0:
        return np.zeros(len(paths))
    base = int(paths.max()) + 1 if paths.size else 1
    key = np.zeros(len(paths), dtype=object) if base ** paths.shape[1] > 2 ** 62 else np.zeros(len(paths), dtype=np.int64)
    for col in range(paths.shape[1]):
        key = key * base + paths[:, col]
    return key
