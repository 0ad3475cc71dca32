"""Perturbations, conjugacies and recurrence/transience experiments.

``perturb`` edits a homogeneous walk inside a finite window of states by
amounts decaying geometrically in |state|.  The edits move interior atom
boundaries and add a bump to branches, never changing the symbolic
structure, so the two walks are conjugate by the map that matches
cylinders with equal itineraries.  ``conjugacy_eval_many`` evaluates that map
by following the itinerary until the matched target cylinder is short.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .markov_core import (BUMP_C2_NORM, Branch, Interval, MarkovMap, MarkovPartition,
                          PartitionError, TailError, WalkError, check_properties)
from .spectral import mean_drift, strong_transience_margin
from .walk import (Cylinder, RandomWalk, WalkPoint, enumerate_paths, pullback,
                   simulate_ensemble)

__all__ = [
    "SymbolicMismatch", "PerturbationSchedule", "perturb", "ConjugacyHandle",
    "conjugacy", "conjugacy_eval", "conjugacy_eval_many", "Thresholds",
    "ClassificationResult", "classify", "AsympFit", "asymp_verify",
    "MsqsResult", "msqs_test", "KAPPA",
]

# Boundary shifts move a boundary by at most KAPPA * magnitude * (shorter
# neighbouring atom); bump edits change the normalised branch by at most
# the magnitude in C2.  Both keep every edit below the schedule bound.
KAPPA = 0.25
H_SAFETY = 0.25


class SymbolicMismatch(WalkError, ValueError):
    """Two walks do not share a transition structure."""


@dataclass(frozen=True)
class PerturbationSchedule:
    C: float
    lam: float
    window: tuple = (-8, 8)
    endpoint_shifts: bool = True
    branch_edits: bool = False
    ratio_edits: bool = False
    negative_states_frozen: bool = False

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("C must be >= 0")
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if self.window[0] > self.window[1]:
            raise ValueError("empty window")

    def magnitude(self, state: int) -> float:
        return self.C * self.lam ** abs(state)

    @property
    def states(self) -> range:
        lo, hi = self.window
        if self.negative_states_frozen:
            lo = max(lo, 0)
        return range(lo, hi + 1)


def _interior_boundaries(part: MarkovPartition):
    """(position, left atom, right atom) for boundaries free to move."""
    fixed = set(part.accumulation_points) | set(part.separators) | {0.0, 1.0}
    for t in part.tails:
        fixed.update((t.lo, t.hi))
    order = part.order
    out = []
    for a, b in zip(order[:-1], order[1:]):
        x = part.atoms[a].hi
        if x != part.atoms[b].lo or x in fixed:
            continue
        out.append((x, int(a), int(b)))
    return out


def _shift_partition(part: MarkovPartition, m: float, rng, ratio_edits: bool, lam: float):
    """New partition and the boundary map old -> new (as a dict)."""
    moves = {}
    for x, a, b in _interior_boundaries(part):
        la, lb = part.atoms[a].length, part.atoms[b].length
        decay = 1.0
        if ratio_edits:
            info = part.run_of(b) or part.run_of(a)
            if info is not None:
                decay = lam ** info[1]
        sign = 1.0 if rng.random() < 0.5 else -1.0
        moves[x] = x + sign * KAPPA * m * decay * min(la, lb)
    atoms = tuple(Interval(moves.get(a.lo, a.lo), moves.get(a.hi, a.hi)) for a in part.atoms)
    newp = MarkovPartition(atoms, part.accumulation_points, part.separators, part.runs,
                           part.tails, part.tolerance, part.half_open)
    return newp, moves


def perturb(base: RandomWalk, schedule: PerturbationSchedule, seed: int) -> RandomWalk:
    """Asymptotically small perturbation of a homogeneous walk.

    Inside the window each state n gets its own partition, with interior
    boundaries moved by at most KAPPA * C lam^|n| times the shorter adjacent
    atom, and (optionally) bump amplitudes changed by at most
    C lam^|n| / BUMP_C2_NORM.  Signs are drawn from ``seed``.
    """
    if not base.homogeneous:
        raise ValueError("base walk must be homogeneous")
    rep = check_properties(base.base)
    missing = [p for p in ("LI", "Ex", "sBD", "Ra", "Rb") if not rep[p]]
    if missing:
        raise PartitionError(f"base map fails {', '.join(missing)}")
    if base.drift.unbounded_above and not schedule.negative_states_frozen:
        raise PartitionError("drift is unbounded above: negative states must stay frozen")
    if KAPPA * schedule.C >= 0.5:
        raise PartitionError("schedule magnitude breaks monotonicity at state 0")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    fmap = base.base
    psi = base.drift.values
    parts, moves, eps = {}, {}, {}
    for s in schedule.states:
        m = schedule.magnitude(s)
        if m == 0.0:
            continue
        if schedule.endpoint_shifts:
            parts[s], moves[s] = _shift_partition(fmap.partition, m, rng, schedule.ratio_edits, schedule.lam)
        if schedule.branch_edits:
            e = []
            for j, br in enumerate(fmap.branches):
                sign = 1.0 if rng.random() < 0.5 else -1.0
                new = br.eps + sign * m / BUMP_C2_NORM
                e.append(new)
            eps[s] = e
    if not parts and not eps:
        return base

    def part_at(s):
        return parts.get(s, fmap.partition)

    lb = base.drift.lower_bound
    ub = int(max(psi))
    candidates = set(parts) | set(eps)
    if not fmap.is_onto and parts:
        lo, hi = min(parts), max(parts)
        candidates |= set(range(lo - ub, hi - lb + 1))
    overrides = []
    for s in sorted(candidates):
        p = part_at(s)
        branches = []
        changed = s in parts or s in eps
        for j, br in enumerate(fmap.branches):
            dest = s + psi[j]
            mv = moves.get(dest, {})
            img = Interval(mv.get(br.image.lo, br.image.lo), mv.get(br.image.hi, br.image.hi))
            changed |= img != br.image
            e = eps[s][j] if s in eps else br.eps
            try:
                nb = Branch(p.atoms[j], img, br.orientation, e, br.targets)
            except PartitionError as exc:
                raise PartitionError(f"edit breaks monotonicity at state {s}: {exc}") from None
            if nb.min_derivative <= 1.0:
                raise PartitionError(f"edit breaks expansion at state {s}")
            branches.append(nb)
        if changed:
            if schedule.negative_states_frozen and s < 0:
                raise PartitionError(f"state {s} would change although negative states are frozen")
            overrides.append((s, MarkovMap(p, tuple(branches))))
    note = json.dumps({"schedule": asdict(schedule), "seed": int(seed), "kappa": KAPPA}, sort_keys=True)
    return RandomWalk(fmap, base.drift, tuple(overrides), (base.name or "walk") + "-perturbed", note)


# ------------------------------------------------------------ conjugacy

@dataclass(frozen=True, eq=False)
class ConjugacyHandle:
    source: RandomWalk
    target: RandomWalk
    tol: float = 1e-10
    checked_states: tuple = ()

    def check_path(self, cyl: Cylinder):
        tf, tg = self.source.table, self.target.table
        for a, s in zip(cyl.path, cyl.states[:-1]):
            rf, rg = tf.rows(np.array([s]))[0], tg.rows(np.array([s]))[0]
            if tf.psi[rf, a] != tg.psi[rg, a]:
                raise SymbolicMismatch(f"drift differs at state {s} atom {a}")


def _symbolic_row(walk: RandomWalk, s: int):
    m = walk.map_at(s)
    return (tuple(walk.psi_at(s)), tuple(tuple(b.targets) for b in m.branches),
            tuple(b.orientation for b in m.branches), m.partition.n_atoms)


def conjugacy(source: RandomWalk, target: RandomWalk, tol: float = 1e-10) -> ConjugacyHandle:
    """Check that two walks share their symbolic structure."""
    wins = [w.window for w in (source, target) if w.window is not None]
    if wins:
        lo = min(w[0] for w in wins) - 2
        hi = max(w[1] for w in wins) + 2
    else:
        lo = hi = 0
    states = tuple(range(lo, hi + 1))
    for s in states:
        if _symbolic_row(source, s) != _symbolic_row(target, s):
            raise SymbolicMismatch(f"transition structure differs at state {s}")
    if _symbolic_row(source, 10 ** 9) != _symbolic_row(target, 10 ** 9):
        raise SymbolicMismatch("base transition structures differ")
    return ConjugacyHandle(source, target, tol, states)


def conjugacy_eval_many(h: ConjugacyHandle, xs, state: int, tol: float | None = None) -> np.ndarray:
    """Image of points of one state under the cylinder-matching conjugacy."""
    tol = h.tol if tol is None else tol
    F, G = h.source, h.target
    tf = F.table
    x = np.asarray(xs, dtype=float).ravel()
    N = x.size
    theta = max(G.expansion_bound, 0.5)
    dmax = min(int(math.ceil(math.log(tol * H_SAFETY) / math.log(theta))) + 2, 400)
    paths = np.zeros((N, dmax), dtype=np.int64)
    sts = np.zeros((N, dmax + 1), dtype=np.int64)
    sts[:, 0] = state
    bnd = np.full(N, dmax + 1)          # depth at which an exact boundary is met
    tail_at = np.full(N, dmax + 1)      # depth at which the orbit enters a tail
    cur = x.copy()
    for d in range(dmax):
        rows = tf.rows(sts[:, d])
        a = tf.locate(rows, cur)
        lost = (a < 0) & (tail_at > dmax)
        tail_at[lost] = d
        a = np.where(a < 0, 0, a)
        at_lo = (cur == tf.lo[rows, a]) & (bnd > dmax)
        bnd[at_lo] = d
        paths[:, d] = a
        sts[:, d + 1] = sts[:, d] + tf.psi[rows, a]
        y, _ = tf.forward(rows, a, cur)
        cur = np.clip(y, 0.0, 1.0)
    out = np.full(N, np.nan)
    todo = np.ones(N, dtype=bool)
    for d in range(1, dmax + 1):
        idx = np.nonzero(todo)[0]
        if idx.size == 0:
            break
        P, S = paths[idx, :d], sts[idx, :d + 1]
        glo, ghi = pullback(G, P, S)
        stop = (ghi - glo <= tol * H_SAFETY) | (bnd[idx] == d - 1) | (d == dmax)
        if np.any(~stop & (tail_at[idx] <= d)):
            raise TailError("orbit enters a truncated tail before the tolerance is reached")
        if not np.any(stop):
            continue
        k = idx[stop]
        flo, fhi = pullback(F, P[stop], S[stop])
        glo, ghi = glo[stop], ghi[stop]
        xb = x[k]
        on_b = bnd[k] == d - 1
        frac = np.where(fhi > flo, (xb - flo) / np.where(fhi > flo, fhi - flo, 1.0), 0.0)
        val = glo + frac * (ghi - glo)
        snap = np.where(np.abs(xb - flo) <= np.abs(xb - fhi), glo, ghi)
        out[k] = np.where(on_b, snap, val)
        todo[k] = False
    return out


def conjugacy_eval(h: ConjugacyHandle, p: WalkPoint, tol: float | None = None) -> WalkPoint:
    if tol is not None and tol <= 0:
        raise ValueError("tol must be positive")
    y = conjugacy_eval_many(h, [p.x], p.n, tol)[0]
    return WalkPoint(float(y), int(p.n))


# ------------------------------------------------------- classification

@dataclass(frozen=True)
class Thresholds:
    drift_fraction: float = 0.1      # T = drift_fraction * horizon
    burn_fraction: float = 0.1
    returns: int = 10
    supermajority: float = 0.9


LABELS = ("transientPlus", "transientMinus", "recurrent", "undetermined")


@dataclass
class ClassificationResult:
    verdict: str
    fractions: dict
    ensemble: int
    horizon: int
    seed: int
    strong_transience_margin: float | None = None
    nudges: int = 0
    escaped: int = 0


def classify(walk: RandomWalk, ensemble: int, horizon: int, seed: int,
             thresholds: Thresholds = Thresholds(), start_state: int = 0,
             threads: int = 1, margin_depth: int = 8) -> ClassificationResult:
    """Label orbits by their state behaviour and take a supermajority verdict."""
    if ensemble < 1 or horizon < 1:
        raise ValueError("ensemble and horizon must be >= 1")
    burn = int(thresholds.burn_fraction * horizon)
    T = thresholds.drift_fraction * horizon
    ens = simulate_ensemble(walk, ensemble, horizon, seed, start_state, burn_in=burn, threads=threads)
    s0 = start_state
    plus = (ens.final - s0 >= T) & (ens.min_after_burn >= s0)
    minus = ~plus & (ens.final - s0 <= -T) & (ens.max_after_burn <= s0)
    rec = ~plus & ~minus & (ens.returns >= thresholds.returns)
    und = ~(plus | minus | rec)
    counts = [int(plus.sum()), int(minus.sum()), int(rec.sum()), int(und.sum())]
    fr = {lab: c / ensemble for lab, c in zip(LABELS, counts)}
    verdict = "inconclusive"
    for lab in LABELS[:3]:
        if fr[lab] >= thresholds.supermajority:
            verdict = lab
    margin = None
    try:
        K = strong_transience_margin(walk, margin_depth, cap=2 ** 16).K
        margin = K if K > 0 else None
    except (WalkError, MemoryError):
        margin = None
    return ClassificationResult(verdict, fr, ensemble, horizon, int(seed), margin,
                                ens.nudges, int((ens.escaped >= 0).sum()))


# ------------------------------------------------------ asymptotic check

@dataclass
class AsympFit:
    C: float
    lam: float
    residual: float
    per_state: dict
    passed: bool
    envelope_C: float = 0.0

    @property
    def asymptotically_small(self) -> bool:
        return self.passed


def _log_derivative(walk: RandomWalk, state: int, x: np.ndarray) -> np.ndarray:
    tab = walk.table
    rows = tab.rows(np.full(x.shape, state))
    a = tab.locate(rows, x)
    ok = a >= 0
    out = np.full(x.shape, np.nan)
    _, dy = tab.forward(rows[ok], a[ok], x[ok])
    out[ok] = np.log(np.abs(dy))
    return out


def asymp_verify(F: RandomWalk, G: RandomWalk, samples: int = 200, seed: int = 0,
                 states: Sequence[int] | None = None, tol: float = 1e-9,
                 residual_tol: float = 0.5) -> AsympFit:
    """Fit max |log DG(H p) / DF(p)| <= C lam^|n| over sampled p per state n."""
    h = conjugacy(F, G, tol)
    if states is None:
        wins = [w.window for w in (F, G) if w.window is not None]
        span = max([abs(v) for w in wins for v in w] + [0]) + 4
        states = range(-span, span + 1)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    per_state = {}
    for n in states:
        p = rng.random(samples)
        keep = F.table.locate(F.table.rows(np.full(p.shape, n)), p) >= 0
        p = p[keep]
        hp = conjugacy_eval_many(h, p, n, tol)
        r = np.abs(_log_derivative(G, n, hp) - _log_derivative(F, n, p))
        per_state[int(n)] = float(np.nanmax(r)) if r.size else 0.0
    nz = [(abs(n), v) for n, v in per_state.items() if v > 1e-12]
    if not nz:
        return AsympFit(0.0, 0.0, 0.0, per_state, True)
    if len({a for a, _ in nz}) < 2:
        a, v = max(nz, key=lambda t: t[1])
        return AsympFit(v, 0.0, 0.0, per_state, True, v)
    xs, ys = np.array(nz).T
    b, a = np.polyfit(xs, np.log(ys), 1)
    resid = float(np.max(np.abs(np.log(ys) - (a + b * xs))))
    lam = float(math.exp(b))
    env = float(np.max(ys / lam ** xs))
    return AsympFit(float(math.exp(a)), lam, resid, per_state,
                    bool(lam < 1.0 and resid <= residual_tol), env)


# ----------------------------------------------------------------- mSQS

@dataclass
class MsqsResult:
    alpha: float
    C: float
    basis_depth: int
    forward: np.ndarray
    backward: np.ndarray
    residual: float
    exploratory: bool
    label: str


def _children_blocks(parent_paths: np.ndarray, child_paths: np.ndarray, k: int):
    """For each parent, the [start, stop) block of its depth+k descendants."""
    d = parent_paths.shape[1]
    pref = child_paths[:, :d]
    # lexicographic order means descendants are contiguous
    change = np.any(pref[1:] != pref[:-1], axis=1)
    starts = np.concatenate([[0], np.nonzero(change)[0] + 1])
    stops = np.concatenate([starts[1:], [len(child_paths)]])
    keys = {tuple(pref[s]): (s, e) for s, e in zip(starts, stops)}
    return [keys.get(tuple(p)) for p in parent_paths]


def msqs_test(F: RandomWalk, G: RandomWalk, basis_depth: int = 10,
              subset_grid: Sequence[int] = (1, 2), seed: int = 0,
              start_state: int = 0, n_random: int = 4, cap: int = 2 ** 18) -> MsqsResult:
    """Empirical modulus m(hB)/|hJ| <= C (m(B)/|J|)^alpha on the cylinder basis.

    J runs over cylinders of depth 1..basis_depth; B over dyadic blocks and
    random unions of J's descendants k levels down, k in ``subset_grid``.
    Both directions (h and its inverse) are fitted; alpha is the smaller
    slope, capped at 1.
    """
    conjugacy(F, G)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    kmax = max(subset_grid)
    levels = enumerate_paths(F, start_state, basis_depth + kmax, cap=cap, keep_levels=True)
    lens = []
    for paths, states, _ in levels:
        flo, fhi = pullback(F, paths, states)
        glo, ghi = pullback(G, paths, states)
        lens.append((fhi - flo, ghi - glo))
    xs, ys = [], []
    for d in range(1, basis_depth + 1):
        ppaths = levels[d - 1][0]
        jf, jg = lens[d - 1]
        for k in subset_grid:
            cpaths = levels[d - 1 + k][0]
            cf, cg = lens[d - 1 + k]
            blocks = _children_blocks(ppaths, cpaths, k)
            for i, blk in enumerate(blocks):
                if blk is None:
                    continue
                s, e = blk
                bf, bg = cf[s:e], cg[s:e]
                m = e - s
                subsets = []
                parts = 2
                while parts <= m:
                    edges = np.linspace(0, m, parts + 1).astype(int)
                    subsets.extend((a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a)
                    parts *= 2
                for a, b in subsets:
                    xs.append(bf[a:b].sum() / jf[i])
                    ys.append(bg[a:b].sum() / jg[i])
                for _ in range(n_random):
                    mask = rng.random(m) < 0.5
                    if not mask.any():
                        mask[rng.integers(m)] = True
                    xs.append(bf[mask].sum() / jf[i])
                    ys.append(bg[mask].sum() / jg[i])
    x = np.array(xs)
    y = np.array(ys)
    ok = (x > 0) & (y > 0)
    lx, ly = np.log(x[ok]), np.log(y[ok])
    fits = []
    for u, v in ((lx, ly), (ly, lx)):
        slope, icpt = np.polyfit(u, v, 1)
        fits.append((slope, float(np.max(np.abs(v - (icpt + slope * u))))))
    alpha = float(min(1.0, min(f[0] for f in fits)))
    C = float(max(np.max(np.exp(ly - alpha * lx)), np.max(np.exp(lx - alpha * ly))))
    residual = float(max(f[1] for f in fits))
    try:
        strong = strong_transience_margin(F, 8, cap=2 ** 16).K > 0
    except WalkError:
        strong = False
    positive = False
    if F.homogeneous and F.drift.lower_bound >= 0:
        positive = mean_drift(F).M > 0
    exploratory = not (strong or positive)
    label = "exploratory" if exploratory else "hypotheses-met"
    return MsqsResult(alpha, C, basis_depth, np.column_stack([x, y]), np.column_stack([y, x]),
                      residual, exploratory, label)
