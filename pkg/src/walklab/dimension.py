"""Cylinder-based dimension estimates.

The virtual dimension of a finite cylinder family is the root beta of
sum |C|^beta = 1.  Survivor families collect the cylinders whose state path
never drops below a floor; their virtual dimension approximates the
dimension of the set of points that stay above the floor forever.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .markov_core import Interval, TailError
from .walk import (CylinderFamily, RandomWalk, pull_intervals,
                   refine_partition)

__all__ = [
    "vhd", "HDBounds", "hd_bounds", "SurvivorFamily", "survivor_family",
    "beta_survivor_family", "DimensionEstimate", "dimension_estimate",
    "DDInterval", "DDCover", "dd_cover", "root_cylinder_ratio", "MomentSum",
    "partition_moment_sum",
]

ALPHA_FLOOR = 0.3


def _lengths(family) -> np.ndarray:
    if isinstance(family, SurvivorFamily):
        family = family.family
    if isinstance(family, CylinderFamily):
        return family.lengths
    return np.asarray([getattr(c, "length", c) for c in family], dtype=float)


def vhd(family, tol: float = 1e-12) -> float:
    """Root of sum |C|^beta = 1 by bisection."""
    L = _lengths(family)
    if L.size == 0:
        raise ValueError("empty cylinder family")
    if np.any(L <= 0) or np.any(L >= 1):
        raise ValueError("cylinder lengths must lie in (0, 1)")
    logL = np.log(L)

    def g(b):
        return logsumexp(b * logL)

    if L.size == 1:
        return 0.0
    lo, hi = 0.0, 1.0
    while g(hi) > 0:
        lo, hi = hi, 2 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class HDBounds:
    beta: float
    lower: float
    upper: float
    half_width: float
    warning: str = ""


def hd_bounds(family_or_beta, theta: float, d: float) -> HDBounds:
    """Interval beta +- d / (log(1/theta) - d), clipped to [0, 1]."""
    beta = float(family_or_beta) if np.isscalar(family_or_beta) else vhd(family_or_beta)
    if d < 0 or not 0 < theta < 1:
        raise ValueError("need d >= 0 and theta in (0, 1)")
    gap = math.log(1.0 / theta) - d
    if gap <= 0:
        return HDBounds(beta, 0.0, 1.0, math.inf, "distortion exceeds log expansion; bounds vacuous")
    h = d / gap
    return HDBounds(beta, max(0.0, beta - h), min(1.0, beta + h), h)


@dataclass
class SurvivorFamily:
    family: CylinderFamily
    floor_state: int
    beta_slope: float | None = None

    @property
    def total_length(self) -> float:
        return self.family.total_length

    @property
    def partial(self) -> bool:
        return self.family.partial

    def __len__(self):
        return len(self.family)


def survivor_family(walk: RandomWalk, k: int, depth: int, floor: int = 0,
                    cap: int = 10 ** 6) -> SurvivorFamily:
    """Depth-``depth`` cylinders from state k whose states all stay >= floor."""
    fam = refine_partition(walk, k, depth, cap, floor=floor)
    return SurvivorFamily(fam, floor)


def beta_survivor_family(walk: RandomWalk, k: int, depth: int, beta_slope: float,
                         cap: int = 10 ** 6, floor: int = 0) -> SurvivorFamily:
    """Survivors whose terminal height is at least beta_slope * depth."""
    if beta_slope <= 0:
        raise ValueError("beta_slope must be positive")
    sf = survivor_family(walk, k, depth, floor, cap)
    f = sf.family
    keep = (f.states[:, -1] - k) >= beta_slope * depth - 1e-12
    sub = CylinderFamily(f.paths[keep], f.states[keep], f.lo[keep], f.hi[keep],
                         f.start_state, f.source_depth, f.partial)
    return SurvivorFamily(sub, floor, beta_slope)


@dataclass
class DimensionEstimate:
    depth: int
    beta: float
    hd_lower: float
    hd_upper: float
    family_size: int
    converged: bool
    partial: bool = False
    beta_positive_drift: float | None = None


def dimension_estimate(walk: RandomWalk, k: int = 0, floor: int = 0,
                       depth_schedule: Sequence[int] = (4, 6, 8, 10, 12, 14),
                       cap: int = 10 ** 6) -> list:
    """Virtual dimension of survivor families along a depth schedule.

    Each entry also reports the dimension of the sub-family whose terminal
    state is above the start (a lower-bound device) and the distortion
    bounds.  ``converged`` marks a change below 1e-3 from the previous depth.
    """
    sched = list(depth_schedule)
    if any(b <= a for a, b in zip(sched, sched[1:])):
        raise ValueError("depth schedule must increase")
    theta = walk.expansion_bound
    d = walk.distortion_bound
    out = []
    prev = None
    for depth in sched:
        sf = survivor_family(walk, k, depth, floor, cap)
        f = sf.family
        if len(f) == 0:
            out.append(DimensionEstimate(depth, 0.0, 0.0, 0.0, 0, False, f.partial))
            prev = None
            continue
        beta = vhd(f)
        b = hd_bounds(beta, theta, d)
        pos = f.states[:, -1] > k
        bpos = vhd(f.lengths[pos]) if pos.any() else None
        conv = prev is not None and abs(beta - prev) < 1e-3
        out.append(DimensionEstimate(depth, beta, b.lower, b.upper, len(f), conv, f.partial, bpos))
        prev = beta
    return out


# ------------------------------------------------------------- dd-covers

@dataclass
class DDInterval:
    """Contiguous same-level cells; tail cells stand for omitted atoms."""
    lo: np.ndarray
    hi: np.ndarray
    paths: tuple
    tail_info: tuple          # per cell: None or (scale, run, count)
    root_index: int
    level: int

    @property
    def hull(self) -> Interval:
        return Interval(float(self.lo.min()), float(self.hi.max()))

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def n_tail_cells(self) -> int:
        return sum(t is not None for t in self.tail_info)

    def alpha_sum(self, alpha: float) -> float:
        total = 0.0
        for L, t in zip(self.lengths, self.tail_info):
            if t is None:
                total += L ** alpha
            else:
                scale, run, count = t
                total += scale ** alpha * run.tail_alpha_sum(count, alpha)
        return total


@dataclass
class DDCover:
    intervals: list
    J: Interval
    level: int
    ratios: dict = field(default_factory=dict)
    separators: tuple = ()

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)


def _cell_children(walk, state, path, states):
    """Children of a cell: retained atoms plus tail regions of the next state."""
    tab = walk.table
    s = states[-1]
    fmap = walk.map_at(s)
    part = fmap.partition
    if path:
        pr = tab.rows(np.array([states[-2]]))[0]
        first, last = tab.tfirst[pr, path[-1]], tab.tlast[pr, path[-1]]
        img = walk.map_at(states[-2]).branches[path[-1]].image
    else:
        first, last = 0, part.n_atoms - 1
        img = Interval(0.0, 1.0)
    atoms = np.arange(first, last + 1)
    P = np.array([path] * len(atoms), dtype=np.int64).reshape(len(atoms), len(path))
    S = np.array([states] * len(atoms), dtype=np.int64).reshape(len(atoms), len(states))
    lo, hi = pull_intervals(walk, P, S, part.lows[atoms], part.highs[atoms])
    r = tab.rows(np.array([s]))[0]
    psi = tab.psi[r, atoms]
    cells = [(float(a), float(b), tuple(path) + (int(j),), tuple(states) + (int(s + p),), None)
             for a, b, j, p in zip(lo, hi, atoms, psi)]
    for (run, _, count), tail in zip(part.runs, part.tails):
        if tail.lo >= img.lo - 1e-15 and tail.hi <= img.hi + 1e-15:
            P1 = np.array([path], dtype=np.int64).reshape(1, len(path))
            S1 = np.array([states], dtype=np.int64).reshape(1, len(states))
            a, b = pull_intervals(walk, P1, S1, [tail.lo], [tail.hi])
            scale = float(b[0] - a[0]) / tail.length
            cells.append((float(a[0]), float(b[0]), None, None, (scale, run, count)))
    return cells


def dd_cover(walk: RandomWalk, state: int, J, level: int | None = None,
             alphas: Iterable[float] = (0.5, 0.75, 1.0), max_level: int = 60) -> DDCover:
    """Cover J by dd-intervals of one level.

    Cells meeting the interior of J are refined level by level.  Without an
    explicit level the refinement stops at the first level where every
    cylinder meeting J is at most half as long as J.  Gaps left by truncated
    tails are filled by tail cells.  The cells are grouped into maximal runs
    not crossing a separator; each run is one dd-interval.
    """
    J = J if isinstance(J, Interval) else Interval(*J)
    part = walk.map_at(state).partition
    seps = tuple(s for s in part.separators if J.lo < s < J.hi)
    accum = part.accumulation_points

    def meets(c):
        return min(c[1], J.hi) - max(c[0], J.lo) > 0

    cells = [c for c in _cell_children(walk, state, (), (int(state),)) if meets(c)]
    lev = 1
    while True:
        real = [c for c in cells if c[4] is None]
        done = (lev >= level) if level is not None else \
            all(c[1] - c[0] <= 0.5 * J.length for c in real)
        if done or lev >= max_level:
            break
        nxt = []
        for c in cells:
            if c[4] is not None:
                nxt.append(c)
            else:
                nxt.extend(ch for ch in _cell_children(walk, state, c[2][:], c[3]) if meets(ch))
        cells = nxt
        lev += 1
    if level is not None and lev < level:
        raise TailError("requested level exceeds the refinement limit")
    cells.sort(key=lambda c: c[0])
    groups, cur = [], [cells[0]]
    for c in cells[1:]:
        split = any(abs(c[0] - s) <= 1e-15 for s in seps) or c[0] > cur[-1][1] + 1e-15
        if split:
            groups.append(cur)
            cur = [c]
        else:
            cur.append(c)
    groups.append(cur)
    intervals = []
    for g in groups:
        lo = np.array([c[0] for c in g])
        hi = np.array([c[1] for c in g])
        tails = tuple(c[4] for c in g)
        paths = tuple(c[2] for c in g)
        root = _root_index(lo, hi, tails, accum)
        intervals.append(DDInterval(lo, hi, paths, tails, root, lev))
    cover = DDCover(intervals, J, lev, separators=seps)
    for a in alphas:
        cover.ratios[a] = sum(float(w.hull.length) ** a for w in intervals) / J.length ** a
    return cover


def _root_index(lo, hi, tails, accum) -> int:
    """End cell away from an accumulation point, else the longer end cell."""
    n = len(lo)
    if n == 1:
        return 0
    left_acc = tails[0] is not None or any(abs(lo[0] - c) < 1e-15 for c in accum)
    right_acc = tails[-1] is not None or any(abs(hi[-1] - c) < 1e-15 for c in accum)
    if left_acc and not right_acc:
        return n - 1
    if right_acc and not left_acc:
        return 0
    return 0 if hi[0] - lo[0] >= hi[-1] - lo[-1] else n - 1


def root_cylinder_ratio(dd: DDInterval, alpha: float, alpha_floor: float = ALPHA_FLOOR):
    """(|W|^a / sum |C_i|^a, |C_root|^a / sum |C_i|^a)."""
    if alpha < alpha_floor:
        raise ValueError(f"alpha below the floor {alpha_floor}")
    s = dd.alpha_sum(alpha)
    root = dd.lengths[dd.root_index] ** alpha
    return dd.hull.length ** alpha / s, root / s


# ----------------------------------------------------------- moment sums

@dataclass
class MomentSum:
    sums: list
    growth: float
    alpha: float
    C: float
    method: str
    partial: bool = False


def partition_moment_sum(walk: RandomWalk, state: int, n: int, eps: float,
                         cap: int = 10 ** 6) -> MomentSum:
    """S_k = sum over depth-k cylinders of |P|^(1-eps), k = 1..n, with C(1+alpha)^k fit."""
    if n < 1 or not 0 <= eps < 1:
        raise ValueError("need n >= 1 and eps in [0, 1)")
    s = 1.0 - eps
    partial = False
    if walk.homogeneous and walk.is_affine:
        fmap = walk.base
        L = np.array([a.length for a in fmap.partition.atoms])
        A = len(L)
        K = np.zeros((A, A))
        for a, br in enumerate(fmap.branches):
            f, l = br.targets
            K[a, f:l + 1] = (L[a] / br.image.length) ** s
        w = np.ones(A)
        Ls = L ** s
        sums = []
        for k in range(1, n + 1):
            if k > 1:
                w = K.T @ w
            sums.append(float(w @ Ls))
        method = "transfer"
    else:
        sums = []
        for k in range(1, n + 1):
            fam = refine_partition(walk, state, k, cap)
            partial |= fam.partial
            sums.append(float(np.sum(fam.lengths ** s)))
        method = "enumeration"
    ks = np.arange(1, n + 1)
    if n == 1:
        growth = sums[0]
    else:
        growth = float(math.exp(np.polyfit(ks, np.log(sums), 1)[0]))
    C = float(np.max(np.array(sums) / growth ** ks))
    return MomentSum(sums, growth, growth - 1.0, C, method, partial)
