"""Deterministic random walks F(x, n) = (f_n(x), n + psi(x, n)) on [0,1] x Z.

A walk is a homogeneous base map plus optional per-state override maps
inside a finite window of states.  All override maps share the base map's
atom count and symbolic structure, so a symbolic path means the same thing
in every state.  Heavy numerical work goes through ``WalkTable``, a compiled
array view of the walk that vectorises atom lookup, forward evaluation and
inverse branches over many points and states at once.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .markov_core import (AdmissibilityError, Interval, MarkovMap, PartitionError, bump,
                          bump_d1, resolve_targets)

__all__ = [
    "DriftFunction", "WalkPoint", "RandomWalk", "WalkTable", "Cylinder",
    "CylinderFamily", "OrbitStates", "EnsembleResult", "GoodDriftFit",
    "step", "orbit_states", "cylinder", "refine_partition", "enumerate_paths",
    "simulate_ensemble", "dist_n", "check_good_drift", "orbit_stream",
]

NUDGE = 1e-12
# Width of the uniform noise injected into x each step by the ensemble
# simulator.  Expanding maps shift bits out of a double at a rate of log2 of
# the slope per step; refreshing the low bits keeps long orbits typical.
REFRESH = 2.0 ** -40
RNG_CHUNK = 1024


@dataclass(frozen=True)
class DriftFunction:
    """Integer drift per atom.

    ``values`` gives the drift on each atom of the base partition.
    ``state_values`` optionally replaces it in individual states.
    ``tail_rule`` gives drift on omitted atoms of each geometric run as
    (offset, slope) so that atom j of the run has drift offset + slope*j.
    """
    values: tuple
    state_values: tuple = ()
    tail_rule: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        for off, slope in self.tail_rule:
            if slope < 0:
                raise PartitionError("drift unbounded below is not allowed")

    def at(self, state: int) -> tuple:
        for s, vals in self.state_values:
            if s == state:
                return vals
        return self.values

    @property
    def lower_bound(self) -> int:
        vals = list(self.values)
        for _, v in self.state_values:
            vals.extend(v)
        lows = [off for off, _ in self.tail_rule]
        return int(min(vals + lows))

    @property
    def upper_bound(self) -> float:
        if any(slope > 0 for _, slope in self.tail_rule):
            return math.inf
        vals = list(self.values)
        for _, v in self.state_values:
            vals.extend(v)
        return float(max(vals + [off for off, _ in self.tail_rule]))

    @property
    def unbounded_above(self) -> bool:
        return math.isinf(self.upper_bound)

    @property
    def is_constant(self) -> bool:
        vals = set(self.values)
        for _, v in self.state_values:
            vals.update(v)
        for off, slope in self.tail_rule:
            vals.add(off)
            if slope:
                return False
        return len(vals) == 1

    @classmethod
    def geometric_rule(cls, fmap: MarkovMap, explicit: Sequence[int], rules: Sequence[tuple]):
        """Drift with given values on explicit atoms and affine-in-index rules on runs."""
        vals = list(explicit)
        for (off, slope), (_, _, count) in zip(rules, fmap.partition.runs):
            vals.extend(off + slope * j for j in range(count))
        return cls(tuple(vals), (), tuple((int(o), int(s)) for o, s in rules))


@dataclass(frozen=True)
class WalkPoint:
    x: float
    n: int


@dataclass(frozen=True, eq=False)
class RandomWalk:
    base: MarkovMap
    drift: DriftFunction
    overrides: tuple = ()       # ((state, MarkovMap), ...)
    name: str = ""
    note: str = ""

    def __post_init__(self):
        n = self.base.partition.n_atoms
        if len(self.drift.values) != n:
            raise PartitionError("drift needs one value per atom")
        for s, vals in self.drift.state_values:
            if len(vals) != n:
                raise PartitionError(f"drift at state {s} needs one value per atom")
        seen = set()
        for s, m in self.overrides:
            if m.partition.n_atoms != n:
                raise PartitionError(f"state {s} map has a different atom count")
            if s in seen:
                raise PartitionError(f"state {s} overridden twice")
            seen.add(s)
        for k, b in enumerate(self.base.branches):
            if b.targets is None:
                raise PartitionError(f"base branch {k} is not Markov")
        self._check_cross_state()

    @property
    def homogeneous(self) -> bool:
        return not self.overrides and not self.drift.state_values

    @cached_property
    def window(self):
        states = [s for s, _ in self.overrides] + [s for s, _ in self.drift.state_values]
        if not states:
            return None
        return (min(states), max(states))

    @cached_property
    def _override_dict(self):
        return dict(self.overrides)

    def map_at(self, state: int) -> MarkovMap:
        return self._override_dict.get(int(state), self.base)

    def psi_at(self, state: int) -> tuple:
        return self.drift.at(int(state))

    def _check_cross_state(self):
        if self.window is None:
            return
        lo, hi = self.window
        lb = self.drift.lower_bound
        ub = self.drift.upper_bound
        ub = hi - lo + 1 if math.isinf(ub) else int(ub)
        for s in range(lo - max(ub, 0) - 1, hi - min(lb, 0) + 2):
            fmap = self.map_at(s)
            psi = self.psi_at(s)
            for j, br in enumerate(fmap.branches):
                dest = self.map_at(s + psi[j]).partition
                tg = resolve_targets(br.image, dest)
                if tg is None or tuple(tg) != tuple(br.targets):
                    raise PartitionError(
                        f"state {s} atom {j}: image is not the same union of atoms in state {s + psi[j]}")

    @cached_property
    def table(self) -> "WalkTable":
        return WalkTable(self)

    @property
    def expansion_bound(self) -> float:
        return max([self.base.expansion_bound] + [m.expansion_bound for _, m in self.overrides])

    @property
    def distortion_bound(self) -> float:
        return max([self.base.distortion_bound] + [m.distortion_bound for _, m in self.overrides])

    @property
    def is_affine(self) -> bool:
        return self.base.is_affine and all(m.is_affine for _, m in self.overrides)


class WalkTable:
    """Array form of a walk: one row per override state plus a base row."""

    def __init__(self, walk: RandomWalk):
        states = sorted({s for s, _ in walk.overrides} | {s for s, _ in walk.drift.state_values})
        self.states = states
        self.base_row = len(states)
        maps = [walk.map_at(s) for s in states] + [walk.base]
        psis = [walk.psi_at(s) for s in states] + [walk.drift.values]
        R = len(maps)
        A = walk.base.partition.n_atoms
        self.n_atoms = A
        self.lo = np.empty((R, A))
        self.hi = np.empty((R, A))
        self.ilo = np.empty((R, A))
        self.ihi = np.empty((R, A))
        self.orient = np.empty((R, A))
        self.eps = np.empty((R, A))
        self.psi = np.array(psis, dtype=np.int64)
        self.tfirst = np.empty((R, A), dtype=np.int64)
        self.tlast = np.empty((R, A), dtype=np.int64)
        keys, order = [], []
        for r, m in enumerate(maps):
            part = m.partition
            self.lo[r] = part.lows
            self.hi[r] = part.highs
            for j, b in enumerate(m.branches):
                self.ilo[r, j], self.ihi[r, j] = b.image.lo, b.image.hi
                self.orient[r, j] = b.orientation
                self.eps[r, j] = b.eps
                self.tfirst[r, j], self.tlast[r, j] = b.targets
            o = part.order
            keys.append(part.lows[o] + 2.0 * r)
            order.append(o)
        self.keys = np.concatenate(keys)
        self.order = np.concatenate(order)
        self.dlen = self.hi - self.lo
        self.ilen = self.ihi - self.ilo
        self.any_eps = bool(np.any(self.eps != 0.0))
        self.tail_lists = [m.partition.tails for m in maps]
        if states:
            self.smin = states[0]
            lut = np.full(states[-1] - states[0] + 1, self.base_row, dtype=np.int64)
            for r, s in enumerate(states):
                lut[s - self.smin] = r
            self.lut = lut
        else:
            self.smin = 0
            self.lut = None

    def rows(self, states):
        states = np.asarray(states, dtype=np.int64)
        if self.lut is None:
            return np.full(states.shape, self.base_row, dtype=np.int64)
        idx = states - self.smin
        inside = (idx >= 0) & (idx < self.lut.size)
        out = np.full(states.shape, self.base_row, dtype=np.int64)
        out[inside] = self.lut[idx[inside]]
        return out

    def locate(self, rows, x):
        """Atom index for each point; -1 when x is in a gap (truncated tail)."""
        A = self.n_atoms
        pos = np.searchsorted(self.keys, x + 2.0 * rows, side="right") - 1
        ok = (pos >= 0) & (pos // A == rows)
        pos = np.where(ok, pos, 0)
        atom = self.order[pos]
        ok &= x < self.hi[rows, atom]
        return np.where(ok, atom, -1)

    def forward(self, rows, atoms, x):
        dlo = self.lo[rows, atoms]
        dlen = self.dlen[rows, atoms]
        u = (x - dlo) / dlen
        slope = self.ilen[rows, atoms] / dlen
        orient = self.orient[rows, atoms]
        if self.any_eps:
            e = self.eps[rows, atoms]
            v = u + e * bump(u)
            dv = 1.0 + e * bump_d1(u)
        else:
            v = u
            dv = 1.0
        y = np.where(orient > 0, self.ilo[rows, atoms] + self.ilen[rows, atoms] * v,
                     self.ihi[rows, atoms] - self.ilen[rows, atoms] * v)
        return y, orient * slope * dv

    def inverse(self, rows, atoms, y):
        orient = self.orient[rows, atoms]
        ilen = self.ilen[rows, atoms]
        v = np.where(orient > 0, (y - self.ilo[rows, atoms]) / ilen, (self.ihi[rows, atoms] - y) / ilen)
        if self.any_eps:
            e = self.eps[rows, atoms]
            u = _solve_bump_vec(v, e)
        else:
            u = v
        return self.lo[rows, atoms] + self.dlen[rows, atoms] * u

    def derivative_inverse_bound(self) -> float:
        return float(np.max(self.dlen / (self.ilen * (1.0 - np.abs(self.eps)))))


def _solve_bump_vec(v, e, max_iter: int = 60):
    """Per-element amplitudes version of ``solve_bump``."""
    if not np.any(e):
        return v
    lo = np.zeros_like(v)
    hi = np.ones_like(v)
    u = np.array(v, dtype=float, copy=True)
    for _ in range(max_iter):
        g = u + e * bump(u) - v
        lo = np.where(g < 0, u, lo)
        hi = np.where(g > 0, u, hi)
        new = u - g / (1.0 + e * bump_d1(u))
        bad = (new <= lo) | (new >= hi)
        new = np.where(bad, 0.5 * (lo + hi), new)
        if np.max(np.abs(new - u), initial=0.0) <= 1e-15:
            u = new
            break
        u = new
    return u


# ---------------------------------------------------------------- orbits

def step(walk: RandomWalk, p: WalkPoint) -> WalkPoint:
    fmap = walk.map_at(p.n)
    j = fmap.partition.locate(float(p.x))
    y, _ = fmap.branches[j].forward(float(p.x))
    return WalkPoint(float(y), int(p.n + walk.psi_at(p.n)[j]))


@dataclass
class OrbitStates:
    """State trajectory of one orbit; shorter than horizon+1 on tail escape."""
    states: np.ndarray
    escaped_at: int | None = None
    nudges: int = 0

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]

    def __iter__(self):
        return iter(self.states.tolist())

    def tolist(self):
        return self.states.tolist()


def orbit_states(walk: RandomWalk, p: WalkPoint, horizon: int) -> OrbitStates:
    """Exact (noise-free) state trajectory, nudging points off atom boundaries."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    tab = walk.table
    x = float(p.x)
    n = int(p.n)
    out = np.empty(horizon + 1, dtype=np.int64)
    out[0] = n
    nudges = 0
    for t in range(1, horizon + 1):
        r = int(tab.rows(np.array([n]))[0])
        a = int(tab.locate(np.array([r]), np.array([x]))[0])
        if a < 0:
            return OrbitStates(out[:t], t, nudges)
        lo, hi = tab.lo[r, a], tab.hi[r, a]
        if x - lo < NUDGE or hi - x < NUDGE:
            x = min(max(x, lo + NUDGE), hi - NUDGE)
            nudges += 1
        y, _ = tab.forward(np.array([r]), np.array([a]), np.array([x]))
        x = float(y[0])
        n += int(tab.psi[r, a])
        x = min(max(x, 0.0), 1.0)
        out[t] = n
    return OrbitStates(out, None, nudges)


def orbit_stream(seed: int, orbit: int) -> np.random.Generator:
    """Independent counter-based stream for one orbit."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(orbit),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class EnsembleResult:
    start_state: int
    horizon: int
    seed: int
    final: np.ndarray
    min_after_burn: np.ndarray
    max_after_burn: np.ndarray
    returns: np.ndarray
    record_times: tuple
    recorded: np.ndarray
    escaped: np.ndarray
    nudges: int

    @property
    def n_orbits(self) -> int:
        return int(self.final.size)


def _simulate_block(tab: WalkTable, orbits: np.ndarray, horizon: int, seed: int,
                    start_state: int, record_times: tuple, burn_in: int, x0):
    n = orbits.size
    gens = [orbit_stream(seed, int(i)) for i in orbits]
    if x0 is None:
        x = np.array([g.random() for g in gens])
    else:
        x = np.asarray(x0, dtype=float).copy()
    state = np.full(n, start_state, dtype=np.int64)
    mn = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    mx = np.full(n, np.iinfo(np.int64).min, dtype=np.int64)
    returns = np.zeros(n, dtype=np.int64)
    escaped = np.full(n, -1, dtype=np.int64)
    rec_idx = {t: k for k, t in enumerate(record_times)}
    recorded = np.zeros((n, len(record_times)), dtype=np.int64)
    if 0 in rec_idx:
        recorded[:, rec_idx[0]] = state
    alive = np.ones(n, dtype=bool)
    any_dead = False
    nudges = 0
    noise = None
    homogeneous = tab.lut is None
    if homogeneous:
        # flat per-atom arrays for the single row
        b = tab.base_row
        o = tab.order[b * tab.n_atoms:(b + 1) * tab.n_atoms]
        keys = tab.lo[b, o]
        lo1, hi1, psi1 = tab.lo[b], tab.hi[b], tab.psi[b]
        affine = not np.any(tab.eps[b])
        # affine branches as y = gain * x + shift
        gain = tab.orient[b] * tab.ilen[b] / tab.dlen[b]
        shift = np.where(tab.orient[b] > 0, tab.ilo[b], tab.ihi[b]) - gain * tab.lo[b]
    for t in range(1, horizon + 1):
        k = (t - 1) % RNG_CHUNK
        if k == 0:
            noise = np.stack([g.random(RNG_CHUNK) for g in gens])
            noise -= 0.5
            noise *= REFRESH
        xj = x + noise[:, k]
        np.abs(xj, out=xj)
        over = xj > 1.0
        if over.any():
            xj[over] = 2.0 - xj[over]
        if homogeneous:
            pos = np.searchsorted(keys, xj, side="right") - 1
            atom = o[np.maximum(pos, 0)]
            lo, hi = lo1[atom], hi1[atom]
            bad = (pos < 0) | (xj >= hi)
            rows = None
        else:
            rows = tab.rows(state)
            atom = tab.locate(rows, xj)
            bad = atom < 0
            atom[bad] = 0
            lo, hi = tab.lo[rows, atom], tab.hi[rows, atom]
        bad &= alive
        if bad.any():
            escaped[bad] = t
            alive &= ~bad
            any_dead = True
        near = (xj - lo < NUDGE) | (hi - xj < NUDGE)
        if near.any():
            near &= alive
            nudges += int(near.sum())
            xj = np.where(near, np.clip(xj, lo + NUDGE, hi - NUDGE), xj)
        if rows is None:
            if affine:
                y = gain[atom] * xj + shift[atom]
            else:
                y, _ = tab.forward(np.full(n, tab.base_row), atom, xj)
            step_psi = psi1[atom]
        else:
            y, _ = tab.forward(rows, atom, xj)
            step_psi = tab.psi[rows, atom]
        np.clip(y, 0.0, 1.0, out=y)
        if any_dead:
            x = np.where(alive, y, x)
            state = np.where(alive, state + step_psi, state)
            returns += (state == start_state) & alive
        else:
            x = y
            state += step_psi
            returns += state == start_state
        if t > burn_in:
            np.minimum(mn, state, out=mn)
            np.maximum(mx, state, out=mx)
        if t in rec_idx:
            recorded[:, rec_idx[t]] = state
    if burn_in >= horizon:
        mn = state.copy()
        mx = state.copy()
    return state, mn, mx, returns, recorded, escaped, nudges


def simulate_ensemble(walk: RandomWalk, n_orbits: int, horizon: int, seed: int,
                      start_state: int = 0, record_times: Sequence[int] = (),
                      burn_in: int = 0, threads: int = 1, x0=None,
                      block: int = 4096) -> EnsembleResult:
    """Vectorised orbits with per-orbit random streams.

    Initial points are uniform on [0, 1] (drawn from each orbit's stream)
    unless ``x0`` is given.  Results do not depend on ``threads`` or
    ``block``: every orbit reads only its own stream.
    """
    if n_orbits < 1 or horizon < 1:
        raise ValueError("ensemble and horizon must be >= 1")
    tab = walk.table
    record_times = tuple(sorted(set(int(t) for t in record_times)))
    ids = np.arange(n_orbits)
    blocks = [ids[i:i + block] for i in range(0, n_orbits, block)]
    x0s = [None] * len(blocks) if x0 is None else [np.asarray(x0)[b] for b in blocks]

    def run(k):
        return _simulate_block(tab, blocks[k], horizon, seed, start_state,
                               record_times, burn_in, x0s[k])

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, range(len(blocks))))
    else:
        parts = [run(k) for k in range(len(blocks))]
    cat = [np.concatenate([p[i] for p in parts]) for i in range(6)]
    return EnsembleResult(start_state, horizon, seed, cat[0], cat[1], cat[2], cat[3],
                          record_times, cat[4], cat[5], sum(p[6] for p in parts))


# ------------------------------------------------------------- cylinders

@dataclass(frozen=True)
class Cylinder:
    """Interval of points following ``path`` (one atom index per step).

    ``states`` has one more entry than ``path``: the state before each
    symbol plus the state after the last one.
    """
    path: tuple
    states: tuple
    lo: float
    hi: float

    @property
    def depth(self) -> int:
        return len(self.path)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def interval(self) -> Interval:
        return Interval(self.lo, self.hi)


@dataclass
class CylinderFamily:
    """Disjoint cylinders stored as arrays (paths: N x depth, states: N x depth+1)."""
    paths: np.ndarray
    states: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    start_state: int
    source_depth: int
    partial: bool = False
    omitted_length: float = 0.0

    def __len__(self):
        return int(self.lo.size)

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def total_length(self) -> float:
        return float(np.sum(self.lengths))

    def __getitem__(self, k) -> Cylinder:
        return Cylinder(tuple(int(a) for a in self.paths[k]), tuple(int(s) for s in self.states[k]),
                        float(self.lo[k]), float(self.hi[k]))

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("path,statePath,lo,hi,length\n")
            for k in range(len(self)):
                p = " ".join(str(int(a)) for a in self.paths[k])
                s = " ".join(str(int(a)) for a in self.states[k])
                fh.write(f"{p},{s},{self.lo[k]!r},{self.hi[k]!r},{self.hi[k] - self.lo[k]!r}\n")


def enumerate_paths(walk: RandomWalk, start_state: int, depth: int, cap: int | None = None,
                    floor: int | None = None, keep_levels: bool = False):
    """Breadth-first enumeration of admissible paths in lexicographic order.

    Returns (paths, states, partial) or, with ``keep_levels``, a list of such
    triples for every depth 1..depth.  Paths are dropped as soon as a state
    falls below ``floor``; at most ``cap`` paths are kept per level.
    """
    tab = walk.table
    A = tab.n_atoms
    s0 = int(start_state)
    if floor is not None and s0 < floor:
        empty = (np.zeros((0, 1), dtype=np.int64), np.zeros((0, 2), dtype=np.int64), False)
        return [empty] * depth if keep_levels else empty
    row0 = tab.rows(np.array([s0]))[0]
    paths = np.arange(A, dtype=np.int64)[:, None]
    states = np.column_stack([np.full(A, s0, dtype=np.int64), s0 + tab.psi[row0]])
    partial = False
    levels = []

    def prune(paths, states):
        if floor is not None:
            ok = states[:, -1] >= floor
            paths, states = paths[ok], states[ok]
        return paths, states

    paths, states = prune(paths, states)
    if cap is not None and len(paths) > cap:
        paths, states, partial = paths[:cap], states[:cap], True
    levels.append((paths, states, partial))
    for _ in range(1, depth):
        prev_rows = tab.rows(states[:, -2])
        last = paths[:, -1]
        first = tab.tfirst[prev_rows, last]
        count = tab.tlast[prev_rows, last] - first + 1
        total = int(count.sum())
        if cap is not None and floor is None and total > cap:
            keep = np.searchsorted(np.cumsum(count), cap, side="right")
            paths, states, first, count = paths[:keep], states[:keep], first[:keep], count[:keep]
            partial = True
        parent = np.repeat(np.arange(len(paths)), count)
        offs = np.arange(int(count.sum())) - np.repeat(np.cumsum(count) - count, count)
        child = first[parent] + offs
        rows = tab.rows(states[parent, -1])
        new_states = states[parent, -1] + tab.psi[rows, child]
        paths = np.column_stack([paths[parent], child])
        states = np.column_stack([states[parent], new_states])
        paths, states = prune(paths, states)
        if cap is not None and len(paths) > cap:
            paths, states, partial = paths[:cap], states[:cap], True
        levels.append((paths, states, partial))
    return levels if keep_levels else levels[-1]


def pull_intervals(walk: RandomWalk, paths: np.ndarray, states: np.ndarray, lo, hi):
    """Pull intervals [lo, hi] back through the inverse branches along ``paths``.

    ``paths`` is N x d, ``states`` is N x (d+1) and the intervals live in
    the state ``states[:, d]``.
    """
    tab = walk.table
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for t in range(paths.shape[1] - 1, -1, -1):
        rows = tab.rows(states[:, t])
        a = paths[:, t]
        x1 = tab.inverse(rows, a, lo)
        x2 = tab.inverse(rows, a, hi)
        lo, hi = np.minimum(x1, x2), np.maximum(x1, x2)
    return lo, hi


def pullback(walk: RandomWalk, paths: np.ndarray, states: np.ndarray):
    """Endpoints of the cylinders coded by ``paths`` (vectorised)."""
    tab = walk.table
    if len(paths) == 0:
        return np.zeros(0), np.zeros(0)
    d = paths.shape[1]
    rows = tab.rows(states[:, d - 1])
    last = paths[:, d - 1]
    return pull_intervals(walk, paths[:, :d - 1], states[:, :d], tab.lo[rows, last], tab.hi[rows, last])


def refine_partition(walk: RandomWalk, start_state: int, depth: int, cap: int = 10 ** 6,
                     floor: int | None = None) -> CylinderFamily:
    """All admissible depth-``depth`` cylinders from ``start_state``."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    paths, states, partial = enumerate_paths(walk, start_state, depth, cap, floor)
    lo, hi = pullback(walk, paths, states)
    fam = CylinderFamily(paths, states, lo, hi, int(start_state), depth, partial)
    fam.omitted_length = float(1.0 - fam.total_length) if floor is None else 0.0
    return fam


def cylinder(walk: RandomWalk, start_state: int, path: Sequence[int]) -> Cylinder:
    path = [int(a) for a in path]
    if not path:
        raise ValueError("path must contain at least one symbol")
    tab = walk.table
    states = [int(start_state)]
    prev = None
    for a in path:
        s = states[-1]
        r = int(tab.rows(np.array([s]))[0])
        if not 0 <= a < tab.n_atoms:
            raise AdmissibilityError(f"atom {a} does not exist")
        if prev is not None:
            pr, pa = prev
            if not tab.tfirst[pr, pa] <= a <= tab.tlast[pr, pa]:
                raise AdmissibilityError(f"atom {a} is not in the image of atom {pa}")
        states.append(s + int(tab.psi[r, a]))
        prev = (r, a)
    lo, hi = pullback(walk, np.array([path]), np.array([states]))
    return Cylinder(tuple(path), tuple(states), float(lo[0]), float(hi[0]))


def log_derivative_along(walk: RandomWalk, cyl: Cylinder, x: np.ndarray) -> np.ndarray:
    """log |D F^n| at the points x of the cylinder, n = depth."""
    tab = walk.table
    x = np.asarray(x, dtype=float)
    acc = np.zeros_like(x)
    for a, s in zip(cyl.path, cyl.states[:-1]):
        rows = np.full(x.shape, tab.rows(np.array([s]))[0])
        atoms = np.full(x.shape, a)
        y, dy = tab.forward(rows, atoms, x)
        acc += np.log(np.abs(dy))
        x = y
    return acc


def dist_n(walk_f: RandomWalk, walk_g: RandomWalk, conj, cyl: Cylinder, grid: int = 33) -> float:
    """sup over the cylinder of |log DG^n(H x) - log DF^n(x)|."""
    from .stability import conjugacy_eval_many
    conj.check_path(cyl)
    if walk_f.is_affine and walk_g.is_affine:
        tf, tg = walk_f.table, walk_g.table
        total = 0.0
        for a, s in zip(cyl.path, cyl.states[:-1]):
            rf = tf.rows(np.array([s]))[0]
            rg = tg.rows(np.array([s]))[0]
            total += math.log(tg.ilen[rg, a] / tg.dlen[rg, a]) - math.log(tf.ilen[rf, a] / tf.dlen[rf, a])
        return abs(total)
    xs = cyl.lo + (cyl.hi - cyl.lo) * (np.arange(grid) + 0.5) / grid
    hx = conjugacy_eval_many(conj, xs, cyl.states[0])
    gcyl = cylinder(walk_g, cyl.states[0], cyl.path)
    hx = np.clip(hx, np.nextafter(gcyl.lo, 1), np.nextafter(gcyl.hi, 0))
    return float(np.max(np.abs(log_derivative_along(walk_g, gcyl, hx) - log_derivative_along(walk_f, cyl, xs))))


# ------------------------------------------------------------ good drift

@dataclass
class GoodDriftFit:
    ok: bool
    C: float
    gamma: float
    masses: list
    message: str = ""


def drift_level_masses(walk: RandomWalk, k_max: int, state: int | None = None) -> np.ndarray:
    """Lebesgue measure of {psi >= k} for k = 1..k_max, tails included exactly."""
    fmap = walk.base if state is None else walk.map_at(state)
    psi = np.array(walk.drift.values if state is None else walk.psi_at(state))
    lengths = np.array([a.length for a in fmap.partition.atoms])
    ks = np.arange(1, k_max + 1)
    m = np.array([lengths[psi >= k].sum() for k in ks], dtype=float)
    for (run, _, count), rule in zip(fmap.partition.runs, walk.drift.tail_rule):
        off, slope = rule
        for i, k in enumerate(ks):
            if slope == 0:
                if off >= k:
                    m[i] += run.first * run.ratio ** count / (1 - run.ratio)
                continue
            jmin = max(count, math.ceil((k - off) / slope))
            m[i] += run.first * run.ratio ** jmin / (1 - run.ratio)
    return m


def check_good_drift(walk: RandomWalk, k_max: int = 40, min_points: int = 8) -> GoodDriftFit:
    """Geometric fit m(psi >= k) <= C gamma^k.

    Bounded drift with fewer than ``min_points`` nonzero levels uses the
    convention gamma = 0, C = m(psi >= 1).  A fit fails when the decay ratio
    over the upper half of the levels is markedly slower than over the lower
    half (polynomial tails) or when gamma >= 1.
    """
    m = drift_level_masses(walk, k_max)
    nz = int(np.count_nonzero(m > 0))
    if nz < min_points:
        return GoodDriftFit(True, float(m[0]), 0.0, m.tolist(), "bounded drift")
    ks = np.arange(1, nz + 1)
    logm = np.log(m[:nz])
    slope, icpt = np.polyfit(ks, logm, 1)
    half = nz // 2
    s_lo = np.polyfit(ks[:half], logm[:half], 1)[0]
    s_hi = np.polyfit(ks[half:], logm[half:], 1)[0]
    gamma = float(math.exp(slope))
    C = float(np.max(m[:nz] / gamma ** ks))
    ok = gamma < 1.0 and abs(s_hi - s_lo) <= 0.05 * max(abs(s_lo), 1e-12) + 1e-9
    msg = "" if ok else "tail is not geometric"
    return GoodDriftFit(ok, C, gamma, m.tolist(), msg)
