"""Piecewise expanding Markov maps of the unit interval.

A map is a list of monotone branches, one per atom of a Markov partition.
Branches are affine or affine plus a small multiple of a fixed smooth bump
(``PerturbedAffine``).  Partitions may contain geometric runs of atoms that
accumulate at a point; such runs are truncated once the omitted tail is
shorter than a tolerance, and every consumer of a partition reports the
excluded tail length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "WalkError", "BoundaryError", "TailError", "PartitionError",
    "AdmissibilityError", "Interval", "GeometricRun", "Branch",
    "MarkovPartition", "MarkovMap", "PropertyReport", "build_partition",
    "eval_map", "inverse_branch", "check_properties", "affine_full_branch_map",
    "bump", "bump_d1", "bump_d2", "BUMP_C2_NORM",
]


class WalkError(Exception):
    """Base class for domain errors raised by the library."""


class BoundaryError(WalkError, ValueError):
    """Point lies on an atom boundary (excluded from the domain)."""


class TailError(WalkError, ValueError):
    """Point lies in the truncated tail of an infinite partition."""


class PartitionError(WalkError, ValueError):
    """Invalid partition or map description."""


class AdmissibilityError(WalkError, ValueError):
    """Symbolic path is not admissible."""


# Fixed bump on [0, 1]: s(u) = sin(pi u) / pi.  It vanishes at both ends, so
# perturbed branches keep their endpoints.
def bump(u):
    return np.sin(np.pi * u) / np.pi


def bump_d1(u):
    return np.cos(np.pi * u)


def bump_d2(u):
    return -np.pi * np.sin(np.pi * u)


BUMP_SUP_D1 = 1.0
BUMP_SUP_D2 = math.pi
BUMP_SUP_D3 = math.pi ** 2
# sup|s| + sup|s'| + sup|s''|, converts a change in amplitude to a C2 change.
BUMP_C2_NORM = 1.0 / math.pi + BUMP_SUP_D1 + BUMP_SUP_D2

DISTORTION_GRID = 33


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (0.0 <= lo < hi <= 1.0):
            raise PartitionError(f"invalid interval [{lo}, {hi})")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        """Open-interval membership."""
        return self.lo < x < self.hi

    def __iter__(self):
        yield self.lo
        yield self.hi


@dataclass(frozen=True)
class GeometricRun:
    """Atoms of lengths first * ratio**j accumulating at ``accumulation``.

    ``side`` is +1 when the atoms lie to the right of the accumulation point
    and -1 when they lie to its left.  Atoms are generated from the outermost
    one inward.
    """
    accumulation: float
    ratio: float
    first: float
    side: int = 1

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise PartitionError("geometric ratio must lie in (0, 1)")
        if self.first <= 0.0:
            raise PartitionError("geometric first length must be positive")
        if self.side not in (1, -1):
            raise PartitionError("side must be +1 or -1")

    @property
    def span(self) -> float:
        return self.first / (1.0 - self.ratio)

    def atom(self, j: int) -> Interval:
        c, s, r = self.accumulation, self.span, self.ratio
        if self.side == 1:
            return Interval(c + s * r ** (j + 1), c + s * r ** j)
        return Interval(c - s * r ** j, c - s * r ** (j + 1))

    def tail(self, count: int) -> Interval:
        """Region covered by atoms with index >= count."""
        c, s, r = self.accumulation, self.span, self.ratio
        if self.side == 1:
            return Interval(c, c + s * r ** count)
        return Interval(c - s * r ** count, c)

    def tail_alpha_sum(self, count: int, alpha: float) -> float:
        """Sum of |atom|**alpha over the omitted atoms (closed form)."""
        r = self.ratio
        return self.first ** alpha * r ** (count * alpha) / (1.0 - r ** alpha)


@dataclass(frozen=True)
class MarkovPartition:
    atoms: tuple
    accumulation_points: tuple = ()
    separators: tuple = ()
    runs: tuple = ()            # (GeometricRun, first atom index, atom count)
    tails: tuple = ()           # omitted tail regions, one per run
    tolerance: float = 0.0
    half_open: bool = False     # atoms [lo, hi) own their left endpoint

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def tail_ratio(self) -> float | None:
        if not self.runs:
            return None
        return max(run.ratio for run, _, _ in self.runs)

    @property
    def truncation_index(self) -> int:
        return max((count for _, _, count in self.runs), default=0)

    @property
    def truncated_tail_length(self) -> float:
        return float(sum(t.length for t in self.tails))

    @cached_property
    def lows(self) -> np.ndarray:
        return np.array([a.lo for a in self.atoms])

    @cached_property
    def highs(self) -> np.ndarray:
        return np.array([a.hi for a in self.atoms])

    @cached_property
    def order(self) -> np.ndarray:
        """Atom indices sorted by position."""
        return np.argsort(self.lows, kind="stable")

    def run_of(self, atom: int):
        for k, (run, start, count) in enumerate(self.runs):
            if start <= atom < start + count:
                return k, atom - start
        return None

    def locate(self, x: float) -> int:
        """Atom index whose interior contains x."""
        if not 0.0 <= x <= 1.0 or math.isnan(x):
            raise ValueError(f"point {x} outside the unit interval")
        lo_sorted = self.lows[self.order]
        pos = int(np.searchsorted(lo_sorted, x, side="right")) - 1
        if pos >= 0:
            j = int(self.order[pos])
            atom = self.atoms[j]
            if atom.lo < x < atom.hi or (self.half_open and x == atom.lo):
                return j
            if x == atom.lo or x == atom.hi:
                raise BoundaryError(f"point {x} is an atom boundary")
        if pos + 1 < len(lo_sorted) and x == lo_sorted[pos + 1]:
            raise BoundaryError(f"point {x} is an atom boundary")
        for t in self.tails:
            if t.lo <= x <= t.hi:
                raise TailError(f"point {x} lies in a truncated tail")
        raise BoundaryError(f"point {x} is not interior to any atom")


def build_partition(atoms: Iterable[Sequence[float]] = (),
                    runs: Iterable[GeometricRun] = (),
                    tolerance: float = 1e-9,
                    separators: Iterable[float] | None = None,
                    index_cap: int = 10_000, half_open: bool = False) -> MarkovPartition:
    """Assemble a partition from explicit atoms and geometric runs.

    Explicit atoms come first, then each run's atoms from the outside in.
    A run stops at the first index whose remaining tail is <= tolerance.
    Separators default to points shared by runs toward different
    accumulation points.
    """
    explicit = [a if isinstance(a, Interval) else Interval(*a) for a in atoms]
    runs = tuple(runs)
    all_atoms = list(explicit)
    run_info, tails, accum = [], [], []
    for run in runs:
        count = 0
        span = run.span
        while span * run.ratio ** count > tolerance:
            count += 1
            if count > index_cap:
                raise PartitionError("geometric tail does not fall below tolerance within the index cap")
        start = len(all_atoms)
        all_atoms.extend(run.atom(j) for j in range(count))
        run_info.append((run, start, count))
        tails.append(run.tail(count))
        if run.accumulation not in accum:
            accum.append(run.accumulation)
    if not all_atoms:
        raise PartitionError("partition has no atoms")
    pieces = sorted([(a.lo, a.hi) for a in all_atoms] + [(t.lo, t.hi) for t in tails])
    for (lo0, hi0), (lo1, hi1) in zip(pieces, pieces[1:]):
        if lo1 < hi0 - 1e-15:
            raise PartitionError(f"overlapping atoms [{lo0}, {hi0}) and [{lo1}, {hi1})")
    covered = sum(a.length for a in all_atoms) + sum(t.length for t in tails)
    if abs(covered - 1.0) > 1e-9:
        raise PartitionError(f"atoms and tails cover length {covered}, not 1")
    if separators is None:
        seps = set()
        for i, (ra, _, _) in enumerate(run_info):
            for rb, _, _ in run_info[i + 1:]:
                if ra.accumulation == rb.accumulation:
                    continue
                ea = ra.accumulation + ra.side * ra.span
                eb = rb.accumulation + rb.side * rb.span
                if abs(ea - eb) < 1e-15:
                    seps.add(ea)
        separators = sorted(seps)
    return MarkovPartition(atoms=tuple(all_atoms), accumulation_points=tuple(accum),
                           separators=tuple(float(s) for s in separators),
                           runs=tuple(run_info), tails=tuple(tails), tolerance=tolerance,
                           half_open=half_open)


@dataclass(frozen=True)
class Branch:
    """Monotone branch from ``domain`` onto ``image``.

    With u the relative position in the domain, the relative position in the
    image is v = u + eps * s(u) for the fixed bump s.  Orientation -1 reverses
    the image.  ``targets`` is the inclusive range of destination atoms that
    tile the image.
    """
    domain: Interval
    image: Interval
    orientation: int = 1
    eps: float = 0.0
    targets: tuple | None = (0, 0)

    def __post_init__(self):
        if self.orientation not in (1, -1):
            raise PartitionError("orientation must be +1 or -1")
        if abs(self.eps) * BUMP_SUP_D1 >= 1.0:
            raise PartitionError(f"bump amplitude {self.eps} breaks monotonicity")

    @property
    def kind(self) -> str:
        return "affine" if self.eps == 0.0 else "perturbed"

    @property
    def slope(self) -> float:
        """Absolute slope of the affine part."""
        return self.image.length / self.domain.length

    @property
    def min_derivative(self) -> float:
        return self.slope * (1.0 - abs(self.eps) * BUMP_SUP_D1)

    @property
    def max_derivative(self) -> float:
        return self.slope * (1.0 + abs(self.eps) * BUMP_SUP_D1)

    def forward(self, x):
        u = (np.asarray(x, dtype=float) - self.domain.lo) / self.domain.length
        v = u + self.eps * bump(u) if self.eps else u
        dv = 1.0 + self.eps * bump_d1(u) if self.eps else np.ones_like(u)
        if self.orientation == 1:
            y = self.image.lo + self.image.length * v
        else:
            y = self.image.hi - self.image.length * v
        return y, self.orientation * self.slope * dv

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if self.orientation == 1:
            v = (y - self.image.lo) / self.image.length
        else:
            v = (self.image.hi - y) / self.image.length
        u = solve_bump(v, self.eps)
        return self.domain.lo + self.domain.length * u

    def distortion(self, grid: int = DISTORTION_GRID) -> float:
        """Upper bound for sup |g''/g'^2| of the normalised branch.

        Exact zero for affine branches.  Otherwise the grid maximum plus a
        Lipschitz slack of half the grid step.
        """
        if self.eps == 0.0:
            return 0.0
        e = abs(self.eps)
        u = np.linspace(0.0, 1.0, grid)
        vals = np.abs(self.eps * bump_d2(u)) / (1.0 + self.eps * bump_d1(u)) ** 2
        h = 1.0 / (grid - 1)
        # derivative of e s''/(1+e s')^2 is bounded by e s'''/(1-e)^2 + 2 e^2 s''^2/(1-e)^3
        lip = e * BUMP_SUP_D3 / (1 - e) ** 2 + 2 * e * e * BUMP_SUP_D2 ** 2 / (1 - e) ** 3
        return float(vals.max() + 0.5 * h * lip)


def solve_bump(v, eps: float, tol: float = 1e-15, max_iter: int = 60):
    """Solve u + eps * s(u) = v on [0, 1] by safeguarded Newton."""
    v = np.asarray(v, dtype=float)
    if eps == 0.0:
        return v.copy() if v.ndim else v
    lo = np.zeros_like(v)
    hi = np.ones_like(v)
    u = v.copy()
    for _ in range(max_iter):
        g = u + eps * bump(u) - v
        lo = np.where(g < 0, u, lo)
        hi = np.where(g > 0, u, hi)
        step = g / (1.0 + eps * bump_d1(u))
        new = u - step
        bad = (new <= lo) | (new >= hi)
        new = np.where(bad, 0.5 * (lo + hi), new)
        done = np.max(np.abs(new - u)) <= tol
        u = new
        if done:
            break
    return u


@dataclass(frozen=True, eq=False)
class MarkovMap:
    partition: MarkovPartition
    branches: tuple

    def __post_init__(self):
        if len(self.branches) != self.partition.n_atoms:
            raise PartitionError("need exactly one branch per atom")
        for j, (atom, br) in enumerate(zip(self.partition.atoms, self.branches)):
            if br.domain != atom:
                raise PartitionError(f"branch {j} domain does not match its atom")

    @cached_property
    def expansion_bound(self) -> float:
        """theta = sup |derivative of the inverse branches|."""
        return float(max(1.0 / b.min_derivative for b in self.branches))

    @cached_property
    def distortion_bound(self) -> float:
        return float(max(b.distortion() for b in self.branches))

    @property
    def is_affine(self) -> bool:
        return all(b.eps == 0.0 for b in self.branches)

    @property
    def is_onto(self) -> bool:
        return all(b.image.lo == 0.0 and b.image.hi == 1.0 for b in self.branches)


def resolve_targets(image: Interval, partition: MarkovPartition, tol: float = 1e-12):
    """Inclusive range of atom indices tiling ``image``, or None.

    The atoms (plus possibly tails) must exactly tile the image and be
    contiguous in index order.
    """
    idx = [j for j, a in enumerate(partition.atoms)
           if a.lo >= image.lo - tol and a.hi <= image.hi + tol]
    if not idx:
        return None
    idx.sort()
    if idx != list(range(idx[0], idx[-1] + 1)):
        return None
    covered = sum(partition.atoms[j].length for j in idx)
    covered += sum(t.length for t in partition.tails
                   if t.lo >= image.lo - tol and t.hi <= image.hi + tol)
    if abs(covered - image.length) > 1e-9:
        return None
    for a in partition.atoms:
        inside = a.lo < image.hi - tol and a.hi > image.lo + tol
        contained = a.lo >= image.lo - tol and a.hi <= image.hi + tol
        if inside and not contained:
            return None
    return (idx[0], idx[-1])


def make_map(partition: MarkovPartition, images: Sequence, orientations=None,
             eps=None, target_partition: MarkovPartition | None = None,
             strict: bool = True) -> MarkovMap:
    """Build a map from per-atom images; targets resolved in ``target_partition``.

    With ``strict=False`` non-Markov images are kept (targets set to None) so
    that ``check_properties`` can report them.
    """
    target_partition = target_partition or partition
    n = partition.n_atoms
    orientations = [1] * n if orientations is None else list(orientations)
    eps = [0.0] * n if eps is None else list(eps)
    branches = []
    for j in range(n):
        img = images[j] if isinstance(images[j], Interval) else Interval(*images[j])
        tg = resolve_targets(img, target_partition)
        if tg is None and strict:
            raise PartitionError(f"image of atom {j} is not a union of atoms")
        branches.append(Branch(partition.atoms[j], img, int(orientations[j]), float(eps[j]), tg))
    return MarkovMap(partition, tuple(branches))


def affine_full_branch_map(lengths: Sequence[float] | None = None,
                           runs: Sequence[GeometricRun] = (),
                           tolerance: float = 1e-9,
                           eps: Sequence[float] | None = None,
                           orientations: Sequence[int] | None = None,
                           half_open: bool = False) -> MarkovMap:
    """Map whose branches all map onto [0, 1].

    ``lengths`` lays out explicit atoms left to right starting at 0.
    """
    atoms = []
    if lengths is not None:
        edges = np.concatenate([[0.0], np.cumsum(lengths)])
        if abs(edges[-1] - 1.0) <= 1e-12:
            edges[-1] = 1.0          # cumulative rounding
        atoms = [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]
    part = build_partition(atoms, runs, tolerance, half_open=half_open)
    return make_map(part, [(0.0, 1.0)] * part.n_atoms, orientations, eps)


def eval_map(fmap: MarkovMap, x: float):
    """Return (f(x), f'(x), atom index)."""
    j = fmap.partition.locate(float(x))
    y, dy = fmap.branches[j].forward(float(x))
    return float(y), float(dy), j


def inverse_branch(fmap: MarkovMap, branch: int, y: float) -> float:
    br = fmap.branches[branch]
    if not br.image.lo <= y <= br.image.hi:
        raise ValueError(f"point {y} outside the image of branch {branch}")
    return float(br.inverse(float(y)))


@dataclass
class PropertyReport:
    verdicts: dict
    constants: dict
    tail_excluded: float = 0.0
    diagnostics: list = field(default_factory=list)

    def __getitem__(self, key):
        return self.verdicts[key]

    def holds(self, *names) -> bool:
        return all(self.verdicts[n] for n in names)


def _components(n: int, edges: Iterable[tuple]) -> int:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        parent[find(a)] = find(b)
    return len({find(i) for i in range(n)})


def check_properties(fmap: MarkovMap, ra_constant: float = 4.0, li_floor: float = 1e-3) -> PropertyReport:
    """Evaluate the structural properties of a single-state map.

    Markov images are re-resolved against the partition; distortion is the
    exact zero for affine branches and a grid bound otherwise.  Almost-onto
    is tested as connectivity of the graph linking atoms whose images overlap.
    """
    part = fmap.partition
    diag = []
    mk = True
    for j, br in enumerate(fmap.branches):
        tg = resolve_targets(br.image, part)
        if tg is None or br.targets is None or tg != tuple(br.targets):
            mk = False
            diag.append(f"atom {j}: image is not a union of atoms")
    li_const = min(b.image.length for b in fmap.branches)
    theta = fmap.expansion_bound
    dist = fmap.distortion_bound
    lengths = np.array([a.length for a in part.atoms])
    # adjacent ratio over neighbours in position order
    order = part.order
    adj = lengths[order]
    touching = np.isclose(part.highs[order][:-1], part.lows[order][1:], rtol=0, atol=1e-15)
    ratios = (adj[1:] / adj[:-1])[touching]
    ra_measured = float(max(np.max(ratios), np.max(1 / ratios))) if ratios.size else 1.0
    n_acc = len(part.accumulation_points)
    acc = sorted(part.accumulation_points)
    gaps = np.diff(acc) if n_acc > 1 else np.array([1.0])
    ra = ra_measured <= ra_constant and (n_acc == 0 or float(gaps.min()) > 0)
    lam_measured = None
    rb = True
    for run, start, count in part.runs:
        lens = lengths[start:start + count]
        if count >= 2:
            q = lens[1:] / lens[:-1]
            lam_run = float(q.max())
            lam_measured = lam_run if lam_measured is None else max(lam_measured, lam_run)
            rb = rb and lam_run < 1.0
    edges = []
    for a, ba in enumerate(fmap.branches):
        for b in range(a + 1, len(fmap.branches)):
            bb = fmap.branches[b]
            if min(ba.image.hi, bb.image.hi) - max(ba.image.lo, bb.image.lo) > 0:
                edges.append((a, b))
    ao = _components(len(fmap.branches), edges) == 1
    verdicts = {
        "Mk": mk,
        "LI": li_const >= li_floor,
        "On": fmap.is_onto,
        "Ex": theta < 1.0,
        "BD": math.isfinite(dist),
        "sBD": math.isfinite(dist) and theta < 1.0,
        "Ra": ra,
        "Rb": rb,
        "aO": ao,
    }
    constants = {
        "delta": li_const,
        "theta": theta,
        "C": dist,
        "N": n_acc,
        "lambda": lam_measured,
        "ratio_bound": ra_measured,
        "accumulation_gap": float(gaps.min()),
    }
    return PropertyReport(verdicts, constants, part.truncated_tail_length, diag)
