"""Shipped example walks, addressable by name from configs."""
from __future__ import annotations

from .markov_core import GeometricRun, affine_full_branch_map, build_partition, make_map
from .walk import DriftFunction, RandomWalk

__all__ = ["WALKS", "get_walk", "available"]


def _two_branch(lengths, drift, name, half_open=False):
    fmap = affine_full_branch_map(lengths, half_open=half_open)
    return RandomWalk(fmap, DriftFunction(tuple(drift)), (), name)


def symmetric():
    """Doubling map, drift +1 on the left half and -1 on the right (M = 0)."""
    return _two_branch((0.5, 0.5), (1, -1), "symmetric")


def negative():
    """Doubling map with drift (+1, -2): M = -0.5."""
    return _two_branch((0.5, 0.5), (1, -2), "negative")


def positive():
    """Doubling map with drift (+2, -1): M = +0.5."""
    return _two_branch((0.5, 0.5), (2, -1), "positive")


def thirds_zero():
    """Branches of length 2/3 and 1/3 with drift (-1, +2): M = 0."""
    return _two_branch((2 / 3, 1 / 3), (-1, 2), "thirds-zero")


def thirds_positive():
    """Branches of length 2/3 and 1/3 with drift (+2, -1): M = 1."""
    return _two_branch((2 / 3, 1 / 3), (2, -1), "thirds-positive")


def mild_positive():
    """Branches of length 0.4 and 0.6 with drift (+2, -1): M = 0.2."""
    return _two_branch((0.4, 0.6), (2, -1), "mild-positive")


def constant_up():
    """Doubling map with drift identically +1."""
    return _two_branch((0.5, 0.5), (1, 1), "constant-up")


def geometric(tolerance: float = 1e-9):
    """Full branches on atoms [2^-(j+1), 2^-j) with drift j; M = 1."""
    fmap = affine_full_branch_map(None, [GeometricRun(0.0, 0.5, 0.5, 1)], tolerance)
    return RandomWalk(fmap, DriftFunction.geometric_rule(fmap, [], [(0, 1)]), (), "geometric")


def two_sided(tolerance: float = 1e-9):
    """Geometric runs toward 0 and toward 1 meeting at the separator 1/2.

    Left run drift -1 + j, right run drift -1: M = -0.5.
    """
    runs = [GeometricRun(0.0, 0.5, 0.25, 1), GeometricRun(1.0, 0.5, 0.25, -1)]
    fmap = affine_full_branch_map(None, runs, tolerance)
    return RandomWalk(fmap, DriftFunction.geometric_rule(fmap, [], [(-1, 1), (-1, 0)]), (), "two-sided")


def not_onto():
    """Thirds partition with images [1/3, 1], [0, 1], [0, 2/3] and drift (+1, -1, 0)."""
    part = build_partition([(0, 1 / 3), (1 / 3, 2 / 3), (2 / 3, 1)])
    fmap = make_map(part, [(1 / 3, 1.0), (0.0, 1.0), (0.0, 2 / 3)])
    return RandomWalk(fmap, DriftFunction((1, -1, 0)), (), "not-onto")


def fibonacci(scale: float = 0.5):
    from .renorm import fibonacci_model
    return fibonacci_model(scale)


WALKS = {
    "symmetric": symmetric,
    "negative": negative,
    "positive": positive,
    "thirds-zero": thirds_zero,
    "thirds-positive": thirds_positive,
    "mild-positive": mild_positive,
    "constant-up": constant_up,
    "geometric": geometric,
    "two-sided": two_sided,
    "not-onto": not_onto,
    "fibonacci": fibonacci,
}


def available():
    return sorted(WALKS)


def get_walk(name: str, **kwargs) -> RandomWalk:
    try:
        factory = WALKS[name]
    except KeyError:
        raise KeyError(f"unknown library walk {name!r}; known: {', '.join(available())}") from None
    return factory(**kwargs)
