"""JSON experiment configs: walks, maps, schedules and run parameters.

Schema (all keys optional unless noted)::

    {
      "version": 1,
      "seed": 7,                         # required
      "threads": 4,                      # default: available cores
      "walk": WALK,                      # required by most subcommands
      "partner": WALK,                   # second walk for msqs/conjugacy
      "perturb": {"C": 0.1, "lam": 0.5, "window": [-8, 8], ...},
      "params": {...}                    # subcommand parameters
    }

    WALK = {"library": "symmetric", "args": {...}}
         | {"map": MAP, "drift": DRIFT, "overrides": [{"state": 2, "map": MAP}],
            "stateWindow": [-8, 8], "name": "..."}
    MAP  = {"lengths": [0.5, 0.5]}                       # full affine branches
         | {"atoms": [[0, 0.5], [0.5, 1]], "images": [[0, 1], [0, 1]]}
           plus optional "runs": [{"accumulation": 0, "ratio": 0.5, "first": 0.5, "side": 1}],
           "orientations", "eps", "tolerance", "separators", "half_open"
    DRIFT = [1, -1]
          | {"explicit": [..], "rules": [[offset, slope], ...], "states": {"3": [..]}}
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .library import get_walk
from .markov_core import (GeometricRun, WalkError, affine_full_branch_map, build_partition,
                          make_map)
from .stability import PerturbationSchedule
from .walk import DriftFunction, RandomWalk

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "build_walk",
           "build_map", "build_schedule", "config_digest", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def config_digest(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _runs(spec):
    out = []
    for r in spec.get("runs", []):
        out.append(GeometricRun(float(r["accumulation"]), float(r["ratio"]), float(r["first"]),
                                int(r.get("side", 1))))
    return out


def build_map(spec: dict):
    if not isinstance(spec, dict):
        raise ConfigError("map spec must be an object")
    tol = float(spec.get("tolerance", 1e-9))
    runs = _runs(spec)
    half_open = bool(spec.get("half_open", False))
    if "images" not in spec:
        return affine_full_branch_map(spec.get("lengths"), runs, tol, spec.get("eps"),
                                      spec.get("orientations"), half_open)
    part = build_partition(spec.get("atoms", []), runs, tol, spec.get("separators"),
                           half_open=half_open)
    images = list(spec["images"])
    if len(images) < part.n_atoms:
        images += [images[-1]] * (part.n_atoms - len(images))
    return make_map(part, images, spec.get("orientations"), spec.get("eps"))


def _drift(spec, fmap) -> DriftFunction:
    if isinstance(spec, list):
        return DriftFunction(tuple(spec))
    if not isinstance(spec, dict):
        raise ConfigError("drift must be a list or an object")
    if "rules" in spec:
        base = DriftFunction.geometric_rule(fmap, spec.get("explicit", []), spec["rules"])
    else:
        base = DriftFunction(tuple(spec["explicit"]))
    states = tuple(sorted((int(k), tuple(int(v) for v in vals))
                          for k, vals in spec.get("states", {}).items()))
    return DriftFunction(base.values, states, base.tail_rule)


def build_walk(spec: dict) -> RandomWalk:
    if not isinstance(spec, dict):
        raise ConfigError("walk spec must be an object")
    try:
        if "library" in spec:
            return get_walk(spec["library"], **spec.get("args", {}))
        if "map" not in spec or "drift" not in spec:
            raise ConfigError("walk spec needs 'library' or both 'map' and 'drift'")
        base = build_map(spec["map"])
        drift = _drift(spec["drift"], base)
        overrides = tuple((int(o["state"]), build_map(o["map"])) for o in spec.get("overrides", []))
        window = spec.get("stateWindow")
        if window is not None:
            lo, hi = int(window[0]), int(window[1])
            used = [s for s, _ in overrides] + [s for s, _ in drift.state_values]
            if any(not lo <= s <= hi for s in used):
                raise ConfigError("per-state data outside stateWindow")
        return RandomWalk(base, drift, overrides, spec.get("name", ""))
    except ConfigError:
        raise
    except (WalkError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid walk spec: {exc}") from None


def build_schedule(spec: dict) -> PerturbationSchedule:
    try:
        kw = dict(spec)
        if "window" in kw:
            kw["window"] = tuple(int(v) for v in kw["window"])
        return PerturbationSchedule(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid perturbation schedule: {exc}") from None


@dataclass
class ExperimentConfig:
    raw: dict
    seed: int
    threads: int
    params: dict = field(default_factory=dict)
    digest: str = ""

    def walk(self, key: str = "walk") -> RandomWalk:
        if key not in self.raw:
            raise ConfigError(f"config has no '{key}' entry")
        return build_walk(self.raw[key])

    @property
    def schedule(self) -> PerturbationSchedule:
        if "perturb" not in self.raw:
            raise ConfigError("config has no 'perturb' entry")
        return build_schedule(self.raw["perturb"])

    def param(self, name, default=None):
        return self.params.get(name, default)


def parse_config(raw) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    if "seed" not in raw:
        raise ConfigError("config must set 'seed'")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    threads = raw.get("threads", os.cpu_count() or 1)
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer")
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    return ExperimentConfig(raw, seed, threads, params, config_digest(raw))


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw)
