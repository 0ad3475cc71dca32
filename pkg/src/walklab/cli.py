"""Command line harness: ``walklab <subcommand> --config <path> [--out <dir>] [--threads k]``.

Each run writes ``<subcommand>.json`` (deterministic) and
``<subcommand>.timing.json`` (wall clock) into the output directory.

Exit codes: 0 ok, 1 suite criteria failed, 2 config error, 3 numeric
failure, 4 cap exceeded (partial output written).
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config
from .dimension import dd_cover, dimension_estimate, partition_moment_sum, root_cylinder_ratio
from .markov_core import WalkError
from .output import dumps, write_csv, write_json
from .renorm import feigenbaum_induced, fibonacci_model, wild_attractor_criterion
from .spectral import ConvergenceError, DegenerateVariance, mean_drift, sigma_squared
from .stability import Thresholds, asymp_verify, classify, msqs_test, perturb
from .suite import CRITERIA, run_criterion
from .walk import simulate_ensemble

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAP = 0, 1, 2, 3, 4


class CapExceeded(Exception):
    """Raised after partial output has been written."""


def _simulate(cfg: ExperimentConfig, out: Path):
    walk = cfg.walk()
    n = int(cfg.param("orbits", 10))
    horizon = int(cfg.param("horizon", 1000))
    start = int(cfg.param("start_state", 0))
    every = int(cfg.param("record_every", 1))
    times = list(range(0, horizon + 1, every))
    ens = simulate_ensemble(walk, n, horizon, cfg.seed, start, times, threads=cfg.threads)
    rows = ((i, t, int(ens.recorded[i, k])) for i in range(n) for k, t in enumerate(times))
    write_csv(out / "orbits.csv", ["orbitId", "t", "state"], rows)
    fin = ens.final - start
    return {"orbits": n, "horizon": horizon, "start_state": start,
            "mean_displacement": float(np.mean(fin)), "nudges": ens.nudges,
            "final_states": ens.final, "csv": "orbits.csv"}


def _classify(cfg, out):
    th = Thresholds(**cfg.param("thresholds", {}))
    res = classify(cfg.walk(), int(cfg.param("ensemble", 1000)), int(cfg.param("horizon", 100_000)),
                   cfg.seed, th, int(cfg.param("start_state", 0)), cfg.threads)
    return asdict(res)


def _drift(cfg, out):
    walk = cfg.walk()
    bins = int(cfg.param("bins", 1024))
    est = mean_drift(walk, bins)
    body = {"M": est.M, "error": est.error, "bins": bins, "tail_mass": est.tail_mass}
    try:
        sig = sigma_squared(walk, int(cfg.param("depth_max", 16)), bins)
        body.update(sigma2=sig.sigma2, sigma2_table=sig.table, sigma2_method=sig.method)
    except DegenerateVariance as exc:
        body.update(sigma2=0.0, sigma2_note=str(exc))
    return body


def _dimension(cfg, out):
    walk = cfg.walk()
    depths = cfg.param("depths", [4, 6, 8, 10, 12, 14])
    ests = dimension_estimate(walk, int(cfg.param("start_state", 0)), int(cfg.param("floor", 0)),
                              depths, int(cfg.param("cap", 10 ** 6)))
    rows = [(e.depth, e.beta, e.hd_lower, e.hd_upper, e.family_size, e.partial) for e in ests]
    write_csv(out / "dimension.csv", ["depth", "beta", "hd_lower", "hd_upper", "size", "partial"], rows)
    body = {"table": [asdict(e) for e in ests], "csv": "dimension.csv"}
    if any(e.partial for e in ests):
        raise CapExceeded(body)
    return body


def _partner(cfg):
    F = cfg.walk()
    if "partner" in cfg.raw:
        return F, cfg.walk("partner")
    return F, perturb(F, cfg.schedule, cfg.seed)


def _perturb(cfg, out):
    F = cfg.walk()
    G = perturb(F, cfg.schedule, cfg.seed)
    fit = asymp_verify(F, G, int(cfg.param("samples", 200)), cfg.seed)
    return {"schedule": asdict(cfg.schedule), "fit": asdict(fit), "perturbed_states": G.window}


def _msqs(cfg, out):
    F, G = _partner(cfg)
    res = msqs_test(F, G, int(cfg.param("basis_depth", 10)), seed=cfg.seed,
                    start_state=int(cfg.param("start_state", 0)))
    return {"alpha": res.alpha, "C": res.C, "residual": res.residual, "basis_depth": res.basis_depth,
            "exploratory": res.exploratory, "label": res.label,
            "forward": res.forward, "backward": res.backward}


def _ddcover(cfg, out):
    walk = cfg.walk()
    alphas = tuple(cfg.param("alphas", [0.5, 0.75, 1.0]))
    covers = []
    for J in cfg.param("intervals", [[0.1, 0.6]]):
        cov = dd_cover(walk, int(cfg.param("state", 0)), tuple(J), cfg.param("level"), alphas)
        ivs = [{"hull": [w.hull.lo, w.hull.hi], "cells": len(w.lo), "tail_cells": w.n_tail_cells,
                "root_index": w.root_index,
                "root_ratio": {a: root_cylinder_ratio(w, a)[1] for a in alphas if a >= 0.3}}
               for w in cov]
        covers.append({"J": list(J), "level": cov.level, "separators": cov.separators,
                       "ratios": cov.ratios, "intervals": ivs})
    return {"covers": covers}


def _momentsum(cfg, out):
    ms = partition_moment_sum(cfg.walk(), int(cfg.param("state", 0)), int(cfg.param("n", 10)),
                              float(cfg.param("eps", 0.1)), int(cfg.param("cap", 10 ** 6)))
    body = asdict(ms)
    if ms.partial:
        raise CapExceeded(body)
    return body


def _renorm(cfg, out):
    mode = cfg.param("mode", "feigenbaum")
    if mode == "feigenbaum":
        rep = feigenbaum_induced(cfg.param("c"), int(cfg.param("max_level", 8)),
                                 float(cfg.param("root_tol", 1e-10)))
        body = asdict(rep)
        write_csv(out / "renorm_levels.csv", ["k", "p", "lo", "hi", "period", "residual", "ratio"],
                  [(lv["k"], lv["p"], *lv["interval"], lv["period"], lv["residual"],
                    lv["ratio"] if lv["ratio"] is not None else "") for lv in rep.levels])
        return body
    if mode == "fibonacci":
        walk = fibonacci_model(float(cfg.param("scale", 0.5)), cfg.param("branch_spec"))
        verdict = wild_attractor_criterion(walk)
        return {"model": "illustrative", "drift_table": walk.drift.values,
                "tail_rule": walk.drift.tail_rule, "atoms": walk.base.partition.n_atoms,
                "criterion": asdict(verdict)}
    if mode == "criterion":
        return asdict(wild_attractor_criterion(cfg.walk(), int(cfg.param("bins", 1024))))
    raise ConfigError(f"unknown renorm mode {mode!r}")


def _suite(cfg, out):
    ids = [int(i) for i in cfg.param("criteria", sorted(CRITERIA))]
    unknown = [i for i in ids if i not in CRITERIA]
    if unknown:
        raise ConfigError(f"unknown criteria {unknown}")
    overrides = cfg.param("overrides", {})
    results, times = [], {}
    for i in ids:
        kw = dict(overrides.get(str(i), {}))
        if i in (3, 4):
            kw.setdefault("threads", cfg.threads)
        r = run_criterion(i, cfg.seed, **kw)
        print(r.line(), file=sys.stderr)
        results.append(r.to_json())
        times[str(i)] = r.runtime
    return {"criteria": results, "all_passed": all(r["passed"] for r in results), "_times": times}


COMMANDS = {"simulate": _simulate, "classify": _classify, "drift": _drift, "dimension": _dimension,
            "perturb": _perturb, "msqs": _msqs, "ddcover": _ddcover, "momentsum": _momentsum,
            "renorm": _renorm, "suite": _suite}


def _envelope(cmd, cfg: ExperimentConfig | None, body, status="ok"):
    env = {"schema_version": SCHEMA_VERSION, "walklab_version": __version__, "command": cmd,
           "status": status, "result": body}
    if cfg is not None:
        env.update(config_digest=cfg.digest, seed=cfg.seed)
    return env


def run(cmd: str, config_path, out_dir, threads: int | None = None) -> int:
    out = Path(out_dir)
    t0 = time.perf_counter()
    cfg = None
    code, status = EXIT_OK, "ok"
    try:
        cfg = load_config(config_path)
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads must be positive")
            cfg.threads = threads
        body = COMMANDS[cmd](cfg, out)
    except ConfigError as exc:
        body, code, status = {"error": "config", "message": str(exc)}, EXIT_CONFIG, "error"
    except CapExceeded as exc:
        body, code, status = exc.args[0], EXIT_CAP, "partial"
    except (ConvergenceError, ArithmeticError, FloatingPointError, WalkError) as exc:
        body, code, status = ({"error": "numeric", "type": type(exc).__name__, "message": str(exc)},
                              EXIT_NUMERIC, "error")
    except (ValueError, TypeError, KeyError) as exc:
        # bad parameter values surface from the library as plain ValueErrors
        body, code, status = {"error": "config", "message": str(exc)}, EXIT_CONFIG, "error"
    extra = {}
    if isinstance(body, dict) and "_times" in body:
        extra = body.pop("_times")
        if not body["all_passed"]:
            code = EXIT_FAILED
    write_json(out / f"{cmd}.json", _envelope(cmd, cfg, body, status))
    write_json(out / f"{cmd}.timing.json",
               {"wall_seconds": time.perf_counter() - t0, "finished_unix": time.time(),
                "threads": cfg.threads if cfg else None, "per_item": extra})
    if code in (EXIT_CONFIG, EXIT_NUMERIC):
        sys.stderr.write(dumps(body))
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="walklab", description="Deterministic random walk experiments.")
    p.add_argument("--version", action="version", version=f"walklab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", default="walklab-out", help="output directory")
        sp.add_argument("--threads", type=int, default=None, help="override config threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
