import json
from pathlib import Path

import pytest

from walklab.cli import main
from walklab.config import ConfigError, build_walk, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_cli(cmd, cfg, out, *extra):
    if isinstance(cfg, dict):
        path = out.parent / f"{out.name}-cfg.json"
        path.write_text(json.dumps(cfg))
        cfg = path
    code = main([cmd, "--config", str(cfg), "--out", str(out), *extra])
    return code, json.loads((out / f"{cmd}.json").read_text())


@pytest.mark.slow
def test_classify_shipped_config(tmp_path):
    code, doc = run_cli("classify", CONFIGS / "classify_symmetric.json", tmp_path / "o")
    assert code == 0
    assert doc["result"]["verdict"] == "recurrent"
    assert doc["seed"] == 2024 and doc["schema_version"] == 1


def test_drift_shipped_config(tmp_path):
    code, doc = run_cli("drift", CONFIGS / "drift_thirds.json", tmp_path / "o")
    assert code == 0
    assert abs(doc["result"]["M"]) < 1e-9


def test_missing_seed_is_config_error(tmp_path, capsys):
    code, doc = run_cli("drift", {"walk": {"library": "symmetric"}}, tmp_path / "o")
    assert code == 2
    assert doc["status"] == "error" and doc["result"]["error"] == "config"
    assert "seed" in capsys.readouterr().err


def test_invalid_json_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, doc = run_cli("drift", bad, tmp_path / "o")
    assert code == 2 and "JSON" in doc["result"]["message"]


def test_unknown_library_walk(tmp_path):
    code, _ = run_cli("drift", {"seed": 1, "walk": {"library": "nope"}}, tmp_path / "o")
    assert code == 2


def test_parse_config_validation():
    with pytest.raises(ConfigError):
        parse_config({"seed": -1})
    with pytest.raises(ConfigError):
        parse_config({"seed": 1, "version": 9})
    with pytest.raises(ConfigError):
        parse_config({"seed": 1, "threads": 0})
    assert parse_config({"seed": 3, "threads": 2}).threads == 2


def test_state_window_enforced():
    spec = {"map": {"lengths": [0.5, 0.5]}, "drift": {"explicit": [1, -1], "states": {"9": [1, -2]}},
            "stateWindow": [-4, 4]}
    with pytest.raises(ConfigError):
        build_walk(spec)
    spec["stateWindow"] = [-10, 10]
    assert build_walk(spec).drift.at(9) == (1, -2)


def test_simulate_byte_identical_across_runs_and_threads(tmp_path):
    cfg = {"seed": 11, "walk": {"library": "negative"}, "params": {"orbits": 8, "horizon": 50}}
    outs = []
    for i, threads in enumerate(("1", "1", "3")):
        out = tmp_path / f"o{i}"
        code, _ = run_cli("simulate", cfg, out, "--threads", threads)
        assert code == 0
        outs.append(((out / "simulate.json").read_bytes(), (out / "orbits.csv").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_classify_byte_identical_across_threads(tmp_path):
    cfg = {"seed": 5, "walk": {"library": "positive"}, "params": {"ensemble": 64, "horizon": 500}}
    a = tmp_path / "a"
    b = tmp_path / "b"
    run_cli("classify", cfg, a, "--threads", "1")
    run_cli("classify", cfg, b, "--threads", "4")
    assert (a / "classify.json").read_bytes() == (b / "classify.json").read_bytes()


@pytest.mark.parametrize("cmd,config,artifact", [
    ("dimension", "dimension_negative.json", "dimension.csv"),
    ("renorm", "renorm_feigenbaum.json", "renorm_levels.csv"),
    ("perturb", "perturb_negative.json", None),
    ("msqs", "msqs_positive.json", None),
    ("ddcover", "ddcover_two_sided.json", None),
    ("momentsum", "momentsum_doubling.json", None),
    ("renorm", "renorm_fibonacci.json", None),
])
def test_subcommands_produce_output(tmp_path, cmd, config, artifact):
    out = tmp_path / "o"
    code, doc = run_cli(cmd, CONFIGS / config, out)
    assert code == 0 and doc["status"] == "ok"
    assert (out / f"{cmd}.timing.json").exists()
    if artifact:
        assert (out / artifact).read_text().count("\n") > 1


def test_numeric_failure_exit_code(tmp_path):
    cfg = {"seed": 1, "params": {"mode": "feigenbaum", "c": -2.5}}
    code, doc = run_cli("renorm", cfg, tmp_path / "o")
    assert code == 2 and doc["status"] == "error"


def test_cap_exceeded_writes_partial(tmp_path):
    cfg = {"seed": 1, "walk": {"library": "symmetric"}, "params": {"depths": [4, 12], "cap": 100}}
    code, doc = run_cli("dimension", cfg, tmp_path / "o")
    assert code == 4 and doc["status"] == "partial"
    assert (tmp_path / "o" / "dimension.csv").exists()
