import json

import pytest

import gaborprop
from gaborprop.cli import ExperimentConfig, ConfigError, load_config, run, validate_config


def _report(out, cmd):
    return json.loads((out / f"{cmd}.json").read_text())


def test_hp_check_wave(tmp_path, capsys):
    assert run(["hp-check", "--operator", "wave", "--xi-range", "10", "--points", "512", "--out", str(tmp_path)]) == 0
    res = _report(tmp_path, "hp-check")["results"]
    assert res["holds"] is True and res["C"] == 0
    assert json.loads(capsys.readouterr().out)["holds"] is True


def test_hp_check_backward_heat_reports_failure(tmp_path):
    assert run(["hp-check", "--operator", "backward-heat", "--out", str(tmp_path)]) == 0
    assert _report(tmp_path, "hp-check")["results"]["holds"] is False


def test_minimal_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"operator": "wave"}')
    cfg = load_config(str(p))
    assert cfg == ExperimentConfig(operator="wave")
    assert validate_config(cfg) == []


def test_odd_samples_and_nyquist_listed_together():
    cfg = ExperimentConfig(samples=255, extent=16.0, beta=200.0)
    problems = validate_config(cfg, "frame")
    assert any(p == "samples_per_axis must be even" for p in problems)
    cfg = ExperimentConfig(samples=256, extent=16.0, beta=9.0)
    problems = validate_config(cfg, "frame")
    # N / (2 L) = 256 / 32 = 8
    assert any("Nyquist" in p and "8" in p for p in problems)


def test_parse_error_has_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "operator": "wave",\n  "t": ,\n}')
    with pytest.raises(ConfigError, match=r"bad.json:3:8"):
        load_config(str(p))
    assert run(["solve", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_unknown_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"operator": "wave", "colour": 1, "zz": 2}')
    with pytest.raises(ConfigError, match="colour, zz"):
        load_config(str(p))


def test_usage_errors(tmp_path, capsys):
    assert run(["frobnicate"]) == 2
    assert run(["solve", "--no-such-flag"]) == 2
    assert run(["solve", "--samples", "255", "--out", str(tmp_path)]) == 2
    assert "samples_per_axis must be even" in capsys.readouterr().err


def test_numerical_failure_exit(tmp_path):
    # the whole diagonal falls below a threshold of 10
    assert run(["solve", "--operator", "heat", "--t", "0.25", "--threshold", "10", "--out", str(tmp_path)]) == 3


def test_deterministic_and_self_describing(tmp_path):
    args = ["symbol", "--operator", "klein-gordon:1", "--t", "0.5", "--points", "64", "--emit", "both",
            "--out", str(tmp_path)]
    assert run(args) == 0
    rep = json.loads((tmp_path / "symbol.json").read_text())
    first = {name: (tmp_path / name).read_bytes() for name in ["symbol.json", *rep["artifacts"]]}
    assert run(args) == 0
    assert all((tmp_path / name).read_bytes() == data for name, data in first.items())
    assert rep["version"] == gaborprop.__version__
    assert rep["config"]["operator"] == "klein-gordon:1" and rep["config"]["t"] == 0.5
    assert len(rep["artifacts"]) >= 2
    assert (tmp_path / "symbol.timings.json").exists()


def test_decay_fit_genheat(tmp_path):
    assert run(["decay-fit", "--operator", "genheat:2", "--t", "0.5", "--out", str(tmp_path)]) == 0
    res = _report(tmp_path, "decay-fit")["results"]
    assert 1.18 <= res["r"] <= 1.48
    assert {"operator", "t", "lattice", "C", "eps", "r", "residual", "usable_range", "nu_estimate",
            "predicted_r"} <= set(res)


def test_solve_wave(tmp_path):
    assert run(["solve", "--operator", "wave", "--t", "1", "--threshold", "0", "--out", str(tmp_path)]) == 0
    assert _report(tmp_path, "solve")["results"]["error"] < 1e-5
