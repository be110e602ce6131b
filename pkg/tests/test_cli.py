import json

import pytest

from noisecoord.cli import build_parser, main, parse_set


def test_parse_set():
    assert parse_set(["a=1", "b=[1, 2]", "c=x", "d=0.5"]) == {"a": 1, "b": [1, 2], "c": "x", "d": 0.5}
    with pytest.raises(SystemExit):
        parse_set(["novalue"])


def test_parser_has_all_subcommands():
    p = build_parser()
    for cmd in (["crowd"], ["action"], ["spawn"], ["worldgen"], ["sweep", "--config", "x"],
                ["aggregate", "d"], ["check"]):
        assert p.parse_args(cmd).command == cmd[0]


def test_crowd_and_aggregate(tmp_path, capsys):
    out = tmp_path / "c"
    rc = main(["crowd", "--method", "urw", "--scale", "small", "--n-seeds", "2", "--out", str(out),
               "--set", "n_agents=20", "--set", "horizon=20", "--no-snapshots"])
    assert rc == 0
    assert not list(out.rglob("snapshots.csv"))
    assert main(["aggregate", str(out), "--metric", "jerk_mean"]) == 0
    assert "jerk_mean" in capsys.readouterr().out


def test_action_failure_exit_code(tmp_path):
    rc = main(["action", "--method", "bogus", "--scale", "small", "--n-seeds", "1",
               "--out", str(tmp_path), "--set", "horizon=10"])
    assert rc == 1


def test_sweep_from_config(tmp_path):
    cfg = tmp_path / "s.yaml"
    cfg.write_text("direction: action\nmethods: [poisson]\nscales: [small]\nn_seeds: 1\n"
                   "overrides: {horizon: 100, n_agents: 50}\ngrid: {lam0: [0.02, 0.04]}\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "grid_1" / "aggregate.csv").exists()


def test_worldgen_command(tmp_path, capsys):
    rc = main(["worldgen", "--template", "EdengroveLike", "--seed", "3", "--out", str(tmp_path),
               "--set", "size=64", "--set", "extent=1000"])
    assert rc == 0
    d = tmp_path / "EdengroveLike_3"
    assert json.loads((d / "summary.json").read_text())["seed"] == 3
    assert "EdengroveLike" in capsys.readouterr().out


def test_check_only_metric_nulls(tmp_path, capsys):
    rc = main(["check", "--only", "12", "--json", str(tmp_path / "r.json")])
    assert rc == 0
    res = json.loads((tmp_path / "r.json").read_text())
    assert res[0]["number"] == 12 and res[0]["passed"]
    assert "[PASS] 12" in capsys.readouterr().out


def test_check_invariants(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 6 and "[FAIL]" not in out
