import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisecoord.harness import (
    ExperimentConfig, aggregate, aggregate_dir, collect_runs, load_config, read_csv, run_batch,
    run_one, runtime_ordering, split_timing, sweep, write_csv,
)

TINY_CROWD = {"n_agents": 30, "horizon": 25, "snapshot_every": 5}


def _files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in ("timing.json", "aggregate_runtime.csv")}


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40))
def test_aggregate_matches_definitions(vals):
    rows = [{"method": "m", "scale": "s", "seed": i, "x": v} for i, v in enumerate(vals)]
    (a,) = aggregate(rows)
    assert a.mean == pytest.approx(np.mean(vals), rel=1e-9, abs=1e-6)
    assert a.std == pytest.approx(np.std(vals, ddof=1), rel=1e-9, abs=1e-6)
    assert a.ci == pytest.approx(1.96 * a.std / math.sqrt(len(vals)), rel=1e-9, abs=1e-6)


def test_aggregate_skips_undefined_and_flags():
    rows = [{"method": "m", "scale": "s", "seed": 0, "x": 1.0, "v": [1, 2]},
            {"method": "m", "scale": "s", "seed": 1, "x": float("nan")}]
    (a,) = aggregate(rows, expected=2)
    assert a.metric == "x" and a.n_seeds == 1 and a.flag == "n=1/2"


def test_split_timing():
    det, tim = split_timing({"a": 1, "runtime_ms_mean": 2.0})
    assert det == {"a": 1} and tim == {"runtime_ms_mean": 2.0}


def test_csv_roundtrip_keeps_full_precision(tmp_path):
    write_csv(tmp_path / "x.csv", ["a", "b"], [(0.1 + 0.2, np.int64(3))])
    (r,) = read_csv(tmp_path / "x.csv")
    assert float(r["a"]) == 0.1 + 0.2 and r["b"] == "3"


def test_config_identity_and_grid(tmp_path):
    a = ExperimentConfig("crowd", ["urw"], out_dir="x", workers=4)
    b = ExperimentConfig("crowd", ["urw"], out_dir="y", workers=1)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ExperimentConfig("crowd", ["urw"], seed_base=1).config_hash()
    g = ExperimentConfig("crowd", ["urw"], grid={"a,b": [[1, 2], [3, 4]], "c": [5, 6]})
    pts = g.grid_points()
    assert len(pts) == 4 and {"a": 3, "b": 4, "c": 5} in pts
    with pytest.raises(ValueError):
        ExperimentConfig("nope", ["x"])
    p = tmp_path / "c.yaml"
    p.write_text("direction: spawn\nmethods: [uniform]\nn_seeds: 3\n")
    c = load_config(p, n_seeds=2)
    assert c.direction == "spawn" and c.n_seeds == 2


def test_run_one_outputs(tmp_path):
    row = run_one("crowd", "perlin_dual", "small", 1, TINY_CROWD, tmp_path / "r", "h")
    names = {p.name for p in (tmp_path / "r").iterdir()}
    assert {"summary.json", "timing.json", "series.csv", "bins.json", "snapshots.csv"} <= names
    s = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert s["provenance"]["config_hash"] == "h" and "runtime_ms_mean" not in s["metrics"]
    assert "runtime_ms_mean" in row


def test_batch_serial_equals_parallel(tmp_path):
    kw = dict(direction="spawn", methods=["uniform", "perlin_b"], scales=["small"], n_seeds=2,
              overrides={"horizon": 650})
    a = run_batch(ExperimentConfig(out_dir=str(tmp_path / "a"), workers=1, **kw))
    b = run_batch(ExperimentConfig(out_dir=str(tmp_path / "b"), workers=2, **kw))
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys() and all(fa[k] == fb[k] for k in fa)
    agg = read_csv(a / "aggregate.csv")
    assert {r["method"] for r in agg} == {"uniform", "perlin_b"}
    assert all(r["n_seeds"] == "2" for r in agg)
    assert read_csv(a / "failures.csv") == []


def test_failures_are_recorded(tmp_path):
    root = run_batch(ExperimentConfig("crowd", ["urw", "not_a_policy"], ["small"], n_seeds=1,
                                      overrides=TINY_CROWD, out_dir=str(tmp_path)))
    (f,) = read_csv(root / "failures.csv")
    assert f["method"] == "not_a_policy" and "unknown" in f["error"]


def test_sweep_and_reaggregate(tmp_path):
    cfg = ExperimentConfig("crowd", ["urw"], ["small"], n_seeds=2, overrides=TINY_CROWD,
                           grid={"beta": [0.5, 0.9]}, out_dir=str(tmp_path))
    dirs = sweep(cfg)
    assert len(dirs) == 2
    assert json.loads((dirs[1] / "grid_point.json").read_text()) == {"beta": 0.9}
    before = (dirs[0] / "aggregate.csv").read_text()
    aggregate_dir(dirs[0], expected=2)
    after = read_csv(dirs[0] / "aggregate.csv")
    assert {r["metric"] for r in after} == {r["metric"] for r in read_csv_text(before)}
    rows = collect_runs(tmp_path)
    assert len(rows) == 4 and runtime_ordering(rows)[0][0] == "urw"


def read_csv_text(text):
    import csv
    import io
    return list(csv.DictReader(io.StringIO(text)))


def test_worldgen_batch(tmp_path):
    root = run_batch(ExperimentConfig("worldgen", ["EdengroveLike"], ["default"], n_seeds=1,
                                      overrides={"size": 64, "extent": 1000.0},
                                      out_dir=str(tmp_path)))
    run = root / "worldgen" / "EdengroveLike" / "default" / "seed_0"
    assert (run / "points.geojson").exists() and (run / "faction.raster").exists()


def test_aggregate_example():
    rows = [{"method": "m", "scale": "s", "seed": i, "x": v} for i, v in enumerate([1.0, 3.0])]
    (a,) = aggregate(rows)
    assert a.mean == 2.0 and a.std == pytest.approx(math.sqrt(2))


@pytest.mark.parametrize("name,n", [("sweep_agents", 4), ("sweep_perlin_scale", 3)])
def test_shipped_sweeps_expand(name, n):
    from pathlib import Path
    cfg = load_config(Path(__file__).parent.parent / "configs" / f"{name}.yaml")
    pts = cfg.grid_points()
    assert len(pts) == n and len({json.dumps(p, sort_keys=True) for p in pts}) == n


def test_shipped_configs_load():
    from pathlib import Path
    for p in sorted((Path(__file__).parent.parent / "configs").glob("*.yaml")):
        assert load_config(p).n_seeds >= 1
