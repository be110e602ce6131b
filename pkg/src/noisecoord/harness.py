"""Seeded batch runs over (method, scale, seed) grids with per-run outputs
and cross-seed aggregate tables.

Layout of a batch directory::

    <out>/<direction>/<method>/<scale>/seed_<s>/   per-run files
    <out>/aggregate.csv                            mean/std/CI per metric
    <out>/aggregate_runtime.csv                    hardware-dependent timings
    <out>/failures.csv                             runs that raised
    <out>/manifest.json                            config echo and hash

Wall-clock timings are kept in ``timing.json`` next to each run so that
every other file is byte-identical across reruns.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
import traceback
from dataclasses import asdict, dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__

DIRECTIONS = ("crowd", "action", "spawn", "worldgen")
OUT_ENV = "NOISECOORD_OUT"
TIMING_KEYS = ("runtime_ms_mean", "runtime_ms_p95", "decisions_per_second")


@dataclass
class ExperimentConfig:
    """One batch: methods x scales x seeds, optionally over a sweep grid.

    ``grid`` maps a parameter name to a list of values; a comma-joined key
    ("a,b") takes a list of tuples that vary together. Grid points are the
    Cartesian product over keys.
    """

    direction: str
    methods: list
    scales: list = field(default_factory=lambda: ["medium"])
    seed_base: int = 0
    n_seeds: int = 20
    overrides: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    out_dir: Optional[str] = None
    workers: int = 1
    keep_snapshots: bool = True
    name: str = ""

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if isinstance(self.methods, str):
            self.methods = [self.methods]
        if isinstance(self.scales, str):
            self.scales = [self.scales]
        if not self.methods:
            raise ValueError("at least one method is required")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")

    @property
    def seeds(self) -> list:
        return list(range(self.seed_base, self.seed_base + self.n_seeds))

    def identity(self) -> dict:
        """Fields that determine results (excludes output location and pool width)."""
        d = asdict(self)
        for k in ("out_dir", "workers"):
            d.pop(k)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.identity(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def output_root(self) -> Path:
        root = self.out_dir or os.environ.get(OUT_ENV) or "out"
        return Path(root)

    def grid_points(self) -> list:
        if not self.grid:
            return [{}]
        axes = []
        for key, values in self.grid.items():
            names = [k.strip() for k in key.split(",")]
            axis = []
            for v in values:
                v = v if len(names) > 1 else [v]
                if len(v) != len(names):
                    raise ValueError(f"grid entry {v!r} does not match keys {names}")
                axis.append(dict(zip(names, v)))
            axes.append(axis)
        return [dict(kv for part in combo for kv in part.items())
                for combo in itertools.product(*axes)]


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an ExperimentConfig from YAML; keyword overrides win."""
    with open(path) as fh:
        d = yaml.safe_load(fh) or {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**d)


# --- writers ------------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if math.isfinite(f) else None
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def split_timing(summary: dict) -> tuple:
    """Separate hardware-dependent keys from deterministic metrics."""
    det = {k: v for k, v in summary.items() if k not in TIMING_KEYS}
    tim = {k: v for k, v in summary.items() if k in TIMING_KEYS}
    return det, tim


# --- single runs --------------------------------------------------------------------------

def _run_crowd(method, scale, seed, overrides, run_dir, keep_snapshots):
    from .crowd import CrowdConfig, POLICY_ALIASES, run_crowd
    params = dict(overrides)
    pol_params = params.pop("policy_params", None)
    cfg = CrowdConfig.for_scale(scale, **params)
    res = run_crowd(cfg, POLICY_ALIASES.get(method, method), seed, pol_params,
                    keep_snapshots=keep_snapshots)
    keys = list(res.ticks)
    write_csv(run_dir / "series.csv", keys, zip(*[res.ticks[k] for k in keys]))
    write_json(run_dir / "bins.json", res.bins)
    if keep_snapshots:
        rows = []
        for tick, st in res.snapshots:
            for i in range(len(st.theta)):
                rows.append((tick, i, st.pos[i, 0], st.pos[i, 1], st.theta[i], st.speed[i]))
        write_csv(run_dir / "snapshots.csv", ["tick", "agent", "x", "y", "theta", "speed"], rows)
    return res.summary, res.runtime_ns, cfg.to_dict()


def _run_action(method, scale, seed, overrides, run_dir, keep_snapshots):
    from .action import SchedulerConfig, run_action_timing
    cfg = SchedulerConfig.for_scale(scale, **overrides)
    res = run_action_timing(cfg, method, seed)
    log = res.log
    write_csv(run_dir / "events.csv", ["tick", "agent", "x", "y"],
              zip(log.tick, log.agent, log.x, log.y))
    write_csv(run_dir / "series.csv", ["tick", "active", "starts", "driver"],
              zip(range(len(log.active)), log.active,
                  np.bincount(log.tick, minlength=len(log.active)), res.driver))
    return res.summary, res.runtime_ns, cfg.to_dict()


def _run_spawn(method, scale, seed, overrides, run_dir, keep_snapshots):
    from .spawn import SpawnWorldConfig, run_spawn
    cfg = SpawnWorldConfig.for_scale(scale, **overrides)
    res = run_spawn(cfg, method, seed, keep_snapshots=keep_snapshots)
    write_csv(run_dir / "spawns.csv", ["tick", "id", "x", "y"],
              ((int(t), int(i), x, y) for t, i, x, y in res.spawns))
    write_csv(run_dir / "eliminations.csv", ["tick", "id", "x", "y", "player"],
              ((int(t), int(i), x, y, int(p)) for t, i, x, y, p in res.kills))
    write_csv(run_dir / "population.csv", ["tick", "live", "proposals", "driver"],
              zip(range(len(res.live)), res.live, res.proposals, res.driver))
    if keep_snapshots:
        rows = [(t, int(i), x, y) for t, snap in sorted(res.snapshots.items()) for i, x, y in snap]
        write_csv(run_dir / "snapshots.csv", ["tick", "id", "x", "y"], rows)
    summary = dict(res.summary)
    summary.update({f"violations_{k}": v for k, v in res.violations.items()})
    return summary, res.runtime_ns, cfg.to_dict()


def _run_worldgen(method, scale, seed, overrides, run_dir, keep_snapshots):
    import time
    from .worldgen import export_world, generate_world, load_template, summary_table
    tpl = load_template(method, **overrides)
    t0 = time.perf_counter_ns()
    world = generate_world(tpl, seed)
    elapsed = time.perf_counter_ns() - t0
    export_world(world, run_dir)
    (run_dir / "summary_table.txt").write_text(summary_table(world) + "\n")
    d = world.diagnostics
    summary = {f"hist_err_{k}": v for k, v in d["histogram_error"].items()}
    summary["danger_roundtrip"] = int(d["danger_roundtrip"])
    summary["land_cells"] = d["land_cells"]
    summary["points"] = len(world.points)
    summary["shortfall_total"] = sum(c["shortfall"] for c in d["classes"].values())
    summary["spacing_violations"] = sum(int(c["min_spacing"] < c["radius"])
                                        for c in d["classes"].values())
    return summary, np.array([elapsed]), tpl.to_dict()


_RUNNERS = {"crowd": _run_crowd, "action": _run_action, "spawn": _run_spawn,
            "worldgen": _run_worldgen}


def run_dir_for(root: Path, direction: str, method: str, scale: str, seed: int) -> Path:
    return Path(root) / direction / method / scale / f"seed_{seed}"


def run_one(direction: str, method: str, scale: str, seed: int, overrides: dict,
            run_dir, config_hash: str = "", keep_snapshots: bool = True) -> dict:
    """Execute one run and write its outputs; returns the summary row."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    summary, runtime_ns, cfg_echo = _RUNNERS[direction](method, scale, seed, overrides,
                                                        run_dir, keep_snapshots)
    det, tim = split_timing(summary)
    ms = np.asarray(runtime_ns, dtype=np.float64) / 1e6
    tim.setdefault("runtime_ms_mean", float(ms.mean()))
    tim.setdefault("runtime_ms_p95", float(np.percentile(ms, 95)))
    prov = {"config_hash": config_hash, "seed": int(seed), "version": __version__,
            "direction": direction, "method": method, "scale": scale}
    write_json(run_dir / "summary.json", {"provenance": prov, "config": cfg_echo,
                                          "overrides": overrides, "metrics": det})
    write_json(run_dir / "timing.json", {"provenance": prov, "timing": tim,
                                         "label": "hardware-dependent wall clock"})
    return {**prov, **det, **tim}


def _task(args):
    direction, method, scale, seed, overrides, run_dir, chash, keep, point = args
    try:
        row = run_one(direction, method, scale, seed, overrides, run_dir, chash, keep)
        row["grid"] = point
        return row, None
    except Exception as exc:  # recorded, never aborts the batch
        return None, {"direction": direction, "method": method, "scale": scale,
                      "seed": seed, "grid": json.dumps(point, sort_keys=True),
                      "error": f"{type(exc).__name__}: {exc}",
                      "trace": traceback.format_exc(limit=3)}


def run_batch(cfg: ExperimentConfig) -> Path:
    """Run every (grid point, method, scale, seed) cell and aggregate."""
    root = cfg.output_root()
    root.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    points = cfg.grid_points()
    tasks = []
    for gi, point in enumerate(points):
        base = root if len(points) == 1 and not cfg.grid else root / f"grid_{gi}"
        ov = {**cfg.overrides, **point}
        for method in cfg.methods:
            for scale in cfg.scales:
                for seed in cfg.seeds:
                    tasks.append((cfg.direction, method, scale, seed, ov,
                                  run_dir_for(base, cfg.direction, method, scale, seed),
                                  chash, cfg.keep_snapshots, point))
    if cfg.workers > 1:
        with Pool(cfg.workers) as pool:
            results = pool.map(_task, tasks, chunksize=1)
    else:
        results = [_task(t) for t in tasks]
    rows = [r for r, _ in results if r is not None]
    failures = [f for _, f in results if f is not None]
    write_csv(root / "failures.csv", ["direction", "method", "scale", "seed", "grid", "error"],
              ([f[k] for k in ("direction", "method", "scale", "seed", "grid", "error")]
               for f in failures))
    write_aggregates(root, rows, chash, expected=len(cfg.seeds))
    if len(points) > 1 or cfg.grid:
        write_json(root / "grid.json", {f"grid_{i}": p for i, p in enumerate(points)})
    write_json(root / "manifest.json", {"config": cfg.identity(), "config_hash": chash,
                                        "version": __version__, "runs": len(tasks),
                                        "failures": len(failures)})
    return root


def sweep(cfg: ExperimentConfig, grid: Optional[dict] = None) -> list:
    """Run one sub-batch per grid point; returns their directories."""
    grid = cfg.grid if grid is None else grid
    if not grid:
        return [run_batch(cfg)]
    sub = ExperimentConfig(**{**asdict(cfg), "grid": {}})
    dirs = []
    root = cfg.output_root()
    for i, point in enumerate(ExperimentConfig(**{**asdict(cfg), "grid": grid}).grid_points()):
        c = ExperimentConfig(**{**asdict(sub), "overrides": {**cfg.overrides, **point},
                                "out_dir": str(root / f"grid_{i}")})
        d = run_batch(c)
        write_json(d / "grid_point.json", point)
        dirs.append(d)
    return dirs


# --- aggregation ------------------------------------------------------------------------

@dataclass
class AggregateRow:
    grid: str
    method: str
    scale: str
    metric: str
    mean: float
    std: float
    ci: float
    n_seeds: int
    flag: str = ""


def _scalar(v) -> Optional[float]:
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return float(v)
    if isinstance(v, (int, float, np.integer, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    return None


def aggregate(rows: list, expected: Optional[int] = None, keys: Optional[tuple] = None) -> list:
    """Mean, sample std and 1.96-SE half-width per (grid, method, scale, metric).

    Non-scalar and undefined values are skipped for that seed.
    """
    cells: dict = {}
    for r in rows:
        g = r.get("grid", {})
        gkey = json.dumps(g, sort_keys=True) if isinstance(g, dict) else str(g)
        cell = cells.setdefault((gkey, r["method"], r["scale"]), {})
        for k, v in r.items():
            if k in ("grid", "seed", "config_hash", "version", "direction", "method", "scale"):
                continue
            if keys is not None and k not in keys:
                continue
            f = _scalar(v)
            if f is not None:
                cell.setdefault(k, []).append(f)
    out = []
    for (gkey, method, scale), metrics in sorted(cells.items()):
        for name, vals in sorted(metrics.items()):
            a = np.asarray(vals)
            n = len(a)
            std = float(a.std(ddof=1)) if n > 1 else 0.0
            flag = "" if expected is None or n == expected else f"n={n}/{expected}"
            out.append(AggregateRow(gkey, method, scale, name, float(a.mean()), std,
                                    1.96 * std / math.sqrt(n), n, flag))
    return out


AGG_HEADER = ["grid", "method", "scale", "metric", "mean", "std", "ci", "n_seeds", "flag",
              "config_hash", "version"]


def write_aggregates(root: Path, rows: list, config_hash: str,
                     expected: Optional[int] = None) -> None:
    det = [{k: v for k, v in r.items() if k not in TIMING_KEYS} for r in rows]
    tim = [{k: v for k, v in r.items() if k in TIMING_KEYS or k in ("grid", "method", "scale")}
           for r in rows]
    for name, data in (("aggregate.csv", det), ("aggregate_runtime.csv", tim)):
        agg = aggregate(data, expected)
        write_csv(Path(root) / name, AGG_HEADER,
                  ([a.grid, a.method, a.scale, a.metric, a.mean, a.std, a.ci, a.n_seeds,
                    a.flag, config_hash, __version__] for a in agg))


def collect_runs(root) -> list:
    """Reload summary and timing rows from every run directory under ``root``."""
    rows = []
    for p in sorted(Path(root).rglob("summary.json")):
        d = json.loads(p.read_text())
        if "provenance" not in d:
            continue
        row = {**d["provenance"], **d["metrics"]}
        t = p.with_name("timing.json")
        if t.exists():
            row.update(json.loads(t.read_text())["timing"])
        gp = next((q / "grid_point.json" for q in p.parents
                   if (q / "grid_point.json").exists()), None)
        row["grid"] = json.loads(gp.read_text()) if gp else {}
        rows.append(row)
    return rows


def aggregate_dir(root, expected: Optional[int] = None) -> Path:
    rows = collect_runs(root)
    if not rows:
        raise FileNotFoundError(f"no run summaries under {root}")
    hashes = sorted({r.get("config_hash", "") for r in rows})
    write_aggregates(Path(root), rows, ";".join(hashes), expected)
    return Path(root) / "aggregate.csv"


def runtime_ordering(rows: list, metric: str = "runtime_ms_mean") -> list:
    """Methods sorted by mean per-tick runtime (relative ordering only)."""
    agg = {}
    for r in rows:
        if metric in r:
            agg.setdefault(r["method"], []).append(float(r[metric]))
    return sorted(((m, float(np.mean(v))) for m, v in agg.items()), key=lambda x: x[1])
