"""Thirteen end-to-end acceptance checks plus a fast invariant suite.

Each check returns a :class:`CriterionResult`. Simulation runs are memoised
in a :class:`RunCache` so checks that share (direction, method, scale, seed)
cells reuse them.
"""

from __future__ import annotations

import filecmp
import json
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import metrics
from .noise import SeedBundle, derive_substream

N_SEEDS = 20
VICSEK_SEEDS = 3


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail}"


class RunCache:
    """Memoised simulation summaries keyed by (direction, method, scale, seed)."""

    def __init__(self, n_seeds: int = N_SEEDS):
        self.n_seeds = n_seeds
        self._store: dict = {}

    def get(self, direction: str, method: str, scale: str, seed: int) -> dict:
        key = (direction, method, scale, seed)
        if key not in self._store:
            self._store[key] = self._run(direction, method, scale, seed)
        return self._store[key]

    def series(self, direction: str, method: str, scale: str, metric: str,
               seeds: Optional[list] = None) -> np.ndarray:
        seeds = range(self.n_seeds) if seeds is None else seeds
        return np.array([self.get(direction, method, scale, s)[metric] for s in seeds],
                        dtype=np.float64)

    @staticmethod
    def _run(direction, method, scale, seed) -> dict:
        if direction == "crowd":
            from .crowd import CrowdConfig, run_crowd
            res = run_crowd(CrowdConfig.for_scale(scale), method, seed, keep_snapshots=False)
            return dict(res.summary)
        if direction == "action":
            from .action import SchedulerConfig, run_action_timing
            return dict(run_action_timing(SchedulerConfig.for_scale(scale), method, seed).summary)
        if direction == "spawn":
            from .spawn import SpawnWorldConfig, run_spawn
            res = run_spawn(SpawnWorldConfig.for_scale(scale), method, seed, keep_snapshots=False)
            out = dict(res.summary)
            out["violations"] = dict(res.violations)
            return out
        raise ValueError(direction)


def _mean_se(a) -> tuple:
    a = np.asarray(a, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0


# --- crowd ------------------------------------------------------------------------------

def crowd_coherence(cache: RunCache) -> CriterionResult:
    p, _ = _mean_se(cache.series("crowd", "perlin_dual", "medium", "S_dir@5"))
    u, _ = _mean_se(cache.series("crowd", "urw", "medium", "S_dir@5"))
    ok = p >= 0.95 and p >= u + 0.9
    return CriterionResult(1, "crowd coherence", ok,
                           f"S_dir@5 perlin_dual={p:.4f} urw={u:.4f} (need >=0.95 and >= urw+0.9)",
                           {"perlin_dual": p, "urw": u})


def crowd_smoothness(cache: RunCache) -> CriterionResult:
    j = {m: cache.series("crowd", m, "medium", "jerk_mean") for m in ("perlin_dual", "ou_heading", "urw")}
    ok = True
    parts = []
    for a, b in (("perlin_dual", "ou_heading"), ("ou_heading", "urw")):
        d = j[b] - j[a]                 # paired by seed
        md, se = _mean_se(d)
        ok &= md > 2 * se
        parts.append(f"{b}-{a}={md:.4f} (2SE={2 * se:.4f})")
    means = {m: float(v.mean()) for m, v in j.items()}
    detail = ("jerk " + " ".join(f"{m}={v:.4f}" for m, v in means.items()) + "; " + "; ".join(parts))
    return CriterionResult(2, "crowd smoothness ordering", bool(ok), detail, means)


def crowd_coverage(cache: RunCache) -> CriterionResult:
    c = {m: float(cache.series("crowd", m, "medium", "coverage").mean())
         for m in ("ou_heading", "perlin_dual", "piecewise")}
    ok = c["ou_heading"] > c["perlin_dual"] > c["piecewise"]
    return CriterionResult(3, "coverage ordering", ok,
                           " > ".join(f"{m}={v:.3f}" for m, v in c.items()), c)


def crowd_runtime(cache: RunCache, vicsek_seeds: int = VICSEK_SEEDS) -> CriterionResult:
    p = float(cache.series("crowd", "perlin_dual", "medium", "runtime_ms_mean").mean())
    v = float(cache.series("crowd", "vicsek", "medium", "runtime_ms_mean",
                           seeds=range(vicsek_seeds)).mean())
    ok = p < v / 10
    return CriterionResult(4, "runtime ordering", ok,
                           f"ms/tick perlin_dual={p:.2f} vicsek={v:.2f} ratio={v / p:.1f}x (need >10x)",
                           {"perlin_dual": p, "vicsek": v})


# --- action timing ------------------------------------------------------------------------

def action_rate(cache: RunCache) -> CriterionResult:
    p = float(cache.series("action", "perlin", "medium", "duty").mean())
    q = float(cache.series("action", "poisson", "medium", "duty").mean())
    rel = p / q - 1
    return CriterionResult(5, "action rate control", abs(rel) <= 0.15,
                           f"duty perlin={p:.4f} poisson={q:.4f} rel={rel:+.3f} (need |rel|<=0.15)",
                           {"perlin": p, "poisson": q})


def action_burstiness(cache: RunCache) -> CriterionResult:
    p = float(cache.series("action", "perlin", "medium", "fano").mean())
    s = float(cache.series("action", "sinusoid", "medium", "fano").mean())
    ok = 0.7 <= p <= 1.2 and s > 2
    return CriterionResult(6, "burstiness structure", ok,
                           f"Fano perlin={p:.3f} (need [0.7,1.2]) sinusoid={s:.3f} (need >2)",
                           {"perlin": p, "sinusoid": s})


def action_smoothness(cache: RunCache) -> CriterionResult:
    h = {m: float(cache.series("action", m, "medium", "hf_lf").mean())
         for m in ("sinusoid", "perlin", "fixed")}
    ok = h["sinusoid"] < h["perlin"] <= h["fixed"]
    return CriterionResult(7, "action smoothness ordering", ok,
                           "HF/LF " + " < ".join(f"{m}={v:.4f}" for m, v in h.items()), h)


# --- spawn ----------------------------------------------------------------------------------

SPAWN_SCALES = ("small", "medium", "large")


def spawn_coherence(cache: RunCache) -> CriterionResult:
    ok = True
    vals, parts = {}, []
    for sc in SPAWN_SCALES:
        a = float(cache.series("spawn", "perlin_a", sc, "front_coherence").mean())
        b = float(cache.series("spawn", "perlin_b", sc, "front_coherence").mean())
        ok &= 0.003 < a < 0.05 and -0.05 < b < 0.05
        vals[sc] = {"perlin_a": a, "perlin_b": b}
        parts.append(f"{sc}: A={a:+.4f} B={b:+.4f}")
    return CriterionResult(8, "spawn front coherence", bool(ok),
                           "; ".join(parts) + " (A in (0.003,0.05), B in (-0.05,0.05))", vals)


def spawn_smoothness(cache: RunCache) -> CriterionResult:
    ok = True
    vals, parts = {}, []
    for sc in ("medium", "large"):
        cv = {m: float(cache.series("spawn", m, sc, "isi_cv").mean())
              for m in ("perlin_a", "perlin_b", "poisson_disk")}
        ok &= cv["perlin_a"] < cv["poisson_disk"] and cv["perlin_b"] < cv["poisson_disk"]
        vals[sc] = cv
        parts.append(f"{sc}: A={cv['perlin_a']:.2f} B={cv['perlin_b']:.2f} PDS={cv['poisson_disk']:.2f}")
    return CriterionResult(9, "spawn ISI smoothness", bool(ok), "; ".join(parts), vals)


def spawn_safety(cache: RunCache) -> CriterionResult:
    from .spawn import POLICIES
    total = {"quota": 0, "cooldown": 0, "bounds": 0, "population": 0}
    runs = 0
    for sc in SPAWN_SCALES:
        for pol in POLICIES:
            for s in range(cache.n_seeds):
                for k, v in cache.get("spawn", pol, sc, s)["violations"].items():
                    total[k] += v
                runs += 1
    ok = sum(total.values()) == 0
    return CriterionResult(10, "controller safety", ok,
                           f"{runs} runs, violations {total}", {"runs": runs, **total})


# --- worldgen --------------------------------------------------------------------------------

def worldgen_fidelity(cache: RunCache = None, templates: Optional[dict] = None) -> CriterionResult:
    from .worldgen import export_world, generate_world, load_template
    templates = templates or {"WindswardLike": 42, "ShatteredMountainLike": 7, "EdengroveLike": 99}
    ok = True
    parts, vals = [], {}
    with tempfile.TemporaryDirectory() as tmp:
        for name, seed in templates.items():
            tpl = load_template(name)
            w1 = generate_world(tpl, seed)
            herr = max(w1.diagnostics["histogram_error"].values())
            bad_spacing = [c for c, d in w1.diagnostics["classes"].items()
                           if d["min_spacing"] < d["radius"]]
            d1, d2 = Path(tmp) / f"{name}_a", Path(tmp) / f"{name}_b"
            export_world(w1, d1)
            export_world(generate_world(load_template(name), seed), d2)
            files = sorted(p.name for p in d1.iterdir())
            same = all(filecmp.cmp(d1 / f, d2 / f, shallow=False) for f in files)
            good = herr <= 1.0 and not bad_spacing and same and w1.diagnostics["danger_roundtrip"]
            ok &= good
            vals[name] = {"hist_err": herr, "spacing_violations": len(bad_spacing),
                          "identical": same}
            parts.append(f"{name}/{seed}: hist_err={herr:.2f} spacing_bad={len(bad_spacing)} "
                         f"identical={same}")
    return CriterionResult(11, "worldgen fidelity", bool(ok), "; ".join(parts), vals)


# --- metric nulls ------------------------------------------------------------------------------

def metric_nulls(cache: RunCache = None, seed: int = 12345) -> CriterionResult:
    rng = np.random.default_rng(seed)
    vals = {}
    # Ripley K on CSR: 10^3 points on the unit torus, middle third of radii
    radii = np.linspace(0.01, 0.12, 9)
    pp = metrics.point_process_stats(rng.random((1000, 2)), radii, 1.0, torus=True)
    kmid = np.asarray(pp["K_norm"])[3:6]
    vals["K_norm_mid"] = kmid.tolist()
    # Moran's I on i.i.d. uniform points (10^4 per pattern, mean of 200 patterns)
    mi = [metrics.morans_i(metrics.region_counts(rng.random((10_000, 2)), 1.0, 8))
          for _ in range(200)]
    vals["morans_i"] = float(np.mean(mi))
    # Fano and ISI CV of a homogeneous Poisson stream with 10^5 events
    ts = np.cumsum(rng.exponential(1 / 5.0, 100_000))
    vals["fano"] = metrics.fano_factor(metrics.counts_per_tick(ts, int(ts[-1])), 60)
    vals["isi_cv"] = metrics.isi_stats(ts)["isi_cv"]
    # S_dir on uniform headings, 10^4 agents
    n = 10_000
    st = metrics.spatial_stats(rng.random((n, 2)) * 1000.0, rng.uniform(0, 2 * np.pi, n),
                               rng.random(n), [0, 10, 20], L=1000.0)
    vals["S_dir"] = float(st["S_dir"][0])
    checks = {
        "K": bool(np.all(np.abs(kmid - 1) <= 0.1)),
        "moran": abs(vals["morans_i"]) <= 0.05,
        "fano": abs(vals["fano"] - 1) <= 0.15,
        "S_dir": abs(vals["S_dir"]) <= 0.05,
        "isi_cv": abs(vals["isi_cv"] - 1) <= 0.02,
    }
    detail = (f"K/pir2 mid={np.round(kmid, 3).tolist()} I={vals['morans_i']:+.4f} "
              f"F={vals['fano']:.3f} S_dir={vals['S_dir']:+.4f} CV={vals['isi_cv']:.4f}")
    return CriterionResult(12, "metric null calibration", all(checks.values()), detail,
                           {**vals, "checks": checks})


# --- determinism --------------------------------------------------------------------------------

def _tree_identical(a: Path, b: Path, skip=("timing.json",)) -> bool:
    fa = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name not in skip)
    fb = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file() and p.name not in skip)
    return fa == fb and all(filecmp.cmp(a / f, b / f, shallow=False) for f in fa)


def determinism(cache: RunCache = None) -> CriterionResult:
    from .harness import run_one
    from .worldgen import generate_world, load_template
    from .spawn import SpawnWorldConfig, run_spawn
    cases = [("crowd", "perlin_dual", "small", {"horizon": 60}),
             ("action", "perlin", "small", {"horizon": 240}),
             ("spawn", "perlin_b", "small", {"horizon": 1200}),
             ("worldgen", "EdengroveLike", "default", {"size": 96, "extent": 1500.0})]
    results = {}
    with tempfile.TemporaryDirectory() as tmp:
        for direction, method, scale, ov in cases:
            dirs = [Path(tmp) / f"{direction}_{k}" for k in (0, 1)]
            for d in dirs:
                run_one(direction, method, scale, 3, ov, d, "determinism")
            results[direction] = _tree_identical(*dirs)
    # substream isolation
    iso = {}
    tpl = load_template("EdengroveLike", size=96, extent=1500.0)
    base = generate_world(tpl, 5)
    lay = generate_world(tpl, 5, {"layout": 777})
    plc = generate_world(tpl, 5, {"place": 777})
    iso["layout_changes_rasters"] = not np.array_equal(base.rasters["faction"], lay.rasters["faction"])
    iso["layout_keeps_place_draws"] = base.diagnostics["place_probe"] == lay.diagnostics["place_probe"]
    iso["place_keeps_rasters"] = all(np.array_equal(base.rasters[k], plc.rasters[k], equal_nan=True)
                                     for k in base.rasters)
    tags = ["layout", "noise", "place", "spawn_field", "spawn_policy", "spawn_world"]
    iso["distinct_substreams"] = len({derive_substream(9, t) for t in tags}) == len(tags)
    b = SeedBundle(9)
    iso["bundle_matches_derivation"] = all(b.get(t) == derive_substream(9, t) for t in tags)
    cfg = SpawnWorldConfig.for_scale("small", horizon=700)
    d1 = run_spawn(cfg, "uniform", 4, keep_snapshots=False).driver
    d2 = run_spawn(cfg, "perlin_a", 4, keep_snapshots=False).driver
    iso["spawn_field_independent_of_policy"] = bool(np.array_equal(d1, d2))
    ok = all(results.values()) and all(iso.values())
    detail = ("identical " + " ".join(f"{k}={v}" for k, v in results.items())
              + "; isolation " + " ".join(f"{k}={v}" for k, v in iso.items()))
    return CriterionResult(13, "determinism and substream isolation", ok, detail,
                           {"identical": results, "isolation": iso})


CRITERIA: dict = {
    1: crowd_coherence, 2: crowd_smoothness, 3: crowd_coverage, 4: crowd_runtime,
    5: action_rate, 6: action_burstiness, 7: action_smoothness,
    8: spawn_coherence, 9: spawn_smoothness, 10: spawn_safety,
    11: worldgen_fidelity, 12: metric_nulls, 13: determinism,
}


def run_criteria(numbers=None, cache: Optional[RunCache] = None,
                 report: Optional[Callable] = None) -> list:
    """Evaluate the selected criteria (all by default) in numeric order."""
    cache = cache or RunCache()
    out = []
    for n in sorted(numbers or CRITERIA):
        res = CRITERIA[n](cache)
        out.append(res)
        if report:
            report(res.line())
    return out


# --- fast invariant suite (used by `check` without --acceptance) -------------------------------

def invariant_checks() -> list:
    """Quick structural checks on small configurations; returns (name, ok, detail)."""
    from .crowd import CrowdConfig, run_crowd
    from .action import SchedulerConfig, run_action_timing
    from .spawn import POLICIES, SpawnWorldConfig, run_spawn
    from .worldgen import generate_world, load_template
    from .noise import NoiseSpec, fbm_raw, quantile_map
    out = []
    rng = np.random.default_rng(0)
    v = fbm_raw(NoiseSpec(0.05, 4, seed=3), rng.random(5000) * 100, rng.random(5000) * 100, 0.0)
    out.append(("fbm range", bool(np.all(np.abs(v) <= 1)), f"max |n|={np.abs(v).max():.3f}"))
    c = np.bincount(quantile_map(rng.random(1001), [0.2, 0.3, 0.5]), minlength=3)
    err = float(np.max(np.abs(c - np.array([0.2, 0.3, 0.5]) * 1001)))
    out.append(("quantile map histogram", err <= 1, f"max error {err:.2f} cells"))
    r = run_crowd(CrowdConfig.for_scale("small", horizon=40), "perlin_dual", 0, check=True)
    out.append(("crowd run", np.isfinite(r.summary["jerk_mean"]), f"S_dir@5={r.summary['S_dir@5']:.3f}"))
    a = run_action_timing(SchedulerConfig.for_scale("small", horizon=200), "perlin", 0, check=True)
    out.append(("action run", a.summary["n_events"] > 0, f"duty={a.summary['duty']:.3f}"))
    bad = 0
    for pol in POLICIES:
        s = run_spawn(SpawnWorldConfig.for_scale("small", horizon=700), pol, 0, keep_snapshots=False)
        bad += sum(s.violations.values())
    out.append(("spawn safety (small, all policies)", bad == 0, f"{bad} violations"))
    w = generate_world(load_template("WindswardLike", size=96, extent=1500.0), 42)
    spacing_ok = all(d["min_spacing"] >= d["radius"] for d in w.diagnostics["classes"].values())
    herr = max(w.diagnostics["histogram_error"].values())
    out.append(("worldgen invariants", spacing_ok and herr <= 1 and w.diagnostics["danger_roundtrip"],
                f"hist_err={herr:.2f} spacing_ok={spacing_ok}"))
    return out


def results_to_json(results: list) -> str:
    return json.dumps([{"number": r.number, "name": r.name, "passed": r.passed,
                        "detail": r.detail} for r in results], indent=2)
