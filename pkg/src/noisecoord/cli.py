"""Command-line entry point: ``noisecoord <subcommand> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import __version__
from .harness import ExperimentConfig, aggregate_dir, load_config, read_csv, run_batch, sweep

DEFAULT_METHODS = {
    "crowd": ["perlin_dual", "urw", "ou_heading"],
    "action": ["perlin", "poisson", "fixed"],
    "spawn": ["perlin_a", "perlin_b", "uniform"],
}


def parse_set(items) -> dict:
    """``["a=1", "b=[2, 3]"]`` -> ``{"a": 1, "b": [2, 3]}`` (values parsed as YAML)."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out


def _add_batch_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", action="append", help="method name (repeatable)")
    p.add_argument("--scale", action="append", help="small/medium/large (repeatable)")
    p.add_argument("--seed-base", type=int, default=None)
    p.add_argument("--n-seeds", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--config", default=None, help="YAML experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.add_argument("--no-snapshots", action="store_true")


def _batch_config(direction: str, a) -> ExperimentConfig:
    kw = {"methods": a.method, "scales": a.scale, "seed_base": a.seed_base,
          "n_seeds": a.n_seeds, "out_dir": a.out, "workers": a.workers}
    if a.no_snapshots:
        kw["keep_snapshots"] = False
    if a.config:
        cfg = load_config(a.config, **kw)
        if cfg.direction != direction:
            raise SystemExit(f"config direction {cfg.direction!r} does not match {direction!r}")
    else:
        kw = {k: v for k, v in kw.items() if v is not None}
        kw.setdefault("methods", DEFAULT_METHODS[direction])
        cfg = ExperimentConfig(direction=direction, **kw)
    cfg.overrides = {**cfg.overrides, **parse_set(a.set)}
    return cfg


def _print_aggregate(root: Path, metrics=None) -> None:
    path = root / "aggregate.csv"
    if not path.exists():
        return
    for r in read_csv(path):
        if metrics and r["metric"] not in metrics:
            continue
        print(f"{r['method']:>14} {r['scale']:>7} {r['metric']:<28} "
              f"{float(r['mean']):12.5g} +- {float(r['ci']) if r['ci'] else 0.0:.3g}")


def cmd_batch(direction: str, a) -> int:
    cfg = _batch_config(direction, a)
    root = run_batch(cfg)
    print(f"wrote {root}")
    _print_aggregate(root)
    fails = read_csv(root / "failures.csv")
    for f in fails:
        print(f"FAILED {f['method']} {f['scale']} seed={f['seed']}: {f['error'].splitlines()[-1]}",
              file=sys.stderr)
    return 1 if fails else 0


def cmd_worldgen(a) -> int:
    from .worldgen import export_world, generate_world, load_template, summary_table
    out = Path(a.out)
    ov = parse_set(a.set)
    for name in a.template or ["WindswardLike"]:
        tpl = load_template(name, **ov)
        seed = tpl.seed if a.seed is None else a.seed
        world = generate_world(tpl, seed)
        d = out / f"{tpl.name}_{seed}"
        export_world(world, d, base=a.base)
        (d / "summary_table.txt").write_text(summary_table(world) + "\n")
        print(summary_table(world))
        print(f"wrote {d}\n")
    return 0


def cmd_sweep(a) -> int:
    cfg = load_config(a.config, out_dir=a.out, workers=a.workers)
    cfg.overrides = {**cfg.overrides, **parse_set(a.set)}
    for d in sweep(cfg):
        print(f"wrote {d}")
    return 0


def cmd_aggregate(a) -> int:
    path = aggregate_dir(a.dir, a.expected)
    print(f"wrote {path}")
    _print_aggregate(Path(a.dir), a.metric)
    return 0


def cmd_check(a) -> int:
    from . import acceptance
    failed = 0
    if a.acceptance or a.only:
        nums = [int(x) for x in ",".join(a.only).split(",")] if a.only else None
        cache = acceptance.RunCache(a.n_seeds)
        res = acceptance.run_criteria(nums, cache, report=lambda s: print(s, flush=True))
        failed = sum(not r.passed for r in res)
        print(f"{len(res) - failed}/{len(res)} criteria passed")
        if a.json:
            Path(a.json).write_text(acceptance.results_to_json(res) + "\n")
    else:
        for name, ok, detail in acceptance.invariant_checks():
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}", flush=True)
            failed += not ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noisecoord",
                                description="Coherent-noise coordination experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for direction in ("crowd", "action", "spawn"):
        sp = sub.add_parser(direction, help=f"run a {direction} batch")
        _add_batch_args(sp)
    w = sub.add_parser("worldgen", help="generate worlds from templates")
    w.add_argument("--template", action="append", help="template name or JSON path (repeatable)")
    w.add_argument("--seed", type=int, default=None, help="master seed (template default)")
    w.add_argument("--out", default="out/worldgen")
    w.add_argument("--base", action="store_true", help="upsample rasters to the base raster size")
    w.add_argument("--set", action="append", metavar="KEY=VALUE", help="template override")
    s = sub.add_parser("sweep", help="run a parameter grid from a YAML config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    g = sub.add_parser("aggregate", help="recompute aggregate tables for a batch directory")
    g.add_argument("dir")
    g.add_argument("--expected", type=int, default=None, help="expected seeds per cell")
    g.add_argument("--metric", action="append", help="only print these metrics")
    c = sub.add_parser("check", help="run invariant checks or the acceptance criteria")
    c.add_argument("--acceptance", action="store_true", help="run all acceptance criteria")
    c.add_argument("--only", action="append", help="criterion numbers, e.g. 1,5,12")
    c.add_argument("--n-seeds", type=int, default=20)
    c.add_argument("--json", default=None, help="write results as JSON")
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    if a.command in DEFAULT_METHODS:
        return cmd_batch(a.command, a)
    return {"worldgen": cmd_worldgen, "sweep": cmd_sweep, "aggregate": cmd_aggregate,
            "check": cmd_check}[a.command](a)


if __name__ == "__main__":
    sys.exit(main())
