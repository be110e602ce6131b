"""Template-driven territory generation.

Discrete layers (faction, biome, danger, content type) come from rank-based
quantile mapping of low-frequency fields, continuous feature intensities
from higher-frequency fields, and point sets from thinned uniform
candidates with masks, quotas and per-class spacing.

Field frequencies are given in cycles per parameter-grid cell; positions in
world units (metres) with the origin at the south-west corner.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .noise import NoiseSpec, SeedBundle, derive_substream, dump_raster, fbm_raw, quantile_map, to_unit

TEMPLATE_DIR = Path(__file__).parent / "templates"
TEMPLATES = ("WindswardLike", "ShatteredMountainLike", "EdengroveLike")
CATEGORIES = ("resource", "wildlife", "enemy", "landmark")
DANGER_BANDS = ("Green", "Yellow", "Red", "Black")
DEFAULT_THRESHOLDS = (0.35, 0.60, 0.82)
WATER = -1

DEFAULT_LAYERS = {
    "faction": dict(base_frequency=0.018, octaves=4, persistence=0.45, lacunarity=2.1),
    "biome": dict(base_frequency=0.022, octaves=4, persistence=0.50, lacunarity=2.05),
    "danger": dict(base_frequency=0.024, octaves=5, persistence=0.52, lacunarity=2.15),
    "type": dict(base_frequency=0.055, octaves=6, persistence=0.50, lacunarity=2.20),
    "feature": dict(base_frequency=0.110, octaves=5, persistence=0.55, lacunarity=2.25),
    "height": dict(base_frequency=0.028, octaves=5, persistence=0.48, lacunarity=2.00),
}


def _check_hist(name: str, hist) -> np.ndarray:
    h = np.asarray(hist, dtype=np.float64)
    if h.ndim != 1 or len(h) == 0 or np.any(h <= 0) or abs(h.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name}: histogram must be positive and sum to 1")
    return h / h.sum()


@dataclass
class WorldTemplate:
    """Design priors for one territory.

    Args:
        name: template name.
        size: parameter-grid side in cells.
        extent: world side in metres.
        layers: per-layer noise parameters (see DEFAULT_LAYERS).
        factions: class names (last one is the northern neutral zone) and histogram.
        biomes, danger: default histogram plus optional per-region overrides.
        types: content-type names and global histogram.
        bands: per danger band feature ranges and rarity probabilities.
        classes: placement classes with quota, radius and masks.
    """

    name: str
    factions: dict
    biomes: dict
    danger: dict
    types: dict
    bands: dict
    classes: list
    size: int = 512
    base_size: int = 1024
    extent: float = 8000.0
    seed: int = 0
    sea_level: float = 0.30
    island: tuple = (0.6, 0.95)
    neutral_north_bias: float = 1.5
    thresholds: tuple = DEFAULT_THRESHOLDS
    layers: dict = field(default_factory=dict)
    max_attempts: int = 200_000
    note: str = ""

    def __post_init__(self):
        layers = copy.deepcopy(DEFAULT_LAYERS)
        for k, v in (self.layers or {}).items():
            layers.setdefault(k, {}).update(v)
        self.layers = layers
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not all(a < b for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("danger thresholds must be strictly increasing")
        if len(self.thresholds) != len(DANGER_BANDS) - 1:
            raise ValueError("need three danger thresholds")
        _check_hist("factions", self.factions["histogram"])
        if len(self.factions["names"]) != len(self.factions["histogram"]):
            raise ValueError("faction names and histogram differ in length")
        for key, names in (("biomes", self.biomes.get("names")), ("danger", DANGER_BANDS)):
            spec = getattr(self, key)
            hists = [spec["histogram"]] + list(spec.get("per_region", {}).values())
            for h in hists:
                if len(_check_hist(key, h)) != len(names):
                    raise ValueError(f"{key}: histogram length must match class count")
        _check_hist("types", self.types["histogram"])
        for c in self.classes:
            if c.get("quota", 0) < 0 or c.get("radius", 0) < 0:
                raise ValueError(f"class {c.get('name')}: quota and radius must be >= 0")
            if c.get("category") not in CATEGORIES:
                raise ValueError(f"class {c.get('name')}: unknown category")

    @property
    def cell(self) -> float:
        return self.extent / self.size

    @classmethod
    def from_dict(cls, d: dict) -> "WorldTemplate":
        d = {k: v for k, v in d.items() if k != "source"}
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "name": self.name, "size": self.size, "base_size": self.base_size,
            "extent": self.extent, "seed": self.seed, "sea_level": self.sea_level,
            "island": list(self.island), "neutral_north_bias": self.neutral_north_bias,
            "thresholds": list(self.thresholds), "layers": self.layers,
            "factions": self.factions, "biomes": self.biomes, "danger": self.danger,
            "types": self.types, "bands": self.bands, "classes": self.classes,
            "max_attempts": self.max_attempts, "note": self.note,
        }


def load_template(name_or_path, **overrides) -> WorldTemplate:
    """Load a shipped template by name or any template JSON by path."""
    p = Path(name_or_path)
    if not p.suffix:
        p = TEMPLATE_DIR / f"{name_or_path}.json"
    d = json.loads(p.read_text())
    d.update(overrides)
    return WorldTemplate.from_dict(d)


# --- fields ---------------------------------------------------------------------------------

def layer_field(tpl: WorldTemplate, layer: str, seed: int) -> np.ndarray:
    """Raw field in [-1, 1] at cell centres, rows south to north."""
    p = tpl.layers[layer]
    spec = NoiseSpec(p["base_frequency"], p["octaves"], p["persistence"], p["lacunarity"],
                     seed=seed)
    c = np.arange(tpl.size) + 0.5
    X, Y = np.meshgrid(c, c)
    return fbm_raw(spec, X, Y, 0.0)


def smoothstep(a: float, b: float, x):
    t = np.clip((np.asarray(x) - a) / (b - a), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def island_height(raw: np.ndarray, falloff: tuple) -> np.ndarray:
    """Unit height attenuated toward the square's edge."""
    n = raw.shape[0]
    c = (np.arange(n) + 0.5) / n * 2 - 1
    X, Y = np.meshgrid(c, c)
    r = np.hypot(X, Y)
    return to_unit(raw) * (1.0 - smoothstep(falloff[0], falloff[1], r))


def rank_unit(values: np.ndarray) -> np.ndarray:
    """Rank-normalise to [0, 1] (stable ties)."""
    v = np.asarray(values).ravel()
    out = np.empty(len(v))
    if len(v) == 1:
        out[:] = 0.5
        return out
    out[np.argsort(v, kind="stable")] = np.arange(len(v)) / (len(v) - 1)
    return out


# --- discrete layers -------------------------------------------------------------------------

def generate_discrete_layer(values: np.ndarray, regions: np.ndarray, histograms: dict,
                            default_hist, diagnostics: Optional[list] = None,
                            layer: str = "") -> np.ndarray:
    """Quantile-map ``values`` separately inside each region.

    Args:
        values: field raster.
        regions: integer region raster; negative cells are masked out.
        histograms: region id -> class fractions; missing regions use ``default_hist``.
        default_hist: fallback fractions.
        diagnostics: list receiving messages about fallbacks.

    Returns:
        Class raster with -1 on masked cells.
    """
    out = np.full(values.shape, WATER, dtype=np.int64)
    valid = regions >= 0
    fallback = []
    for r in np.unique(regions[valid]):
        sel = regions == r
        hist = histograms.get(int(r), default_hist)
        if sel.sum() < len(hist):
            fallback.append(int(r))
            continue
        out[sel] = quantile_map(values[sel], hist)
    if fallback:
        sel = np.isin(regions, fallback)
        out[sel] = quantile_map(values[sel], default_hist)
        if diagnostics is not None:
            diagnostics.append(f"{layer}: regions {fallback} smaller than class count, "
                               f"used pooled quantiles")
    return out


def generate_danger(values, thresholds=DEFAULT_THRESHOLDS) -> np.ndarray:
    """Band index by inclusive upper thresholds (Green <= t0 < Yellow <= t1 ...)."""
    return np.searchsorted(np.asarray(thresholds), np.asarray(values, dtype=np.float64),
                           side="left")


def danger_values(classes: np.ndarray, values: np.ndarray, thresholds) -> np.ndarray:
    """Continuous danger in [0, 1] that slices back to ``classes``.

    Inside each band, cells are spread over the band interval by their
    rank in ``values``.
    """
    edges = np.concatenate([[0.0], thresholds, [1.0]])
    out = np.full(classes.shape, np.nan)
    for b in range(len(edges) - 1):
        sel = classes == b
        n = int(sel.sum())
        if n == 0:
            continue
        r = np.empty(n)
        r[np.argsort(values[sel], kind="stable")] = (np.arange(n) + 0.5) / n
        out[sel] = edges[b] + r * (edges[b + 1] - edges[b])
    return out


def histogram_error(classes: np.ndarray, regions: np.ndarray, histograms: dict,
                    default_hist) -> float:
    """Largest |count - target * n| over regions and classes."""
    worst = 0.0
    valid = regions >= 0
    for r in np.unique(regions[valid]):
        sel = regions == r
        hist = np.asarray(histograms.get(int(r), default_hist))
        counts = np.bincount(classes[sel], minlength=len(hist))
        worst = max(worst, float(np.max(np.abs(counts - hist * sel.sum()))))
    return worst


# --- point placement -------------------------------------------------------------------------

class _SpacingHash:
    """Grid hash for exact minimum-distance checks."""

    def __init__(self, radius: float, points=()):
        self.r = float(radius)
        self.cells: dict = {}
        for p in points:
            self.add(p)

    def _key(self, p):
        return (int(p[0] // self.r), int(p[1] // self.r))

    def ok(self, p) -> bool:
        if self.r <= 0:
            return True
        kx, ky = self._key(p)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for q in self.cells.get((kx + dx, ky + dy), ()):
                    if (q[0] - p[0]) ** 2 + (q[1] - p[1]) ** 2 < self.r * self.r:
                        return False
        return True

    def add(self, p) -> None:
        if self.r > 0:
            self.cells.setdefault(self._key(p), []).append((float(p[0]), float(p[1])))


def place_points(mask: np.ndarray, intensity: np.ndarray, quota: int, radius: float,
                 seed: int, extent: float, existing=(), max_attempts: int = 200_000,
                 batch: int = 4096, probe: Optional[list] = None):
    """Thinned uniform candidates with masks, quota and minimum spacing.

    Candidates are uniform over the whole square and drawn in fixed-size
    batches of (x, y, u) triples, so the raw draw sequence does not depend
    on the rasters. A candidate is kept if its cell is masked in,
    u < intensity, and it is at least ``radius`` from every kept point (and
    from ``existing``).

    Returns:
        (points (k, 2), diagnostic dict).
    """
    n = mask.shape[0]
    cell = extent / n
    rng = np.random.default_rng(seed)
    grid = _SpacingHash(radius, existing)
    pts = []
    attempts = 0
    if quota > 0 and np.any(mask & (intensity > 0)):
        while len(pts) < quota and attempts < max_attempts:
            raw = rng.random((batch, 3))
            if probe is not None and len(probe) < 100:
                probe.extend(raw.ravel()[:100 - len(probe)].tolist())
            xy = raw[:, :2] * extent
            ij = np.minimum((xy / cell).astype(np.int64), n - 1)
            ok = mask[ij[:, 1], ij[:, 0]] & (raw[:, 2] < intensity[ij[:, 1], ij[:, 0]])
            for k in range(batch):
                attempts += 1
                if ok[k] and grid.ok(xy[k]):
                    grid.add(xy[k])
                    pts.append(xy[k])
                    if len(pts) >= quota:
                        break
                if attempts >= max_attempts:
                    break
    out = np.array(pts, dtype=np.float64).reshape(-1, 2)
    diag = {"placed": len(out), "quota": int(quota), "attempts": attempts,
            "shortfall": int(quota) - len(out)}
    return out, diag


def min_spacing(points) -> float:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(p) < 2:
        return float("inf")
    from scipy.spatial import cKDTree
    return float(cKDTree(p).query(p, k=2)[0][:, 1].min())


def derive_features(value: float, band: str, template: WorldTemplate, rng,
                    category: str = "enemy") -> dict:
    """Band-conditioned features from a feature-field value in [0, 1].

    hp/dps multipliers map ``value`` monotonically into the band's range;
    enemies additionally draw a rarity (boss, elite or normal).
    """
    spec = template.bands[band]
    v = float(np.clip(value, 0.0, 1.0))
    out = {"hp_mult": spec["hp"][0] + v * (spec["hp"][1] - spec["hp"][0]),
           "dps_mult": spec["dps"][0] + v * (spec["dps"][1] - spec["dps"][0])}
    if category == "enemy":
        u = rng.random()
        if u < spec.get("boss", 0.0):
            out["rarity"] = "boss"
        elif u < spec.get("boss", 0.0) + spec.get("elite", 0.0):
            out["rarity"] = "elite"
        else:
            out["rarity"] = "normal"
    return out


# --- whole world ---------------------------------------------------------------------------

@dataclass
class GeneratedWorld:
    template: WorldTemplate
    seed: int
    substreams: dict
    rasters: dict              # name -> array
    class_names: dict          # raster name -> list of class names
    points: list               # dict records
    diagnostics: dict

    def summary(self) -> dict:
        return {"template": self.template.name, "seed": self.seed,
                "substreams": {k: str(v) for k, v in self.substreams.items()},
                **{k: v for k, v in self.diagnostics.items() if k != "place_probe"}}


def _region_hists(spec: dict, region_names: list) -> dict:
    per = spec.get("per_region", {})
    return {i: per[name] for i, name in enumerate(region_names) if name in per}


def generate_world(template: WorldTemplate, master_seed: int,
                   substream_overrides: Optional[dict] = None) -> GeneratedWorld:
    """Build all rasters, then all point layers, from one master seed.

    Args:
        template: design priors.
        master_seed: user-visible seed.
        substream_overrides: optional {'layout'|'noise'|'place': seed} to
            perturb a single substream.
    """
    tpl = template
    bundle = SeedBundle(int(master_seed))
    for tag in ("layout", "noise", "place"):
        bundle.get(tag)
    bundle.substreams.update(substream_overrides or {})
    layout, noise, place = (bundle.get(t) for t in ("layout", "noise", "place"))
    diag_msgs: list = []
    n = tpl.size
    cell = tpl.cell

    # relief and island mask
    height = island_height(layer_field(tpl, "height", derive_substream(layout, "height")),
                           tpl.island)
    land = height >= tpl.sea_level
    if land.sum() < 16:
        raise ValueError("island too small: lower sea_level or change the seed")
    rows = (np.arange(n) + 0.5) / n

    # factions: the last class (neutral) takes the top quantile of a
    # north-biased score, the rest split the remaining land by their own field
    fac_names = list(tpl.factions["names"])
    fhist = _check_hist("factions", tpl.factions["histogram"])
    faction = np.full((n, n), WATER, dtype=np.int64)
    north = rank_unit(np.broadcast_to(rows[:, None], (n, n))[land])
    nval = rank_unit(layer_field(tpl, "faction", derive_substream(layout, "neutral"))[land])
    is_neutral = quantile_map(nval + tpl.neutral_north_bias * north,
                              [1.0 - fhist[-1], fhist[-1]]) == 1
    if len(fhist) < 2:
        raise ValueError("factions: need at least one faction besides the neutral class")
    fval = layer_field(tpl, "faction", derive_substream(layout, "faction"))[land]
    lab = np.full(int(land.sum()), len(fhist) - 1, dtype=np.int64)
    lab[~is_neutral] = quantile_map(fval[~is_neutral], fhist[:-1] / fhist[:-1].sum())
    faction[land] = lab

    # biome and danger inside faction regions
    bnames = list(tpl.biomes["names"])
    bval = layer_field(tpl, "biome", derive_substream(layout, "biome"))
    bh = _region_hists(tpl.biomes, fac_names)
    biome = generate_discrete_layer(bval, faction, bh, tpl.biomes["histogram"], diag_msgs, "biome")
    dval = layer_field(tpl, "danger", derive_substream(layout, "danger"))
    dh = _region_hists(tpl.danger, fac_names)
    danger = generate_discrete_layer(dval, faction, dh, tpl.danger["histogram"], diag_msgs, "danger")
    dvalue = danger_values(danger, dval, tpl.thresholds)

    tnames = list(tpl.types["names"])
    tval = layer_field(tpl, "type", derive_substream(layout, "type"))
    ctype = np.full((n, n), WATER, dtype=np.int64)
    ctype[land] = quantile_map(tval[land], tpl.types["histogram"])

    # continuous feature intensities, one field per category
    features = {}
    for cat in CATEGORIES:
        raw = layer_field(tpl, "feature", derive_substream(noise, f"feature:{cat}"))
        f = np.zeros((n, n))
        f[land] = rank_unit(raw[land])
        features[cat] = f

    rasters = {"height": height, "faction": faction, "biome": biome, "danger": danger,
               "danger_value": dvalue, "type": ctype,
               **{f"feature_{c}": v for c, v in features.items()}}
    class_names = {"faction": fac_names, "biome": bnames, "danger": list(DANGER_BANDS),
                   "type": tnames}

    hist_err = {
        "faction": histogram_error(faction, np.where(land, 0, -1), {}, fhist),
        "biome": histogram_error(biome, faction, bh, tpl.biomes["histogram"]),
        "danger": histogram_error(danger, faction, dh, tpl.danger["histogram"]),
        "type": histogram_error(ctype, np.where(land, 0, -1), {}, tpl.types["histogram"]),
    }
    danger_roundtrip = bool(np.all(generate_danger(dvalue[land], tpl.thresholds) == danger[land]))

    # points
    feat_rng = np.random.default_rng(derive_substream(place, "features"))
    probe: list = []
    points, class_diag = [], {}
    for ci, spec in enumerate(tpl.classes):
        name, cat = spec["name"], spec["category"]
        mask = land.copy()
        for key, raster, names in (("biomes", biome, bnames), ("danger", danger, list(DANGER_BANDS)),
                                   ("factions", faction, fac_names), ("types", ctype, tnames)):
            allowed = spec.get(key)
            if allowed:
                mask &= np.isin(raster, [names.index(a) for a in allowed])
        inten = features[cat] ** float(spec.get("power", 1.0))
        radius = float(spec.get("radius", 0.0))
        cseed = derive_substream(place, f"class:{name}")
        pts_c, d = [], {"placed": 0, "quota": 0, "attempts": 0, "shortfall": 0}
        regions = [None]
        if spec.get("per_region"):
            regions = [i for i, fn in enumerate(fac_names)
                       if not spec.get("factions") or fn in spec["factions"]]
        for k, reg in enumerate(regions):
            m = mask if reg is None else mask & (faction == reg)
            got, dd = place_points(m, inten, int(spec["quota"]), radius,
                                   derive_substream(cseed, f"region:{k}") if reg is not None else cseed,
                                   tpl.extent, existing=pts_c, max_attempts=tpl.max_attempts,
                                   probe=probe if ci == 0 and k == 0 else None)
            pts_c.extend(got)
            for key in d:
                d[key] += dd[key]
        pts_c = np.array(pts_c).reshape(-1, 2)
        d["min_spacing"] = min_spacing(pts_c)
        d["radius"] = radius
        if d["shortfall"] > 0:
            diag_msgs.append(f"{name}: placed {d['placed']} of {d['quota']} (spacing/mask limited)")
        class_diag[name] = d
        subs = spec.get("subclasses") or {name: 1.0}
        sub_names = sorted(subs)
        sub_p = np.array([subs[s] for s in sub_names], dtype=float)
        sub_p /= sub_p.sum()
        for x, y in pts_c:
            i, j = min(int(y / cell), n - 1), min(int(x / cell), n - 1)
            band = DANGER_BANDS[danger[i, j]]
            rec = {"x": float(x), "y": float(y), "class": name, "category": cat,
                   "subclass": sub_names[int(feat_rng.choice(len(sub_names), p=sub_p))],
                   "faction": fac_names[faction[i, j]], "biome": bnames[biome[i, j]],
                   "danger_band": band, "type": tnames[ctype[i, j]],
                   "intensity": float(features[cat][i, j])}
            rec.update(derive_features(features[cat][i, j], band, tpl, feat_rng, cat))
            points.append(rec)

    diagnostics = {"histogram_error": hist_err, "danger_roundtrip": danger_roundtrip,
                   "land_cells": int(land.sum()), "classes": class_diag,
                   "messages": diag_msgs, "place_probe": probe}
    return GeneratedWorld(tpl, int(master_seed), dict(bundle.substreams), rasters,
                          class_names, points, diagnostics)


# --- export ----------------------------------------------------------------------------------

def export_world(world: GeneratedWorld, out_dir, base: bool = False) -> dict:
    """Write one raster file per layer plus a GeoJSON point file.

    With ``base`` the rasters are upsampled (nearest) to the template's
    base raster size. Returns {name: path}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tpl = world.template
    factor = max(1, tpl.base_size // tpl.size) if base else 1
    paths = {}
    for name, arr in world.rasters.items():
        a = np.asarray(arr)
        if factor > 1:
            a = np.repeat(np.repeat(a, factor, axis=0), factor, axis=1)
        extra = {"layer": name, "template": tpl.name, "seed": world.seed,
                 "extent_m": tpl.extent, "cell_m": tpl.extent / a.shape[0],
                 "origin": "south-west corner, cell centres"}
        if name in world.class_names:
            extra["classes"] = world.class_names[name]
        p = out / f"{name}.raster"
        dump_raster(p, np.nan_to_num(a, nan=-1.0) if a.dtype.kind == "f" else a, extra=extra)
        paths[name] = p
    feats = []
    for rec in world.points:
        props = {k: v for k, v in rec.items() if k not in ("x", "y")}
        feats.append({"type": "Feature",
                      "geometry": {"type": "Point", "coordinates": [rec["x"], rec["y"]]},
                      "properties": props})
    gj = {"type": "FeatureCollection", "features": feats,
          "properties": {"template": tpl.name, "seed": world.seed, "crs": "local metres"}}
    p = out / "points.geojson"
    p.write_text(json.dumps(gj, sort_keys=True))
    paths["points"] = p
    p = out / "summary.json"
    p.write_text(json.dumps(world.summary(), sort_keys=True, indent=2, default=float))
    paths["summary"] = p
    return paths


def summary_table(world: GeneratedWorld) -> str:
    """Plain-text per-layer and per-class summary."""
    lines = [f"{world.template.name} seed={world.seed} land_cells={world.diagnostics['land_cells']}",
             f"{'layer':10s} {'counts':48s} hist_err"]
    for layer, names in world.class_names.items():
        r = world.rasters[layer]
        counts = np.bincount(r[r >= 0], minlength=len(names))
        lines.append(f"{layer:10s} {str(counts.tolist()):48s} "
                     f"{world.diagnostics['histogram_error'][layer]:.2f}")
    lines.append(f"{'class':14s} {'placed':>6s} {'quota':>6s} {'radius':>7s} {'min_dist':>9s}")
    for name, d in world.diagnostics["classes"].items():
        lines.append(f"{name:14s} {d['placed']:6d} {d['quota']:6d} {d['radius']:7.1f} "
                     f"{d['min_spacing']:9.1f}")
    return "\n".join(lines)
