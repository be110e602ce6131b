"""Seeded multi-octave gradient noise fields.

Improved Perlin noise in 3D (x, y, time) with a per-stream permutation
table, octave stacking, drift/resample temporal modes, toroidal wrapping,
seed substreams and the scalar mappings (quantile, hazard, phase) used by
the simulation modules.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

# Max of sum_i w_i(x) * max_g (g . (x - c_i)) over the unit cube for the
# 16 edge gradients below (found by numerical maximisation, see tests).
PERLIN_RAW_BOUND = 1.0363538112118027

_GRAD3 = np.array(
    [
        (1, 1, 0), (-1, 1, 0), (1, -1, 0), (-1, -1, 0),
        (1, 0, 1), (-1, 0, 1), (1, 0, -1), (-1, 0, -1),
        (0, 1, 1), (0, -1, 1), (0, 1, -1), (0, -1, -1),
        (1, 1, 0), (0, -1, 1), (-1, 1, 0), (0, -1, -1),
    ],
    dtype=np.float64,
)

_MASK64 = (1 << 64) - 1


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lerp(a, b, w):
    return a + w * (b - a)


_PERM_CACHE: dict[int, np.ndarray] = {}


def permutation_table(seed: int) -> np.ndarray:
    """Doubled 512-entry permutation table for ``seed`` (cached)."""
    seed = int(seed) & _MASK64
    tab = _PERM_CACHE.get(seed)
    if tab is None:
        p = np.random.default_rng(seed).permutation(256).astype(np.int64)
        tab = np.concatenate([p, p])
        if len(_PERM_CACHE) > 256:
            _PERM_CACHE.clear()
        _PERM_CACHE[seed] = tab
    return tab


def _perlin3_table(x, y, z, perm, px: int = 0, py: int = 0):
    """Vectorised improved Perlin noise, raw (unscaled) output.

    ``px``/``py`` > 0 wrap the lattice in x/y with that many cells.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x, y, z = np.broadcast_arrays(x, y, z)
    xf, yf, zf = np.floor(x), np.floor(y), np.floor(z)
    fx, fy, fz = x - xf, y - yf, z - zf
    xi, yi, zi = xf.astype(np.int64), yf.astype(np.int64), zf.astype(np.int64)
    if px > 0:
        x0, x1 = xi % px, (xi + 1) % px
    else:
        x0, x1 = xi, xi + 1
    if py > 0:
        y0, y1 = yi % py, (yi + 1) % py
    else:
        y0, y1 = yi, yi + 1
    x0 &= 255
    x1 &= 255
    y0 &= 255
    y1 &= 255
    z0 = zi & 255
    z1 = (zi + 1) & 255

    a0, a1 = perm[x0], perm[x1]
    b00, b01 = perm[a0 + y0], perm[a0 + y1]
    b10, b11 = perm[a1 + y0], perm[a1 + y1]

    def corner(b, zc, dx, dy, dz):
        g = _GRAD3[perm[b + zc] & 15]
        return g[..., 0] * dx + g[..., 1] * dy + g[..., 2] * dz

    gx, gy, gz = fx - 1.0, fy - 1.0, fz - 1.0
    n000 = corner(b00, z0, fx, fy, fz)
    n100 = corner(b10, z0, gx, fy, fz)
    n010 = corner(b01, z0, fx, gy, fz)
    n110 = corner(b11, z0, gx, gy, fz)
    n001 = corner(b00, z1, fx, fy, gz)
    n101 = corner(b10, z1, gx, fy, gz)
    n011 = corner(b01, z1, fx, gy, gz)
    n111 = corner(b11, z1, gx, gy, gz)

    u, v, w = _fade(fx), _fade(fy), _fade(fz)
    nx00 = _lerp(n000, n100, u)
    nx10 = _lerp(n010, n110, u)
    nx01 = _lerp(n001, n101, u)
    nx11 = _lerp(n011, n111, u)
    nxy0 = _lerp(nx00, nx10, v)
    nxy1 = _lerp(nx01, nx11, v)
    return _lerp(nxy0, nxy1, w)


def perlin3(x, y, t, seed: int):
    """Improved Perlin noise at (x, y, t), rescaled into [-1, 1].

    Accepts scalars or arrays (broadcast). Zero at integer lattice points.
    """
    out = _perlin3_table(x, y, t, permutation_table(seed)) / PERLIN_RAW_BOUND
    out = np.clip(out, -1.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class NoiseSpec:
    """Parameters of one octave-stacked field."""

    base_frequency: float = 0.01
    octaves: int = 4
    persistence: float = 0.5
    lacunarity: float = 2.0
    offsets: tuple = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        self.octaves = int(self.octaves)
        self.offsets = tuple(float(o) for o in self.offsets)
        self.seed = int(self.seed) & _MASK64
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if not (0.0 < self.persistence <= 1.0):
            raise ValueError("persistence must be in (0, 1]")
        if self.lacunarity <= 1.0:
            raise ValueError("lacunarity must be > 1")
        if self.base_frequency <= 0.0:
            raise ValueError("base_frequency must be > 0")
        if len(self.offsets) != 3:
            raise ValueError("offsets must have three components")

    @property
    def amplitude_norm(self) -> float:
        return float(sum(self.persistence ** k for k in range(self.octaves)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["offsets"] = list(self.offsets)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**d)

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def octave_frequencies(spec: NoiseSpec, period: Optional[float] = None):
    """Per-octave (frequency, lattice period) pairs.

    On a torus each octave frequency snaps to the nearest value giving an
    integer number of lattice cells across ``period``.
    """
    out = []
    for k in range(spec.octaves):
        fk = spec.base_frequency * spec.lacunarity ** k
        if period is None:
            out.append((fk, 0))
        else:
            cells = max(1, int(round(period * fk)))
            out.append((cells / period, cells))
    return out


def fbm_raw(spec: NoiseSpec, x, y, t, period: Optional[float] = None,
            offsets: Optional[Sequence[float]] = None):
    """Normalised octave sum of ``spec`` at (x, y, t), in [-1, 1]."""
    phx, phy, pht = spec.offsets if offsets is None else offsets
    perm = permutation_table(spec.seed)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    tz = np.asarray(t, dtype=np.float64) + pht
    total = 0.0
    amp = 1.0
    for fk, cells in octave_frequencies(spec, period):
        total = total + amp * _perlin3_table(fk * x + phx, fk * y + phy, tz,
                                             perm, cells, cells)
        amp *= spec.persistence
    out = np.clip(total / (spec.amplitude_norm * PERLIN_RAW_BOUND), -1.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class FieldSampler:
    """Evaluator for one field with a temporal mode and boundary mode.

    Args:
        spec: octave stack parameters.
        mode: "drift" (phase advances by ``v_drift`` per tick) or
            "resample" (offsets re-drawn every ``t_cycle`` ticks).
        v_drift: phase units per tick in drift mode.
        t_cycle: cycle length in resample mode.
        period: torus side length, or None for an unbounded plane.
    """

    spec: NoiseSpec
    mode: str = "drift"
    v_drift: float = 0.0
    t_cycle: int = 600
    period: Optional[float] = None
    current_phase: float = 0.0
    tick: int = 0
    _offsets: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in ("drift", "resample"):
            raise ValueError(f"unknown temporal mode {self.mode!r}")
        if self.mode == "resample" and self.t_cycle < 1:
            raise ValueError("t_cycle must be >= 1")
        if self._offsets is None:
            self._offsets = self._cycle_offsets(self.cycle_index)

    @property
    def cycle_index(self) -> int:
        return self.tick // self.t_cycle if self.mode == "resample" else 0

    @property
    def offsets(self) -> tuple:
        return self._offsets

    def _cycle_offsets(self, cycle: int) -> tuple:
        if self.mode != "resample":
            return self.spec.offsets
        rng = np.random.default_rng([self.spec.seed, int(cycle)])
        d = rng.uniform(0.0, 256.0, size=3)
        return tuple(float(a + b) for a, b in zip(self.spec.offsets, d))

    def advance(self, ticks: int = 1) -> "FieldSampler":
        """Move forward ``ticks`` ticks (in place); returns self."""
        if ticks < 0:
            raise ValueError("ticks must be >= 0")
        old_cycle = self.cycle_index
        self.tick += int(ticks)
        if self.mode == "drift":
            self.current_phase += self.v_drift * ticks
        elif self.cycle_index != old_cycle:
            self._offsets = self._cycle_offsets(self.cycle_index)
        return self

    def sample(self, x, y):
        """Field value in [-1, 1] at positions (x, y) for the current tick."""
        return fbm_raw(self.spec, x, y, self.current_phase, self.period,
                       self._offsets)

    def sample_unit(self, x, y):
        return to_unit(self.sample(x, y))


def fbm(sampler: FieldSampler, x, y, t: Optional[int] = None):
    """Evaluate ``sampler`` at (x, y).

    If ``t`` is given it must be the sampler's tick or a tick reachable by
    the same temporal rule; the sampler is not mutated.
    """
    if t is None or t == sampler.tick:
        return sampler.sample(x, y)
    if sampler.mode == "drift":
        phase = sampler.current_phase + sampler.v_drift * (t - sampler.tick)
        return fbm_raw(sampler.spec, x, y, phase, sampler.period,
                       sampler.offsets)
    offs = sampler._cycle_offsets(int(t) // sampler.t_cycle)
    return fbm_raw(sampler.spec, x, y, sampler.current_phase,
                   sampler.period, offs)


def to_unit(n):
    """Map [-1, 1] to [0, 1] via (n + 1) / 2, clamped."""
    out = np.clip((np.asarray(n, dtype=np.float64) + 1.0) * 0.5, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


# --- seed substreams -------------------------------------------------------

def fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * 0x100000001B3) & _MASK64
    return h


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class SeedBundle:
    """Master seed plus memoised per-tag substream seeds."""

    master_seed: int
    substreams: dict = field(default_factory=dict)

    def get(self, tag: str) -> int:
        if tag not in self.substreams:
            self.substreams[tag] = derive_substream(self, tag)
        return self.substreams[tag]

    def rng(self, tag: str) -> np.random.Generator:
        return np.random.default_rng(self.get(tag))


def derive_substream(bundle, tag: str) -> int:
    """64-bit seed = splitmix64(master XOR fnv1a64(tag)).

    This function is part of the on-disk reproducibility contract and
    must not change.
    """
    if not tag:
        raise ValueError("tag must be nonempty")
    master = bundle.master_seed if isinstance(bundle, SeedBundle) else bundle
    return splitmix64((int(master) & _MASK64) ^ fnv1a64(tag))


# --- scalar mappings -------------------------------------------------------

def quantile_map(values, fractions) -> np.ndarray:
    """Rank-based binning of ``values`` into classes with given fractions.

    Values are ranked with a stable sort (ties broken by index) and class c
    receives ranks in [round(F_{c-1} n), round(F_c n)), F the cumulative
    fractions.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    fr = np.asarray(fractions, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("values must be nonempty")
    if fr.size == 0 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    n = v.size
    bounds = np.floor(np.cumsum(fr) * n + 0.5).astype(np.int64)
    bounds[-1] = n
    order = np.argsort(v, kind="stable")
    rank_class = np.searchsorted(bounds, np.arange(n), side="right")
    out = np.empty(n, dtype=np.int64)
    out[order] = rank_class
    return out


def hazard_rate(u, lam0: float, eps: float):
    return lam0 * (eps + (1.0 - eps) * np.asarray(u, dtype=np.float64))


def hazard_map(u, lam0: float, eps: float, dt: float = 1.0):
    """Activation probability 1 - exp(-lambda dt) with floored rate."""
    if not (0.0 <= eps < 1.0):
        raise ValueError("eps must be in [0, 1)")
    p = -np.expm1(-hazard_rate(u, lam0, eps) * dt)
    return float(p) if np.ndim(p) == 0 else p


def phase_map(u, t_cycle: int):
    """Phase bin min(floor(u T), T - 1)."""
    if t_cycle < 1:
        raise ValueError("t_cycle must be >= 1")
    tau = np.minimum(np.floor(np.asarray(u, dtype=np.float64) * t_cycle),
                     t_cycle - 1)
    tau = np.maximum(tau, 0).astype(np.int64)
    return int(tau) if np.ndim(tau) == 0 else tau


# --- raster io -------------------------------------------------------------

def sample_raster(sampler: FieldSampler, width: int, height: int,
                  extent: Optional[float] = None) -> np.ndarray:
    """Row-major raster of field values at cell centres.

    Row 0 is the southern edge. ``extent`` defaults to ``width`` cells of
    unit size.
    """
    extent = float(width if extent is None else extent)
    cell = extent / width
    xs = (np.arange(width) + 0.5) * cell
    ys = (np.arange(height) + 0.5) * cell
    X, Y = np.meshgrid(xs, ys)
    return sampler.sample(X, Y)


def dump_raster(path, data: np.ndarray, t: float = 0.0, spec_hash: str = "",
                extra: Optional[dict] = None) -> None:
    """Write one text header line then raw little-endian values."""
    data = np.asarray(data)
    dtype = "float64" if data.dtype.kind == "f" else "int32"
    arr = data.astype("<f8" if dtype == "float64" else "<i4")
    header = {"width": int(arr.shape[1]), "height": int(arr.shape[0]),
              "t": float(t), "spec": spec_hash, "dtype": dtype,
              "order": "row-major, row 0 = south"}
    if extra:
        header.update(extra)
    line = "# " + json.dumps(header, sort_keys=True) + "\n"
    with open(path, "wb") as fh:
        fh.write(line.encode())
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_raster(path):
    """Inverse of :func:`dump_raster`; returns (array, header dict)."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[2:nl].decode())
    dt = "<f8" if header.get("dtype", "float64") == "float64" else "<i4"
    arr = np.frombuffer(raw[nl + 1:], dtype=dt).reshape(
        header["height"], header["width"])
    return arr.copy(), header
