"""Background crowd motion on a torus.

Agents carry a position, heading and speed. A motion policy produces
per-agent targets (heading, speed) that are blended into the state, or a
direct velocity. Includes the dual-field coherent policy and six baseline
controls.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import metrics
from .noise import FieldSampler, NoiseSpec, SeedBundle

TWO_PI = 2.0 * np.pi

DEFAULT_BINS = (0, 10, 20, 30, 40, 60, 80, 100, 140, 180, 240, 320, 420, 520)

SCALES = {
    "small": dict(n_agents=200, horizon=360, snapshot_every=5),
    "medium": dict(n_agents=1200, horizon=720, snapshot_every=10),
    "large": dict(n_agents=3200, horizon=1080, snapshot_every=15),
}

POLICIES = ("perlin_dual", "perlin_single", "urw", "ou_heading", "curl",
            "vicsek", "piecewise")

# Accepted spellings for policy names.
POLICY_ALIASES = {"ou": "ou_heading", "curl_noise": "curl"}


@dataclass
class CrowdConfig:
    """World, population and motion constants for one crowd run."""

    L: float = 1000.0
    n_agents: int = 1200
    horizon: int = 720
    dt: float = 1.0
    v_min: float = 0.6
    v_max: float = 1.4
    beta: float = 0.9
    rho: float = 0.8
    jitter: float = 0.02
    speed_update: str = "ema"  # or "ou"
    ou_beta: float = 0.9
    ou_sigma: float = 0.05
    snapshot_every: int = 10
    # field stack shared by the coherent policies
    heading_frequency: float = 0.01
    speed_frequency: float = 0.011
    octaves: int = 4
    persistence: float = 0.5
    lacunarity: float = 2.0
    drift: float = 0.002
    # metric windows
    coverage_grid: int = 50
    coverage_window: int = 60
    hf_window: int = 256
    bins: tuple = DEFAULT_BINS
    # full distance-bin statistics are pooled over at most this many
    # snapshots; the first bin always uses every snapshot
    max_full_snapshots: int = 8

    def __post_init__(self):
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")
        for name in ("beta", "rho"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.speed_update not in ("ema", "ou"):
            raise ValueError("speed_update must be 'ema' or 'ou'")
        self.bins = tuple(float(b) for b in self.bins)

    @classmethod
    def for_scale(cls, scale: str, **overrides) -> "CrowdConfig":
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}")
        kw = dict(SCALES[scale])
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bins"] = list(self.bins)
        return d

    @property
    def v_mid(self) -> float:
        return 0.5 * (self.v_min + self.v_max)


@dataclass
class AgentState:
    pos: np.ndarray      # (N, 2) in [0, L)
    theta: np.ndarray    # (N,) in [0, 2pi)
    speed: np.ndarray    # (N,)

    def copy(self) -> "AgentState":
        return AgentState(self.pos.copy(), self.theta.copy(), self.speed.copy())


# --- kinematic primitives --------------------------------------------------

def wrap_angle(a):
    """Wrap to [0, 2pi)."""
    out = np.mod(a, TWO_PI)
    # mod can return exactly 2pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def wrap_pi(a):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, TWO_PI) - np.pi


def wrap_pos(p, L: float):
    out = np.mod(p, L)
    return np.where(out >= L, 0.0, out)


def step_kinematics(state: AgentState, dt: float, L: float) -> AgentState:
    """Advance positions along headings and wrap onto the torus."""
    d = np.stack([np.cos(state.theta), np.sin(state.theta)], axis=-1)
    pos = wrap_pos(state.pos + state.speed[:, None] * d * dt, L)
    return AgentState(pos, state.theta.copy(), state.speed.copy())


def blend_heading(theta_prev, theta_target, beta: float):
    """arg(beta e^{i prev} + (1 - beta) e^{i target}) in [0, 2pi).

    A zero resultant (antipodal, beta = 0.5) keeps ``theta_prev``.
    """
    theta_prev = np.asarray(theta_prev, dtype=np.float64)
    theta_target = np.asarray(theta_target, dtype=np.float64)
    if beta == 1.0:
        return wrap_angle(theta_prev)
    if beta == 0.0:
        return wrap_angle(theta_target)
    c = beta * np.cos(theta_prev) + (1.0 - beta) * np.cos(theta_target)
    s = beta * np.sin(theta_prev) + (1.0 - beta) * np.sin(theta_target)
    tie = np.hypot(c, s) < 1e-12
    out = np.where(tie, theta_prev, np.arctan2(s, c))
    return wrap_angle(out)


def update_speed_ema(v_prev, v_target, rho: float):
    return rho * np.asarray(v_prev) + (1.0 - rho) * np.asarray(v_target)


def update_speed_ou(v_prev, v_target, beta_ou, sigma_ou, noise_draw,
                    v_min: float = -np.inf, v_max: float = np.inf):
    v = (np.asarray(v_prev) + beta_ou * (np.asarray(v_target) - v_prev)
         + sigma_ou * np.asarray(noise_draw))
    return np.clip(v, v_min, v_max)


def torus_delta(a, b, L: float):
    """Minimum-image displacement b - a on a torus of side L."""
    d = np.asarray(b) - np.asarray(a)
    return d - L * np.round(d / L)


# --- policies ----------------------------------------------------------------

class MotionPolicy:
    """Base class. ``blend`` policies return targets fed through the heading
    blend and speed update; the others set heading/speed directly."""

    name = "base"
    blend = False

    def __init__(self, cfg: CrowdConfig, seeds: SeedBundle, **params):
        self.cfg = cfg
        self.seeds = seeds
        self.params = params
        self.field_evals = 0
        self.rng_draws = 0

    def init_state(self, state: AgentState) -> None:
        pass

    def targets(self, state: AgentState, t: int):
        raise NotImplementedError

    def advance(self) -> None:
        pass

    def describe(self) -> dict:
        return {"name": self.name, **self.params}


def _field(cfg: CrowdConfig, seed: int, freq: float) -> FieldSampler:
    spec = NoiseSpec(freq, cfg.octaves, cfg.persistence, cfg.lacunarity,
                     seed=seed)
    return FieldSampler(spec, "drift", v_drift=cfg.drift, period=cfg.L)


class PerlinDual(MotionPolicy):
    """Heading and speed targets from two independent coherent fields."""

    name = "perlin_dual"
    blend = True

    def __init__(self, cfg, seeds, **params):
        super().__init__(cfg, seeds, **params)
        self.heading = _field(cfg, seeds.get("heading_field"),
                              params.get("heading_frequency", cfg.heading_frequency))
        self.speed = _field(cfg, seeds.get("speed_field"),
                            params.get("speed_frequency", cfg.speed_frequency))
        self.jitter_rng = seeds.rng("jitter")

    def targets(self, state, t):
        x, y = state.pos[:, 0], state.pos[:, 1]
        u_th = self.heading.sample_unit(x, y)
        u_v = self.speed.sample_unit(x, y)
        self.field_evals += 2 * len(x)
        self.rng_draws += len(x)
        th = TWO_PI * u_th + self.cfg.jitter * self.jitter_rng.uniform(-1, 1, len(x))
        v = self.cfg.v_min + u_v * (self.cfg.v_max - self.cfg.v_min)
        return wrap_angle(th), v

    def advance(self):
        self.heading.advance(1)
        self.speed.advance(1)


class PerlinSingle(MotionPolicy):
    """One shared field drives both heading and speed."""

    name = "perlin_single"
    blend = True

    def __init__(self, cfg, seeds, **params):
        super().__init__(cfg, seeds, **params)
        self.field = _field(cfg, seeds.get("heading_field"),
                            params.get("heading_frequency", cfg.heading_frequency))
        self.jitter_rng = seeds.rng("jitter")

    def targets_from_unit(self, u, jitter_draw=None):
        th = TWO_PI * u
        if jitter_draw is not None:
            th = th + self.cfg.jitter * jitter_draw
        v = self.cfg.v_min + u * (self.cfg.v_max - self.cfg.v_min)
        return wrap_angle(th), v

    def targets(self, state, t):
        u = self.field.sample_unit(state.pos[:, 0], state.pos[:, 1])
        self.field_evals += len(u)
        self.rng_draws += len(u)
        return self.targets_from_unit(u, self.jitter_rng.uniform(-1, 1, len(u)))

    def advance(self):
        self.field.advance(1)


class UncorrelatedRandomWalk(MotionPolicy):
    name = "urw"

    def __init__(self, cfg, seeds, sigma_theta: float = 0.4, speed=None, **kw):
        super().__init__(cfg, seeds, sigma_theta=sigma_theta, **kw)
        self.sigma = sigma_theta
        self.v = cfg.v_mid if speed is None else float(speed)
        self.rng = seeds.rng("policy")

    def targets(self, state, t):
        n = len(state.theta)
        th = state.theta + self.sigma * self.rng.standard_normal(n)
        self.rng_draws += n
        return wrap_angle(th), np.full(n, self.v)


class OUHeading(MotionPolicy):
    """Mean-reverting heading around each agent's initial heading."""

    name = "ou_heading"

    def __init__(self, cfg, seeds, beta: float = 0.9, sigma_theta: float = 0.1,
                 **kw):
        super().__init__(cfg, seeds, beta=beta, sigma_theta=sigma_theta, **kw)
        self.beta = beta
        self.sigma = sigma_theta
        self.rng = seeds.rng("policy")
        self.mu = None

    def init_state(self, state):
        self.mu = state.theta.copy()

    def targets(self, state, t):
        n = len(state.theta)
        th = (state.theta + self.beta * wrap_pi(self.mu - state.theta)
              + self.sigma * self.rng.standard_normal(n))
        self.rng_draws += n
        return wrap_angle(th), np.full(n, self.cfg.v_mid)


class CurlNoise(MotionPolicy):
    """Velocity along the rotated gradient of a drifting potential."""

    name = "curl"

    def __init__(self, cfg, seeds, frequency: float = 0.01, drift: float = 0.002,
                 h: float = 0.25, mean_speed: float = 1.0, **kw):
        super().__init__(cfg, seeds, frequency=frequency, drift=drift, **kw)
        spec = NoiseSpec(frequency, cfg.octaves, cfg.persistence,
                         cfg.lacunarity, seed=seeds.get("curl_field"))
        self.potential = FieldSampler(spec, "drift", v_drift=drift, period=cfg.L)
        self.h = h
        self.mean_speed = mean_speed

    def curl_velocity(self, x, y):
        """Raw (unscaled) velocity (d psi/dy, -d psi/dx) by central differences."""
        h = self.h
        p = self.potential
        dpx = (p.sample(x + h, y) - p.sample(x - h, y)) / (2 * h)
        dpy = (p.sample(x, y + h) - p.sample(x, y - h)) / (2 * h)
        self.field_evals += 4 * np.size(x)
        return dpy, -dpx

    def targets(self, state, t):
        vx, vy = self.curl_velocity(state.pos[:, 0], state.pos[:, 1])
        mag = np.hypot(vx, vy)
        m = mag.mean()
        scale = self.mean_speed / m if m > 0 else 0.0
        v = np.clip(mag * scale, self.cfg.v_min, self.cfg.v_max)
        th = np.where(mag > 0, np.arctan2(vy, vx), state.theta)
        return wrap_angle(th), v

    def advance(self):
        self.potential.advance(1)


class Vicsek(MotionPolicy):
    """Alignment with neighbours within R plus uniform angular noise.

    Neighbours come from a uniform grid of cells no smaller than R; each
    agent scans its 3x3 block of cells.
    """

    name = "vicsek"

    def __init__(self, cfg, seeds, R: float = 20.0, eta: float = 0.25,
                 v_const: float = 1.0, **kw):
        super().__init__(cfg, seeds, R=R, eta=eta, v_const=v_const, **kw)
        self.R = R
        self.eta = eta
        self.v_const = v_const
        self.rng = seeds.rng("policy")
        self.ncell = max(1, int(cfg.L // R))

    def neighbour_mean(self, pos, theta):
        L, R, nc = self.cfg.L, self.R, self.ncell
        cell = np.minimum((pos / (L / nc)).astype(np.int64), nc - 1)
        key = cell[:, 0] * nc + cell[:, 1]
        order = np.argsort(key, kind="stable")
        skey = key[order]
        starts = np.searchsorted(skey, np.arange(nc * nc), side="left")
        ends = np.searchsorted(skey, np.arange(nc * nc), side="right")
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        out = np.empty(len(theta))
        R2 = R * R
        offs = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1),
                (1, -1), (1, 0), (1, 1)]
        for i in range(len(theta)):
            cx, cy = cell[i]
            idx = []
            for dx, dy in offs:
                k = ((cx + dx) % nc) * nc + (cy + dy) % nc
                if ends[k] > starts[k]:
                    idx.append(order[starts[k]:ends[k]])
            idx = np.unique(np.concatenate(idx))
            d = pos[idx] - pos[i]
            d -= L * np.round(d / L)
            near = idx[(d[:, 0] ** 2 + d[:, 1] ** 2) <= R2]
            out[i] = np.arctan2(sin_t[near].sum(), cos_t[near].sum())
        return out

    def targets(self, state, t):
        n = len(state.theta)
        mean = self.neighbour_mean(state.pos, state.theta)
        th = mean + self.eta * self.rng.uniform(-0.5, 0.5, n)
        self.rng_draws += n
        return wrap_angle(th), np.full(n, self.v_const)


class PiecewiseConstant(MotionPolicy):
    """Fixed random vector per grid cell, bilinearly blended across cells."""

    name = "piecewise"

    def __init__(self, cfg, seeds, cell_size: float = 80.0, **kw):
        super().__init__(cfg, seeds, cell_size=cell_size, **kw)
        self.n = max(1, int(round(cfg.L / cell_size)))
        self.c = cfg.L / self.n
        rng = seeds.rng("policy")
        ang = rng.uniform(0, TWO_PI, (self.n, self.n))
        mag = rng.uniform(cfg.v_min, cfg.v_max, (self.n, self.n))
        self.vec = np.stack([mag * np.cos(ang), mag * np.sin(ang)], axis=-1)

    def velocity(self, x, y):
        gx = np.asarray(x) / self.c - 0.5
        gy = np.asarray(y) / self.c - 0.5
        fx, fy = np.floor(gx), np.floor(gy)
        wx, wy = gx - fx, gy - fy
        i0 = fx.astype(np.int64) % self.n
        j0 = fy.astype(np.int64) % self.n
        i1, j1 = (i0 + 1) % self.n, (j0 + 1) % self.n
        v = self.vec
        out = ((1 - wx)[..., None] * (1 - wy)[..., None] * v[i0, j0]
               + wx[..., None] * (1 - wy)[..., None] * v[i1, j0]
               + (1 - wx)[..., None] * wy[..., None] * v[i0, j1]
               + wx[..., None] * wy[..., None] * v[i1, j1])
        return out[..., 0], out[..., 1]

    def targets(self, state, t):
        vx, vy = self.velocity(state.pos[:, 0], state.pos[:, 1])
        mag = np.hypot(vx, vy)
        th = np.where(mag > 0, np.arctan2(vy, vx), state.theta)
        return wrap_angle(th), mag


_POLICY_CLASSES = {c.name: c for c in (PerlinDual, PerlinSingle,
                                       UncorrelatedRandomWalk, OUHeading,
                                       CurlNoise, Vicsek, PiecewiseConstant)}


def make_policy(name: str, cfg: CrowdConfig, seeds: SeedBundle, **params):
    name = POLICY_ALIASES.get(name, name)
    if name not in _POLICY_CLASSES:
        raise ValueError(f"unknown motion policy {name!r}")
    return _POLICY_CLASSES[name](cfg, seeds, **params)


# --- run loop ------------------------------------------------------------------

def init_agents(cfg: CrowdConfig, rng: np.random.Generator) -> AgentState:
    pos = rng.uniform(0.0, cfg.L, (cfg.n_agents, 2))
    theta = rng.uniform(0.0, TWO_PI, cfg.n_agents)
    speed = np.full(cfg.n_agents, cfg.v_mid)
    return AgentState(wrap_pos(pos, cfg.L), wrap_angle(theta), speed)


@dataclass
class CrowdResult:
    config: dict
    policy: dict
    seed: int
    ticks: dict                      # per-tick series (arrays)
    runtime_ns: np.ndarray           # per-tick update time
    snapshots: list = field(default_factory=list)  # (tick, AgentState)
    summary: dict = field(default_factory=dict)
    bins: dict = field(default_factory=dict)       # per-bin pooled stats


def run_crowd(cfg: CrowdConfig, policy: str = "perlin_dual", seed: int = 0,
              policy_params: Optional[dict] = None, keep_snapshots: bool = True,
              check: bool = False) -> CrowdResult:
    """Simulate ``cfg.horizon`` ticks and collect metrics.

    Per tick: targets from the policy at the current positions, heading and
    speed update, then the kinematic step. Metrics are recorded on the
    post-step state.
    """
    if cfg.n_agents <= 0 or cfg.horizon <= 0:
        raise ValueError("n_agents and horizon must be positive")
    seeds = SeedBundle(int(seed))
    pol = make_policy(policy, cfg, seeds, **(policy_params or {}))
    state = init_agents(cfg, seeds.rng("init"))
    pol.init_state(state)
    speed_rng = seeds.rng("speed_noise")

    T, N, L = cfg.horizon, cfg.n_agents, cfg.L
    pol_series = np.empty(T)
    mean_speed = np.empty(T)
    kinetic = np.empty(T)
    jerk_mean = np.full(T, np.nan)
    jerk_p95 = np.full(T, np.nan)
    coverage = np.full(T, np.nan)
    runtime = np.empty(T, dtype=np.int64)
    jerk_sum, jerk_count = 0.0, 0
    jerk_samples = []

    cov = metrics.CoverageTracker(L, cfg.coverage_grid, cfg.coverage_window)
    unwrapped = state.pos.copy()
    ring = [unwrapped.copy()]
    tort_means, tort_p95, tort_flags = [], [], 0
    u_prev2 = u_prev = None
    snaps = []
    diversity = []
    lag_stats = metrics.LagAutocorr((1, 5, 10))

    for t in range(T):
        t0 = time.perf_counter_ns()
        th_star, v_star = pol.targets(state, t)
        if pol.blend:
            theta = blend_heading(state.theta, th_star, cfg.beta)
            if cfg.speed_update == "ema":
                speed = update_speed_ema(state.speed, v_star, cfg.rho)
            else:
                speed = update_speed_ou(state.speed, v_star, cfg.ou_beta,
                                        cfg.ou_sigma, speed_rng.standard_normal(N),
                                        cfg.v_min, cfg.v_max)
        else:
            theta, speed = th_star, np.asarray(v_star, dtype=np.float64)
        state = step_kinematics(AgentState(state.pos, theta, speed), cfg.dt, L)
        pol.advance()
        runtime[t] = time.perf_counter_ns() - t0

        if check:
            assert np.all((state.pos >= 0) & (state.pos < L)), "torus closure"
            assert np.all((state.speed >= 0) & (state.speed <= cfg.v_max + 1e-12))

        # velocity actually used for the move
        u = state.speed[:, None] * np.stack([np.cos(state.theta),
                                             np.sin(state.theta)], axis=-1)
        unwrapped = unwrapped + u * cfg.dt
        ring.append(unwrapped)
        if len(ring) > cfg.coverage_window + 1:
            ring.pop(0)
        if u_prev2 is not None:
            j = np.linalg.norm(u - 2.0 * u_prev + u_prev2, axis=1)
            jerk_mean[t] = j.mean()
            jerk_p95[t] = np.percentile(j, 95)
            jerk_sum += j.sum()
            jerk_count += j.size
            if t % cfg.snapshot_every == 0:
                jerk_samples.append(j)
        u_prev2, u_prev = u_prev, u

        pol_series[t] = metrics.polarization(state.theta)
        mean_speed[t] = state.speed.mean()
        kinetic[t] = float(np.sum(state.speed ** 2))
        coverage[t] = cov.update(state.pos, t)
        lag_stats.update(state.theta, state.speed)

        if (t + 1) % cfg.snapshot_every == 0:
            snaps.append((t + 1, state.copy()))
            diversity.append(metrics.diversity_stats(state.theta, state.speed))
            if len(ring) == cfg.coverage_window + 1:
                tm = metrics.tortuosity(ring)
                tort_means.append(tm["mean"])
                tort_p95.append(tm["p95"])
                tort_flags += tm["n_capped"]

    bins = pooled_spatial(snaps, cfg)
    hf = metrics.hf_lf_ratio(kinetic, cfg.hf_window)
    jerk_all = np.concatenate(jerk_samples) if jerk_samples else np.array([np.nan])
    warm = cfg.coverage_window - 1
    with warnings.catch_warnings():
        # short runs or constant speeds leave some of these undefined
        warnings.simplefilter("ignore", RuntimeWarning)
        cov_mean = float(np.nanmean(coverage[warm:])) if len(coverage) > warm else float("nan")
        skew = float(np.nanmean([d["speed_skew"] for d in diversity])) if diversity else float("nan")
    summary = {
        "S_dir@5": bins["S_dir"][0],
        "C_v@5": bins["C_v"][0],
        "corr_length_S_dir": bins["corr_length_S_dir"],
        "corr_length_C_v": bins["corr_length_C_v"],
        "jerk_mean": jerk_sum / max(jerk_count, 1),
        "jerk_p95": float(np.percentile(jerk_all, 95)),
        "coverage": cov_mean,
        "coverage_final": float(coverage[-1]),
        "polarization": float(np.mean([d["polarization"] for d in diversity])) if diversity else float(pol_series[-1]),
        "heading_entropy": float(np.mean([d["entropy"] for d in diversity])) if diversity else float("nan"),
        "speed_mean": float(np.mean(mean_speed)),
        "speed_std": float(np.mean([d["speed_std"] for d in diversity])) if diversity else float("nan"),
        "speed_skew": skew,
        "tortuosity_mean": float(np.mean(tort_means)) if tort_means else float("nan"),
        "tortuosity_p95": float(np.mean(tort_p95)) if tort_p95 else float("nan"),
        "tortuosity_capped": int(tort_flags),
        "hf_lf": hf["ratio"],
        "field_evals_per_tick": pol.field_evals / T,
        "rng_draws_per_tick": pol.rng_draws / T,
    }
    summary.update(lag_stats.result())
    result = CrowdResult(
        config=cfg.to_dict(), policy=pol.describe(), seed=int(seed),
        ticks={"tick": np.arange(1, T + 1), "polarization": pol_series,
               "mean_speed": mean_speed, "jerk_mean": jerk_mean,
               "jerk_p95": jerk_p95, "coverage": coverage, "kinetic": kinetic},
        runtime_ns=runtime, snapshots=snaps if keep_snapshots else [],
        summary=summary, bins=bins)
    result.summary.update(runtime_summary(runtime))
    return result


def runtime_summary(runtime_ns: np.ndarray) -> dict:
    ms = runtime_ns / 1e6
    return {"runtime_ms_mean": float(ms.mean()),
            "runtime_ms_p95": float(np.percentile(ms, 95))}


def pooled_spatial(snaps, cfg: CrowdConfig) -> dict:
    """Distance-bin statistics pooled over snapshots.

    The first bin uses every snapshot; the remaining bins use up to
    ``cfg.max_full_snapshots`` evenly spaced snapshots.
    """
    edges = np.asarray(cfg.bins)
    nb = len(edges) - 1
    if not snaps:
        nan = [float("nan")] * nb
        return {"edges": list(edges), "S_dir": nan, "C_v": nan,
                "gamma_theta": nan, "gamma_v": nan, "count": [0] * nb,
                "corr_length_S_dir": float("nan"), "corr_length_C_v": float("nan")}
    k = max(1, int(np.ceil(len(snaps) / cfg.max_full_snapshots)))
    full_idx = set(range(len(snaps) - 1, -1, -k))
    acc_full = metrics.PairAccumulator(edges)
    acc_first = metrics.PairAccumulator(edges[:2])
    for i, (_, st) in enumerate(snaps):
        if i in full_idx:
            acc_full.add(st.pos, st.theta, st.speed, cfg.L)
        else:
            acc_first.add(st.pos, st.theta, st.speed, cfg.L)
    full = acc_full.result()
    acc_first.merge_first_bin(acc_full)
    first = acc_first.result()
    for key in ("S_dir", "C_v", "gamma_theta", "gamma_v", "count"):
        full[key][0] = first[key][0]
    full["corr_length_S_dir"] = metrics.correlation_length(edges, full["S_dir"])
    full["corr_length_C_v"] = metrics.correlation_length(edges, full["C_v"])
    return full
