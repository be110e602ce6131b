"""Per-agent action start scheduling.

Each tick every idle agent may start an action of fixed duration. Start
probabilities come from a coherent hazard field, a phase field, their
mixture, or one of seven baseline schedulers. Agents wander slowly on a
torus so that spatial statistics of the starts are meaningful.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import metrics
from .noise import FieldSampler, NoiseSpec, SeedBundle, hazard_rate, phase_map

TWO_PI = 2.0 * np.pi

SCALES = {
    "small": dict(n_agents=800, L=600.0, horizon=1200),
    "medium": dict(n_agents=2000, L=1000.0, horizon=1800),
    "large": dict(n_agents=8000, L=2000.0, horizon=3600),
}

METHODS = ("perlin", "perlin_phase", "perlin_hybrid", "poisson", "filtered",
           "fixed", "token", "round_robin", "sinusoid", "hawkes")

# methods whose long-run start rate is matched to lam_target
RATE_MATCHED = ("perlin", "poisson", "filtered", "token", "round_robin",
                "sinusoid", "hawkes")


@dataclass
class SchedulerConfig:
    """Rates, field stack, motion and baseline constants for one run."""

    n_agents: int = 2000
    L: float = 1000.0
    horizon: int = 1800
    warmup: int = 60
    duration: int = 8
    lam0: float = 0.03
    eps: float = 0.1
    alpha_ema: float = 0.5
    rate_matching: bool = True
    t_cycle: int = 60
    sigma: float = 8.0
    phase_jitter: int = 1
    hybrid_alpha: float = 0.5
    # field
    frequency: float = 0.01
    octaves: int = 4
    persistence: float = 0.5
    lacunarity: float = 2.0
    drift: float = 0.002
    # neutral wandering
    motion_sigma: float = 0.2
    motion_speed: float = 0.5
    # baselines
    filter_radius: float = 20.0
    filter_cap: int = 2
    filter_window: int = 2
    fixed_period_mean: float = 8.0
    fixed_period_std: float = 2.0
    fixed_jitter: int = 1
    token_capacity: int = 3
    max_wait: int = 8
    rr_slots: int = 12
    rr_period: int = 30
    rr_groups: int = 4
    sin_amplitude: float = 0.3
    sin_period: float = 120.0
    hawkes_radius: float = 20.0
    hawkes_window: int = 3
    hawkes_tau: float = 3.0
    hawkes_alpha_ratio: float = -0.5
    # metrics
    regions: int = 8
    coverage_grid: int = 50
    fano_window: int = 60
    hf_window: int = 256
    ripley_radii: tuple = (10.0, 20.0, 40.0)
    ripley_tail: int = 120

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise ValueError("eps must be in [0, 1)")
        if not 0.0 <= self.hybrid_alpha <= 1.0:
            raise ValueError("hybrid_alpha must be in [0, 1]")
        self.ripley_radii = tuple(float(r) for r in self.ripley_radii)

    @property
    def lam_target(self) -> float:
        return self.lam0 * (self.eps + 0.5 * (1.0 - self.eps))

    @classmethod
    def for_scale(cls, scale: str, **overrides) -> "SchedulerConfig":
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}")
        kw = dict(SCALES[scale])
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ripley_radii"] = list(self.ripley_radii)
        return d


def expected_duty(p: float, duration: int) -> float:
    """Duty of a renewal process: active for ``duration`` ticks, then idle
    with per-tick start probability ``p``."""
    if p <= 0:
        return 0.0
    return duration * p / (duration * p + 1.0 - p)


# --- rate primitives -------------------------------------------------------------

def hazard_tick(u, cfg: SchedulerConfig, prev_lam=None, dt: float = 1.0):
    """Per-agent start probabilities from field values.

    Returns (probabilities, smoothed rates, flag) where flag is True when
    the mean rate vanished and normalisation was undefined.
    """
    lam = hazard_rate(u, cfg.lam0, cfg.eps)
    if prev_lam is not None:
        lam = cfg.alpha_ema * np.asarray(prev_lam) + (1.0 - cfg.alpha_ema) * lam
    if not cfg.rate_matching:
        return -np.expm1(-lam * dt), lam, False
    m = lam.mean()
    if m <= 0:
        return np.zeros_like(lam), lam, True
    gamma = cfg.lam_target / m
    return -np.expm1(-gamma * lam * dt), lam, False


def normalised_hazard(lam, cfg: SchedulerConfig):
    m = np.mean(lam)
    return lam * (cfg.lam_target / m) if (cfg.rate_matching and m > 0) else lam


def circular_tick_distance(t, tau, t_cycle: int):
    d = np.abs(np.mod(t, t_cycle) - np.asarray(tau)) % t_cycle
    return np.minimum(d, t_cycle - d)


def phase_kernel(delta, sigma: float):
    return np.exp(-0.5 * (np.asarray(delta, dtype=np.float64) / sigma) ** 2)


def phase_tick(tau, t: int, cfg: SchedulerConfig):
    """Per-agent phase intensities at tick ``t`` given fixed phases ``tau``."""
    k = phase_kernel(circular_tick_distance(t, tau, cfg.t_cycle), cfg.sigma)
    return cfg.lam0 * (cfg.eps + (1.0 - cfg.eps) * k)


def hybrid_tick(lam_hazard, intensity, alpha: float, dt: float = 1.0):
    """Convex mix of rates; returns (rates, probabilities)."""
    lam = (1.0 - alpha) * np.asarray(lam_hazard) + alpha * np.asarray(intensity)
    return lam, -np.expm1(-lam * dt)


def assign_phases(u, cfg: SchedulerConfig, rng: np.random.Generator):
    tau = phase_map(u, cfg.t_cycle)
    if cfg.phase_jitter > 0:
        tau = tau + rng.integers(-cfg.phase_jitter, cfg.phase_jitter + 1, size=np.shape(tau))
    return np.mod(tau, cfg.t_cycle)


# --- schedulers ------------------------------------------------------------------

@dataclass
class SchedulerState:
    """Mutable per-run state shared with the schedulers."""

    pos: np.ndarray
    heading: np.ndarray
    last_start: np.ndarray          # tick of most recent start (-inf if none)
    start_pos: list = field(default_factory=list)   # per tick (positions)
    start_ticks: list = field(default_factory=list)  # per tick (t)

    def idle(self, t: int, duration: int) -> np.ndarray:
        return t - self.last_start >= duration


class Scheduler:
    name = "base"

    def __init__(self, cfg: SchedulerConfig, seeds: SeedBundle):
        self.cfg = cfg
        self.seeds = seeds
        self.rng = seeds.rng("scheduler")
        self.field_evals = 0
        self.forced = 0

    def decide(self, st: SchedulerState, t: int, idle: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _shared_field(cfg: SchedulerConfig, seeds: SeedBundle) -> FieldSampler:
    spec = NoiseSpec(cfg.frequency, cfg.octaves, cfg.persistence,
                     cfg.lacunarity, seed=seeds.get("timing_field"))
    return FieldSampler(spec, "drift", v_drift=cfg.drift, period=cfg.L)


class PerlinHazard(Scheduler):
    name = "perlin"

    def __init__(self, cfg, seeds):
        super().__init__(cfg, seeds)
        self.field = _shared_field(cfg, seeds)
        self.lam = None
        self.flags = 0

    def rates(self, st, t):
        u = self.field.sample_unit(st.pos[:, 0], st.pos[:, 1])
        self.field_evals += len(u)
        _, self.lam, flag = hazard_tick(u, self.cfg, self.lam)
        self.flags += int(flag)
        return normalised_hazard(self.lam, self.cfg)

    def decide(self, st, t, idle):
        p = -np.expm1(-self.rates(st, t))
        self.field.advance(1)
        return idle & (self.rng.random(len(p)) < p)


class PerlinPhase(Scheduler):
    name = "perlin_phase"

    def __init__(self, cfg, seeds):
        super().__init__(cfg, seeds)
        self.field = _shared_field(cfg, seeds)
        self.tau = None
        self.phase_rng = seeds.rng("phase_jitter")

    def intensity(self, st, t):
        if self.tau is None or t % self.cfg.t_cycle == 0:
            u = self.field.sample_unit(st.pos[:, 0], st.pos[:, 1])
            self.field_evals += len(u)
            self.tau = assign_phases(u, self.cfg, self.phase_rng)
        return phase_tick(self.tau, t, self.cfg)

    def decide(self, st, t, idle):
        lam = self.intensity(st, t)
        self.field.advance(1)
        return idle & (self.rng.random(len(lam)) < -np.expm1(-lam))


class PerlinHybrid(Scheduler):
    name = "perlin_hybrid"

    def __init__(self, cfg, seeds):
        super().__init__(cfg, seeds)
        self.hazard = PerlinHazard(cfg, seeds)
        self.phase = PerlinPhase(cfg, seeds)

    def decide(self, st, t, idle):
        lam_h = self.hazard.rates(st, t)
        lam_p = self.phase.intensity(st, t)
        self.hazard.field.advance(1)
        self.phase.field.advance(1)
        self.field_evals = self.hazard.field_evals + self.phase.field_evals
        _, p = hybrid_tick(lam_h, lam_p, self.cfg.hybrid_alpha)
        return idle & (self.rng.random(len(p)) < p)


class PoissonScheduler(Scheduler):
    name = "poisson"

    def decide(self, st, t, idle):
        p = -np.expm1(-self.cfg.lam_target)
        return idle & (self.rng.random(len(idle)) < p)


def _recent_starts(st: SchedulerState, t: int, window: int):
    """Positions and ticks of starts in ticks [t - window, t - 1]."""
    pos, ticks = [], []
    for tt, pp in zip(st.start_ticks[-window:], st.start_pos[-window:]):
        if t - window <= tt < t and len(pp):
            pos.append(pp)
            ticks.append(np.full(len(pp), tt))
    if not pos:
        return np.empty((0, 2)), np.empty(0)
    return np.concatenate(pos), np.concatenate(ticks)


class FilteredScheduler(Scheduler):
    """Bernoulli proposals suppressed where recent nearby starts reach a cap."""

    name = "filtered"

    def decide(self, st, t, idle):
        cfg = self.cfg
        p = -np.expm1(-cfg.lam_target)
        prop = idle & (self.rng.random(len(idle)) < p)
        rp, _ = _recent_starts(st, t, cfg.filter_window)
        if len(rp) and prop.any():
            tree = cKDTree(np.mod(rp, cfg.L), boxsize=cfg.L)
            idx = np.flatnonzero(prop)
            cnt = tree.query_ball_point(np.mod(st.pos[idx], cfg.L), cfg.filter_radius,
                                        return_length=True)
            prop[idx[cnt >= cfg.filter_cap]] = False
        return prop


class FixedPeriodScheduler(Scheduler):
    """Per-agent periodic starts with Gaussian periods and tick jitter."""

    name = "fixed"

    def __init__(self, cfg, seeds):
        super().__init__(cfg, seeds)
        n = cfg.n_agents
        per = np.round(self.rng.normal(cfg.fixed_period_mean, cfg.fixed_period_std, n))
        self.period = np.maximum(per, 1).astype(np.int64)
        self.next = (self.rng.random(n) * self.period).astype(np.int64)

    def decide(self, st, t, idle):
        due = self.next <= t
        if due.any():
            idx = np.flatnonzero(due)
            j = 0
            if self.cfg.fixed_jitter > 0:
                j = self.rng.integers(-self.cfg.fixed_jitter, self.cfg.fixed_jitter + 1, len(idx))
            self.next[idx] = t + np.maximum(self.period[idx] + j, 1)
        return due & idle


class _QueueScheduler(Scheduler):
    """Shared request queue: Bernoulli requests wait for grants, with a
    forced grant once the wait exceeds ``max_wait``."""

    def __init__(self, cfg, seeds):
        super().__init__(cfg, seeds)
        self.wait = np.full(cfg.n_agents, -1, dtype=np.int64)

    def region_of(self, pos):
        g = self.cfg.regions
        c = np.clip((pos / self.cfg.L * g).astype(np.int64), 0, g - 1)
        return c[:, 0] * g + c[:, 1]

    def capacity(self, st, t, region, idle) -> np.ndarray:
        raise NotImplementedError

    def decide(self, st, t, idle):
        cfg = self.cfg
        p = -np.expm1(-cfg.lam_target)
        new = idle & (self.wait < 0) & (self.rng.random(len(idle)) < p)
        self.wait[new] = 0
        pending = np.flatnonzero(self.wait >= 0)
        grant = np.zeros(len(idle), dtype=bool)
        if len(pending) == 0:
            return grant
        region = self.region_of(st.pos)
        forced = pending[self.wait[pending] > cfg.max_wait]
        grant[forced] = True
        self.forced += len(forced)
        cap = self.capacity(st, t, region, idle)
        cap = cap - np.bincount(region[forced], minlength=len(cap))
        rest = pending[self.wait[pending] <= cfg.max_wait]
        if len(rest):
            r = region[rest]
            order = np.lexsort((rest, -self.wait[rest], r))
            rest, r = rest[order], r[order]
            first = np.searchsorted(r, r, side="left")
            rank = np.arange(len(r)) - first
            grant[rest[rank < np.maximum(cap[r], 0)]] = True
        self.wait[grant] = -1
        self.wait[self.wait >= 0] += 1
        return grant


class TokenScheduler(_QueueScheduler):
    """At most ``token_capacity`` grants per region per tick."""

    name = "token"

    def capacity(self, st, t, region, idle):
        return np.full(self.cfg.regions ** 2, self.cfg.token_capacity)


class RoundRobinScheduler(_QueueScheduler):
    """Region groups take turns; an active region has a fixed number of
    concurrent action slots."""

    name = "round_robin"

    def capacity(self, st, t, region, idle):
        cfg = self.cfg
        nreg = cfg.regions ** 2
        turn = (t // cfg.rr_period) % cfg.rr_groups
        on = (np.arange(nreg) % cfg.rr_groups) == turn
        busy = np.bincount(region[~idle], minlength=nreg)
        return np.where(on, cfg.rr_slots - busy, 0)


class SinusoidScheduler(Scheduler):
    name = "sinusoid"

    def decide(self, st, t, idle):
        cfg = self.cfg
        lam = cfg.lam_target * (1.0 + cfg.sin_amplitude * np.sin(TWO_PI * t / cfg.sin_period))
        return idle & (self.rng.random(len(idle)) < -np.expm1(-lam))


class HawkesInhibitory(Scheduler):
    """Rate lowered by recent nearby starts, renormalised to the target mean."""

    name = "hawkes"

    def decide(self, st, t, idle):
        cfg = self.cfg
        n = len(idle)
        excite = np.zeros(n)
        rp, rt = _recent_starts(st, t, cfg.hawkes_window)
        if len(rp):
            tree = cKDTree(np.mod(rp, cfg.L), boxsize=cfg.L)
            wts = np.exp(-(t - rt) / cfg.hawkes_tau)
            for i, nb in enumerate(tree.query_ball_point(np.mod(st.pos, cfg.L), cfg.hawkes_radius)):
                if nb:
                    excite[i] = wts[nb].sum()
        raw = np.maximum(0.0, 1.0 + cfg.hawkes_alpha_ratio * excite)
        m = raw.mean()
        lam = cfg.lam_target * raw / m if m > 0 else raw
        return idle & (self.rng.random(n) < -np.expm1(-lam))


_SCHEDULERS = {c.name: c for c in (PerlinHazard, PerlinPhase, PerlinHybrid,
                                   PoissonScheduler, FilteredScheduler,
                                   FixedPeriodScheduler, TokenScheduler,
                                   RoundRobinScheduler, SinusoidScheduler,
                                   HawkesInhibitory)}


def make_scheduler(name: str, cfg: SchedulerConfig, seeds: SeedBundle) -> Scheduler:
    if name not in _SCHEDULERS:
        raise ValueError(f"unknown timing method {name!r}")
    return _SCHEDULERS[name](cfg, seeds)


def baseline_scheduler(kind: str, cfg: SchedulerConfig, state: SchedulerState, t: int,
                       scheduler: Optional[Scheduler] = None, seed: int = 0):
    """Start decisions of baseline ``kind`` at tick ``t``.

    Pass a persistent ``scheduler`` to keep queue/period state across ticks.
    """
    sched = scheduler or make_scheduler(kind, cfg, SeedBundle(seed))
    return sched.decide(state, t, state.idle(t, cfg.duration))


# --- run loop ---------------------------------------------------------------------

@dataclass
class EventLog:
    agent: np.ndarray          # start events: agent ids
    tick: np.ndarray           # start events: ticks
    x: np.ndarray
    y: np.ndarray
    active: np.ndarray         # per-tick active counts
    region_starts: np.ndarray  # (T, regions^2) start counts

    def recompute_active(self, horizon: int, duration: int) -> np.ndarray:
        diff = np.zeros(horizon + duration + 1, dtype=np.int64)
        np.add.at(diff, self.tick, 1)
        np.add.at(diff, self.tick + duration, -1)
        return np.cumsum(diff)[:horizon]


@dataclass
class TimingResult:
    config: dict
    method: str
    seed: int
    log: EventLog
    driver: np.ndarray
    runtime_ns: np.ndarray
    summary: dict


def _phase_driver(field: FieldSampler, pos, t: int, cfg: SchedulerConfig, cache: dict):
    """Summed phase-kernel intensity of the shared field at tick t."""
    if t % cfg.t_cycle == 0 or "tau" not in cache:
        u = field.sample_unit(pos[:, 0], pos[:, 1])
        cache["tau"] = phase_map(u, cfg.t_cycle)
    return float(phase_tick(cache["tau"], t, cfg).sum())


def run_action_timing(cfg: SchedulerConfig, method: str = "perlin", seed: int = 0,
                      check: bool = False) -> TimingResult:
    """Simulate ``cfg.horizon`` ticks of start scheduling.

    Per tick: agents wander, the scheduler decides starts among idle
    agents, and starts/active counts are logged. Metrics use ticks from
    ``cfg.warmup`` on.
    """
    if method not in _SCHEDULERS:
        raise ValueError(f"unknown timing method {method!r}")
    seeds = SeedBundle(int(seed))
    init = seeds.rng("init")
    motion = seeds.rng("motion")
    N, T, L, D = cfg.n_agents, cfg.horizon, cfg.L, cfg.duration
    st = SchedulerState(pos=init.uniform(0, L, (N, 2)), heading=init.uniform(0, TWO_PI, N),
                        last_start=np.full(N, -(10 ** 9), dtype=np.int64))
    sched = make_scheduler(method, cfg, seeds)
    driver_field = _shared_field(cfg, seeds)
    driver_cache: dict = {}
    g = cfg.regions

    active = np.zeros(T, dtype=np.int64)
    region_starts = np.zeros((T, g * g), dtype=np.int64)
    driver = np.zeros(T)
    runtime = np.zeros(T, dtype=np.int64)
    ev_agent, ev_tick, ev_pos = [], [], []

    for t in range(T):
        t0 = time.perf_counter_ns()
        st.heading = st.heading + cfg.motion_sigma * motion.standard_normal(N)
        st.pos = np.mod(st.pos + cfg.motion_speed * np.stack(
            [np.cos(st.heading), np.sin(st.heading)], axis=-1), L)
        st.pos[st.pos >= L] = 0.0
        idle = st.idle(t, D)
        start = sched.decide(st, t, idle)
        runtime[t] = time.perf_counter_ns() - t0
        if check:
            assert not np.any(start & ~idle), "start while active"
        idx = np.flatnonzero(start)
        st.last_start[idx] = t
        p = st.pos[idx].copy()
        st.start_ticks.append(t)
        st.start_pos.append(p)
        if len(st.start_ticks) > 8:
            st.start_ticks.pop(0)
            st.start_pos.pop(0)
        ev_agent.append(idx)
        ev_tick.append(np.full(len(idx), t))
        ev_pos.append(p)
        active[t] = int(np.sum(t - st.last_start < D))
        c = np.clip((p / L * g).astype(np.int64), 0, g - 1)
        region_starts[t] = np.bincount(c[:, 0] * g + c[:, 1], minlength=g * g)
        driver[t] = _phase_driver(driver_field, st.pos, t, cfg, driver_cache)
        driver_field.advance(1)

    pos = np.concatenate(ev_pos) if ev_pos else np.empty((0, 2))
    log = EventLog(agent=np.concatenate(ev_agent).astype(np.int64),
                   tick=np.concatenate(ev_tick).astype(np.int64),
                   x=pos[:, 0], y=pos[:, 1], active=active, region_starts=region_starts)
    summary = timing_summary(log, driver, cfg)
    summary["forced_grants"] = int(sched.forced)
    summary["field_evals_per_tick"] = sched.field_evals / T
    ms = runtime / 1e6
    summary["runtime_ms_mean"] = float(ms.mean())
    summary["runtime_ms_p95"] = float(np.percentile(ms, 95))
    summary["decisions_per_second"] = float(N / max(ms.mean() / 1e3, 1e-12))
    return TimingResult(cfg.to_dict(), method, int(seed), log, driver, runtime, summary)


def timing_summary(log: EventLog, driver: np.ndarray, cfg: SchedulerConfig) -> dict:
    w = cfg.warmup
    T = len(log.active)
    post = log.tick >= w
    ts = log.tick[post]
    out = metrics.event_stats(ts, T - w, log.active[w:], cfg.n_agents,
                              cfg.fano_window, log.agent[post], t0=w)
    out["hf_lf"] = metrics.hf_lf_ratio(log.active[w:], cfg.hf_window)["ratio"]
    out["second_diff_energy"] = metrics.second_difference_energy(log.active[w:])
    pts = np.stack([log.x[post], log.y[post]], axis=-1)
    cov = metrics.region_counts(pts, cfg.L, cfg.coverage_grid)
    out["coverage"] = float(np.mean(cov > 0))
    bal = metrics.spatial_balance(log.region_starts[w:].sum(axis=0).reshape(cfg.regions, cfg.regions))
    out.update(bal)
    tail = log.tick >= T - cfg.ripley_tail
    pp = metrics.point_process_stats(np.stack([log.x[tail], log.y[tail]], -1),
                                     cfg.ripley_radii, cfg.L, torus=True)
    out["ripley_K_norm"] = pp["K_norm"]
    out["pair_g"] = pp["g"]
    out["nn_mean"] = pp["nn_mean"]
    counts = np.bincount(log.tick, minlength=T)[w:].astype(float)
    # align the driver to whole cycles after warmup
    start = int(np.ceil(w / cfg.t_cycle) * cfg.t_cycle)
    fc = metrics.front_coherence(np.bincount(log.tick, minlength=T)[start:].astype(float),
                                 driver[start:], cfg.t_cycle)
    out["front_coherence"] = fc["coherence"]
    out["lam_target"] = cfg.lam_target
    out["expected_duty_matched"] = float(expected_duty(-np.expm1(-cfg.lam_target), cfg.duration))
    out["starts_per_tick"] = float(counts.mean())
    return out
