"""Spawn placement in a bounded world under a replenishment controller.

Placement policies propose sites each tick. A controller admits proposals
subject to a target population, a per-cycle quota and a per-cycle cooldown
budget. Monsters wander with a persistent heading, and scripted players
remove every monster within their kill radius.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import metrics
from .noise import FieldSampler, NoiseSpec, SeedBundle, phase_map, to_unit

TWO_PI = 2.0 * np.pi

SCALES = {
    "small": dict(side=90.0, horizon=2400, target_pop=80, cycle_quota=48,
                  cooldown_budget=48, n_players=6, coverage_samples=1024),
    "medium": dict(side=120.0, horizon=3600, target_pop=128, cycle_quota=96,
                   cooldown_budget=96, n_players=8, coverage_samples=2048),
    "large": dict(side=240.0, horizon=7200, target_pop=256, cycle_quota=192,
                  cooldown_budget=192, n_players=12, coverage_samples=4096,
                  snapshot_every=120, radii=(5.0, 10.0, 20.0), temporal_window=180),
}

POLICIES = ("perlin_a", "perlin_b", "uniform", "filtered", "poisson_disk",
            "mvn_poisson", "facility", "sinusoid")

DELAY_MODES = ("player", "replacement")


@dataclass
class SpawnWorldConfig:
    """World, dynamics, controller and policy constants for one run."""

    scale: str = "medium"
    side: float = 120.0
    horizon: int = 3600
    t_cycle: int = 600
    target_pop: int = 128
    cycle_quota: int = 96
    cooldown_budget: int = 96
    n_players: int = 8
    # monsters
    monster_speed: float = 1.5
    persistence: float = 0.85
    turn_noise: float = 0.5
    jitter: float = 0.1
    # players
    player_speed: float = 2.4
    kill_radius: float = 1.75
    respawn_delay: int = 90
    respawn_delay_applies_to: str = "player"
    # measurement
    coverage_samples: int = 2048
    snapshot_every: int = 60
    radii: tuple = (2.5, 5.0, 10.0)
    temporal_window: int = 120
    regions: int = 8
    warmup_cycles: int = 1
    # shared spawn field
    frequency: float = 0.06
    octaves: int = 3
    field_persistence: float = 0.55
    lacunarity: float = 2.0
    field_norm: str = "minmax"
    eval_grid: int = 128
    # perlin_a
    candidates: int = 256
    thin_eps: float = 0.1
    cycle_sites: Optional[int] = None
    # perlin_b
    band_eps: float = 0.02
    eval_evals_per_cycle: int = 20
    eval_jitter: float = 0.25
    eval_min_sep: int = 10
    selection: str = "farthest"
    count_mean: float = 3.0
    count_min: int = 1
    count_max: int = 6
    # baselines
    proposals_per_tick: int = 1
    safety_radius: float = 6.0
    spacing_radius: float = 3.0
    filter_attempts: int = 10
    pds_radius: Optional[float] = None
    pds_attempts: int = 30
    mvn_components: int = 4
    mvn_sigma_frac: float = 0.125
    facility_grid: int = 32
    sinusoid_amplitude: float = 0.8
    sinusoid_period: Optional[int] = None

    def __post_init__(self):
        self.radii = tuple(float(r) for r in self.radii)
        if self.cycle_quota > 2 * self.target_pop:
            raise ValueError("cycle_quota must be <= 2 * target_pop")
        for name in ("monster_speed", "player_speed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.respawn_delay_applies_to not in DELAY_MODES:
            raise ValueError(f"respawn_delay_applies_to must be one of {DELAY_MODES}")
        if self.field_norm not in ("minmax", "affine"):
            raise ValueError("field_norm must be 'minmax' or 'affine'")
        if self.selection not in ("random", "farthest"):
            raise ValueError("selection must be 'random' or 'farthest'")
        if self.side <= 0 or self.t_cycle < 1 or self.horizon < 1:
            raise ValueError("side, t_cycle and horizon must be positive")
        if int(round(np.sqrt(self.candidates))) ** 2 != self.candidates:
            raise ValueError("candidates must be a perfect square (stratified grid)")

    @classmethod
    def for_scale(cls, scale: str, **overrides) -> "SpawnWorldConfig":
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}")
        kw = dict(SCALES[scale])
        kw.update(overrides)
        return cls(scale=scale, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["radii"] = list(self.radii)
        return d

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.frequency, self.octaves, self.field_persistence,
                         self.lacunarity)


# --- world state and dynamics ---------------------------------------------------------

@dataclass
class ControllerState:
    """Live entities and replenishment bookkeeping."""

    pos: np.ndarray                      # (n, 2) live monster positions
    heading: np.ndarray
    ids: np.ndarray
    next_id: int = 0
    spawned_this_cycle: int = 0
    cooldown_used: int = 0
    queue: list = field(default_factory=list)   # [site, eligible_tick] per eliminated entity
    drops: int = 0

    @property
    def live(self) -> int:
        return len(self.ids)


@dataclass
class SpawnState:
    ctrl: ControllerState
    players: np.ndarray
    player_heading: np.ndarray
    player_ready: np.ndarray
    tick: int = 0


def _reflect(pos: np.ndarray, heading: np.ndarray, side: float):
    """Mirror positions back into [0, side]^2 and flip the heading component."""
    for k in (0, 1):
        lo = pos[:, k] < 0
        hi = pos[:, k] > side
        pos[lo, k] = -pos[lo, k]
        pos[hi, k] = 2 * side - pos[hi, k]
        flip = lo | hi
        if k == 0:
            heading[flip] = np.pi - heading[flip]
        else:
            heading[flip] = -heading[flip]
    np.clip(pos, 0.0, side, out=pos)
    heading[:] = np.mod(heading, TWO_PI)
    return pos, heading


def random_walk_step(pos, heading, speed, persistence, turn_noise, jitter, side, rng):
    """Persistent-heading walk with reflective bounds.

    The heading relaxes toward a noisy target theta + turn_noise * xi with
    weight (1 - persistence); positions get isotropic jitter.
    """
    n = len(pos)
    if n == 0:
        return pos, heading
    xi = rng.standard_normal(n)
    heading = heading + (1.0 - persistence) * turn_noise * xi
    step = speed * np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    pos = pos + step + jitter * rng.standard_normal((n, 2))
    return _reflect(pos, heading, side)


def step_world(state: SpawnState, t: int, cfg: SpawnWorldConfig, rng) -> list:
    """Move monsters and players, then apply eliminations.

    Returns a list of (entity id, x, y, player index) eliminations. Each
    elimination adds a respawn-queue entry; its eligibility tick depends on
    ``cfg.respawn_delay_applies_to``.
    """
    c = state.ctrl
    c.pos, c.heading = random_walk_step(c.pos, c.heading, cfg.monster_speed, cfg.persistence,
                                        cfg.turn_noise, cfg.jitter, cfg.side, rng)
    state.players, state.player_heading = random_walk_step(
        state.players, state.player_heading, cfg.player_speed, cfg.persistence,
        cfg.turn_noise, cfg.jitter, cfg.side, rng)
    kills = []
    if c.live == 0:
        return kills
    tree = cKDTree(c.pos)
    dead = np.zeros(c.live, dtype=bool)
    player_mode = cfg.respawn_delay_applies_to == "player"
    for p in range(len(state.players)):
        if player_mode and t < state.player_ready[p]:
            continue
        hit = [i for i in tree.query_ball_point(state.players[p], cfg.kill_radius) if not dead[i]]
        if not hit:
            continue
        for i in sorted(hit):
            dead[i] = True
            kills.append((int(c.ids[i]), float(c.pos[i, 0]), float(c.pos[i, 1]), p))
        if player_mode:
            state.player_ready[p] = t + cfg.respawn_delay
    if kills:
        delay = 0 if player_mode else cfg.respawn_delay
        for _, x, y, _ in kills:
            c.queue.append([(x, y), t + delay])
        keep = ~dead
        c.pos, c.heading, c.ids = c.pos[keep], c.heading[keep], c.ids[keep]
    return kills


def controller_admit(proposals: np.ndarray, state: ControllerState, cfg: SpawnWorldConfig,
                     t: int) -> np.ndarray:
    """Admit proposals in order up to the eligible deficit and remaining budgets.

    Returns the admitted positions; the remainder is counted as dropped.
    """
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 2)
    eligible = sum(1 for _, due in state.queue if due <= t)
    room = min(eligible,
               cfg.cycle_quota - state.spawned_this_cycle,
               cfg.cooldown_budget - state.cooldown_used)
    n = max(0, min(room, len(proposals)))
    state.drops += len(proposals) - n
    if n == 0:
        return proposals[:0]
    # consume the oldest eligible queue entries
    taken = 0
    keep = []
    for entry in state.queue:
        if taken < n and entry[1] <= t:
            taken += 1
        else:
            keep.append(entry)
    state.queue = keep
    state.spawned_this_cycle += n
    state.cooldown_used += n
    return proposals[:n]


# --- shared spawn field ----------------------------------------------------------------------

class SpawnField:
    """Per-cycle resampled field normalised to [0, 1], with an evaluation grid.

    With ``field_norm='minmax'`` values are rescaled by the grid minimum and
    maximum of the current cycle so the level map spans the whole cycle;
    'affine' uses (n + 1) / 2.
    """

    def __init__(self, cfg: SpawnWorldConfig, seed: int):
        spec = cfg.noise_spec
        spec.seed = seed
        self.cfg = cfg
        self.sampler = FieldSampler(spec, mode="resample", t_cycle=cfg.t_cycle)
        g = cfg.eval_grid
        cell = cfg.side / g
        xs = (np.arange(g) + 0.5) * cell
        X, Y = np.meshgrid(xs, xs)
        self.grid = np.stack([X.ravel(), Y.ravel()], axis=-1)
        self.cycle = -1
        self.grid_values = None
        self._lo, self._hi = -1.0, 1.0

    def set_cycle(self, cycle: int) -> None:
        if cycle == self.cycle:
            return
        self.sampler.advance(cycle * self.cfg.t_cycle - self.sampler.tick)
        raw = self.sampler.sample(self.grid[:, 0], self.grid[:, 1])
        self._lo, self._hi = float(raw.min()), float(raw.max())
        self.cycle = cycle
        self.grid_values = self.normalise(raw)

    def normalise(self, raw):
        if self.cfg.field_norm == "affine":
            return to_unit(raw)
        span = max(self._hi - self._lo, 1e-12)
        return np.clip((np.asarray(raw) - self._lo) / span, 0.0, 1.0)

    def values(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return self.normalise(self.sampler.sample(pts[:, 0], pts[:, 1]))

    def driver(self) -> np.ndarray:
        """Fraction of grid cells whose phase equals each cycle tick."""
        tau = phase_map(self.grid_values, self.cfg.t_cycle)
        return np.bincount(tau, minlength=self.cfg.t_cycle) / len(tau)


# --- policies ------------------------------------------------------------------------------------

@dataclass
class WorldView:
    """What a policy may look at when proposing."""

    t: int
    entities: np.ndarray
    players: np.ndarray
    field: SpawnField


class SpawnPolicy:
    name = "base"

    def __init__(self, cfg: SpawnWorldConfig, seeds: SeedBundle):
        self.cfg = cfg
        self.rng = seeds.rng("spawn_policy")

    def on_cycle(self, cycle: int, world: WorldView) -> None:
        pass

    def propose(self, world: WorldView) -> np.ndarray:
        raise NotImplementedError

    def _uniform(self, n: int) -> np.ndarray:
        return self.rng.uniform(0.0, self.cfg.side, (n, 2))


def stratified_candidates(m: int, side: float, rng) -> np.ndarray:
    """One uniform point per cell of a sqrt(m) x sqrt(m) grid, row-major."""
    k = int(round(np.sqrt(m)))
    cell = side / k
    ij = np.stack(np.meshgrid(np.arange(k), np.arange(k), indexing="ij"), -1).reshape(-1, 2)
    return (ij[:, ::-1] + rng.uniform(0.0, 1.0, (k * k, 2))) * cell


class PerlinA(SpawnPolicy):
    """Phase binning: each candidate fires once per cycle at its phase tick."""

    name = "perlin_a"

    def on_cycle(self, cycle, world):
        cfg = self.cfg
        cand = stratified_candidates(cfg.candidates, cfg.side, self.rng)
        if cfg.cycle_sites is not None and cfg.cycle_sites < len(cand):
            pick = np.sort(self.rng.choice(len(cand), cfg.cycle_sites, replace=False))
            cand = cand[pick]
        self.sites = cand
        self.tau = phase_map(world.field.values(cand), cfg.t_cycle)

    def propose(self, world):
        due = np.flatnonzero(self.tau == world.t % self.cfg.t_cycle)
        if len(due) == 0:
            return np.empty((0, 2))
        keep = self.rng.random(len(due)) >= self.cfg.thin_eps
        return self.sites[due[keep]]


def farthest_point_select(sites: np.ndarray, entities: np.ndarray, k: int) -> np.ndarray:
    """Greedy max-min selection of ``k`` indices from ``sites``.

    Already chosen sites join the reference set. Ties go to the lowest index.
    """
    sites = np.asarray(sites, dtype=np.float64).reshape(-1, 2)
    entities = np.asarray(entities, dtype=np.float64).reshape(-1, 2)
    if len(entities):
        dmin = cKDTree(entities).query(sites)[0]
    else:
        dmin = np.full(len(sites), np.inf)
    chosen = []
    for _ in range(min(k, len(sites))):
        i = int(np.argmax(dmin))
        chosen.append(i)
        dmin = np.minimum(dmin, np.hypot(*(sites - sites[i]).T))
        dmin[i] = -np.inf
    return np.array(chosen, dtype=np.int64)


def evaluation_ticks(cfg: SpawnWorldConfig, rng) -> np.ndarray:
    """Jittered grid of evaluation ticks within one cycle."""
    n = cfg.eval_evals_per_cycle
    spacing = cfg.t_cycle / n
    base = (np.arange(n) + 0.5) * spacing
    ticks = np.round(base + rng.uniform(-cfg.eval_jitter, cfg.eval_jitter, n) * spacing)
    ticks = np.clip(ticks, 0, cfg.t_cycle - 1).astype(np.int64)
    out = []
    for tk in ticks:
        if not out or tk - out[-1] >= cfg.eval_min_sep:
            out.append(int(tk))
    return np.array(out, dtype=np.int64)


def iso_band(values: np.ndarray, level: float, eps: float) -> np.ndarray:
    """Indices with |value - level| <= eps; eps is doubled once if empty."""
    idx = np.flatnonzero(np.abs(values - level) <= eps)
    if len(idx) == 0:
        idx = np.flatnonzero(np.abs(values - level) <= 2 * eps)
    return idx


class PerlinB(SpawnPolicy):
    """Iso-band front: at evaluation ticks draw sites near the current level."""

    name = "perlin_b"

    def on_cycle(self, cycle, world):
        self.evals = set(evaluation_ticks(self.cfg, self.rng).tolist())
        self.skipped = getattr(self, "skipped", 0)

    def propose(self, world):
        cfg = self.cfg
        phase = world.t % cfg.t_cycle
        if phase not in self.evals:
            return np.empty((0, 2))
        level = phase / cfg.t_cycle
        band = iso_band(world.field.grid_values, level, cfg.band_eps)
        if len(band) == 0:
            self.skipped += 1
            return np.empty((0, 2))
        count = int(np.clip(round(self.rng.normal(cfg.count_mean, 1.0)), cfg.count_min, cfg.count_max))
        sites = world.field.grid[band]
        if cfg.selection == "farthest":
            pick = farthest_point_select(sites, world.entities, count)
        else:
            pick = self.rng.choice(len(sites), min(count, len(sites)), replace=False)
        return sites[pick]


class UniformPolicy(SpawnPolicy):
    name = "uniform"

    def propose(self, world):
        return self._uniform(self.cfg.proposals_per_tick)


class FilteredPolicy(SpawnPolicy):
    """Uniform proposals rejected near players or existing entities."""

    name = "filtered"

    def propose(self, world):
        cfg = self.cfg
        ptree = cKDTree(world.players) if len(world.players) else None
        etree = cKDTree(world.entities) if len(world.entities) else None
        out = []
        for _ in range(cfg.proposals_per_tick):
            for _ in range(cfg.filter_attempts):
                x = self._uniform(1)[0]
                if ptree is not None and ptree.query(x)[0] < cfg.safety_radius:
                    continue
                if etree is not None and etree.query(x)[0] < cfg.spacing_radius:
                    continue
                out.append(x)
                break
        return np.array(out).reshape(-1, 2)


def poisson_disk(side: float, r: float, rng, k: int = 30) -> np.ndarray:
    """Bridson dart throwing in [0, side]^2 with minimum distance ``r``."""
    cell = r / np.sqrt(2)
    g = int(np.ceil(side / cell))
    grid = -np.ones((g, g), dtype=np.int64)
    pts = [rng.uniform(0, side, 2)]
    grid[tuple(np.minimum((pts[0] // cell).astype(int), g - 1))] = 0
    active = [0]
    while active:
        j = int(rng.integers(len(active)))
        base = pts[active[j]]
        placed = False
        for _ in range(k):
            rad = rng.uniform(r, 2 * r)
            ang = rng.uniform(0, TWO_PI)
            q = base + rad * np.array([np.cos(ang), np.sin(ang)])
            if not (0 <= q[0] <= side and 0 <= q[1] <= side):
                continue
            ci, cj = np.minimum((q // cell).astype(int), g - 1)
            ok = True
            for a in range(max(ci - 2, 0), min(ci + 3, g)):
                for b in range(max(cj - 2, 0), min(cj + 3, g)):
                    m = grid[a, b]
                    if m >= 0 and np.hypot(*(pts[m] - q)) < r:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                grid[ci, cj] = len(pts)
                active.append(len(pts))
                pts.append(q)
                placed = True
                break
        if not placed:
            active.pop(j)
    return np.array(pts)


class PoissonDiskPolicy(SpawnPolicy):
    """Blue-noise batch proposed at the start of each cycle."""

    name = "poisson_disk"

    def on_cycle(self, cycle, world):
        cfg = self.cfg
        r = cfg.pds_radius or 0.7 * cfg.side / np.sqrt(cfg.target_pop)
        self.batch = poisson_disk(cfg.side, r, self.rng, cfg.pds_attempts)
        self.batch = self.batch[self.rng.permutation(len(self.batch))]

    def propose(self, world):
        if world.t % self.cfg.t_cycle == 0:
            return self.batch
        return np.empty((0, 2))


class MVNPoissonPolicy(SpawnPolicy):
    """Poisson count per cycle, positions from a Gaussian mixture."""

    name = "mvn_poisson"

    def __init__(self, cfg, seeds):
        super().__init__(cfg, seeds)
        place = seeds.rng("place")
        self.means = place.uniform(0.0, cfg.side, (cfg.mvn_components, 2))
        self.sigma = cfg.mvn_sigma_frac * cfg.side

    def on_cycle(self, cycle, world):
        cfg = self.cfg
        n = int(self.rng.poisson(cfg.cycle_quota))
        self.cycle_counts = getattr(self, "cycle_counts", []) + [n]
        ticks = np.sort(self.rng.integers(0, cfg.t_cycle, n))
        comp = self.rng.integers(0, cfg.mvn_components, n)
        pts = self.means[comp] + self.sigma * self.rng.standard_normal((n, 2))
        self.ticks = ticks
        self.pts = np.clip(pts, 0.0, cfg.side)

    def propose(self, world):
        sel = self.ticks == world.t % self.cfg.t_cycle
        return self.pts[sel]


class FacilityPolicy(SpawnPolicy):
    """Greedy facility score min-distance x desirability over a grid."""

    name = "facility"

    def __init__(self, cfg, seeds):
        super().__init__(cfg, seeds)
        spec = cfg.noise_spec
        spec.seed = seeds.get("desirability")
        g = cfg.facility_grid
        xs = (np.arange(g) + 0.5) * cfg.side / g
        X, Y = np.meshgrid(xs, xs)
        self.grid = np.stack([X.ravel(), Y.ravel()], -1)
        sampler = FieldSampler(spec, mode="drift")
        self.desirability = to_unit(sampler.sample(self.grid[:, 0], self.grid[:, 1]))

    def propose(self, world):
        if len(world.entities):
            d = cKDTree(world.entities).query(self.grid)[0]
        else:
            d = np.full(len(self.grid), self.cfg.side)
        score = d * self.desirability
        return self.grid[[int(np.argmax(score))]]


class SinusoidPolicy(SpawnPolicy):
    """Uniform positions with a sinusoidally modulated Poisson count."""

    name = "sinusoid"

    def propose(self, world):
        cfg = self.cfg
        period = cfg.sinusoid_period or cfg.t_cycle
        base = cfg.cycle_quota / cfg.t_cycle
        lam = base * (1.0 + cfg.sinusoid_amplitude * np.sin(TWO_PI * world.t / period))
        return self._uniform(int(self.rng.poisson(max(lam, 0.0))))


_POLICIES = {c.name: c for c in (PerlinA, PerlinB, UniformPolicy, FilteredPolicy,
                                 PoissonDiskPolicy, MVNPoissonPolicy, FacilityPolicy,
                                 SinusoidPolicy)}


def make_policy(name: str, cfg: SpawnWorldConfig, seeds: SeedBundle) -> SpawnPolicy:
    if name not in _POLICIES:
        raise ValueError(f"unknown spawn policy {name!r}")
    return _POLICIES[name](cfg, seeds)


# --- run loop ------------------------------------------------------------------------------------

@dataclass
class SpawnResult:
    config: dict
    policy: str
    seed: int
    spawns: np.ndarray        # (n, 4) tick, id, x, y
    kills: np.ndarray         # (n, 5) tick, id, x, y, player
    live: np.ndarray          # per-tick live count after admission
    proposals: np.ndarray     # per-tick proposal counts
    driver: np.ndarray        # per-tick front measure of the shared field
    snapshots: dict           # tick -> (n, 3) id, x, y
    runtime_ns: np.ndarray
    violations: dict
    summary: dict


def run_spawn(cfg: SpawnWorldConfig, policy: str = "perlin_a", seed: int = 0,
              keep_snapshots: bool = True) -> SpawnResult:
    """Simulate ``cfg.horizon`` ticks of spawning, wandering and elimination.

    Safety rules (quota, cooldown budget, queue eligibility, bounds and the
    population ceiling) are checked every tick and counted in
    ``violations``.
    """
    if policy not in _POLICIES:
        raise ValueError(f"unknown spawn policy {policy!r}")
    seeds = SeedBundle(int(seed))
    world_rng = seeds.rng("spawn_world")
    init = seeds.rng("spawn_init")
    S, T, Tc = cfg.side, cfg.horizon, cfg.t_cycle
    n0 = cfg.target_pop
    ctrl = ControllerState(pos=init.uniform(0, S, (n0, 2)), heading=init.uniform(0, TWO_PI, n0),
                           ids=np.arange(n0, dtype=np.int64), next_id=n0)
    state = SpawnState(ctrl, players=init.uniform(0, S, (cfg.n_players, 2)),
                       player_heading=init.uniform(0, TWO_PI, cfg.n_players),
                       player_ready=np.zeros(cfg.n_players, dtype=np.int64))
    fld = SpawnField(cfg, seeds.get("spawn_field"))
    pol = make_policy(policy, cfg, seeds)
    probes = seeds.rng("spawn_probe").uniform(0, S, (cfg.coverage_samples, 2))

    live = np.zeros(T, dtype=np.int64)
    nprop = np.zeros(T, dtype=np.int64)
    driver = np.zeros(T)
    runtime = np.zeros(T, dtype=np.int64)
    viol = {"quota": 0, "cooldown": 0, "bounds": 0, "population": 0}
    spawn_rows, kill_rows = [], []
    snapshots, cover = {}, []
    cyc_driver = None

    for t in range(T):
        t0 = time.perf_counter_ns()
        if t % Tc == 0:
            fld.set_cycle(t // Tc)
            cyc_driver = fld.driver()
            ctrl.spawned_this_cycle = 0
            ctrl.cooldown_used = 0
            pol.on_cycle(t // Tc, WorldView(t, ctrl.pos, state.players, fld))
        kills = step_world(state, t, cfg, world_rng)
        view = WorldView(t, ctrl.pos, state.players, fld)
        prop = np.asarray(pol.propose(view), dtype=np.float64).reshape(-1, 2)
        if np.any((prop < 0) | (prop > S)):
            viol["bounds"] += 1
            prop = np.clip(prop, 0.0, S)
        queue_before = [e[1] for e in ctrl.queue]
        adm = controller_admit(prop, ctrl, cfg, t)
        runtime[t] = time.perf_counter_ns() - t0

        # per-tick safety checks
        if len(adm):
            # no replacement slot may be used before its eligibility tick
            if len(adm) > sum(1 for d in queue_before if d <= t):
                viol["cooldown"] += 1
            ids = np.arange(ctrl.next_id, ctrl.next_id + len(adm))
            ctrl.next_id += len(adm)
            ctrl.pos = np.concatenate([ctrl.pos, adm])
            ctrl.heading = np.concatenate([ctrl.heading, world_rng.uniform(0, TWO_PI, len(adm))])
            ctrl.ids = np.concatenate([ctrl.ids, ids])
            spawn_rows.append(np.column_stack([np.full(len(adm), t), ids, adm]))
        if ctrl.spawned_this_cycle > cfg.cycle_quota:
            viol["quota"] += 1
        if ctrl.cooldown_used > cfg.cooldown_budget:
            viol["cooldown"] += 1
        if ctrl.live > cfg.target_pop + cfg.cycle_quota:
            viol["population"] += 1
        if np.any((ctrl.pos < 0) | (ctrl.pos > S)) or np.any((state.players < 0) | (state.players > S)):
            viol["bounds"] += 1
        for k in kills:
            kill_rows.append((t,) + k)
        live[t] = ctrl.live
        nprop[t] = len(prop)
        driver[t] = cyc_driver[t % Tc]
        if t % cfg.snapshot_every == 0:
            cover.append(metrics.coverage_distance(ctrl.pos, probes))
            if keep_snapshots:
                snapshots[t] = np.column_stack([ctrl.ids, ctrl.pos])

    spawns = np.concatenate(spawn_rows) if spawn_rows else np.empty((0, 4))
    kills_arr = np.array(kill_rows, dtype=np.float64).reshape(-1, 5)
    summary = spawn_summary(cfg, spawns, kills_arr, live, driver, np.array(cover), ctrl, runtime)
    summary["drops"] = int(ctrl.drops)
    summary["proposals_per_cycle"] = float(nprop.sum() / (T / Tc))
    summary["violations_total"] = int(sum(viol.values()))
    if isinstance(pol, PerlinB):
        summary["skipped_evaluations"] = int(pol.skipped)
    return SpawnResult(cfg.to_dict(), policy, int(seed), spawns, kills_arr, live, nprop,
                       driver, snapshots, runtime, viol, summary)


def spawn_summary(cfg: SpawnWorldConfig, spawns, kills, live, driver, cover, ctrl,
                  runtime) -> dict:
    T, Tc = len(live), cfg.t_cycle
    w = min(cfg.warmup_cycles * Tc, T - Tc) if T > Tc else 0
    n_cycles = (T - w) / Tc
    st = spawns[:, 0]
    post = st >= w
    out = metrics.isi_stats(st[post])
    counts = metrics.counts_per_tick(st, T)
    out["fano"] = metrics.fano_factor(counts[w:], cfg.temporal_window)
    out["hf_lf"] = metrics.hf_lf_ratio(counts[w:], cfg.temporal_window)["ratio"]
    out["load_variance"] = float(np.var(counts[w:]))
    fc = metrics.front_coherence(counts[w:], driver[w:], Tc)
    out["front_coherence"] = fc["coherence"]
    out["front_coherence_cycles"] = fc["n_cycles"]
    kc = metrics.counts_per_tick(kills[:, 0], T) if len(kills) else np.zeros(T)
    out["spawns_per_cycle"] = float(counts[w:].sum() / n_cycles)
    out["kills_per_cycle"] = float(kc[w:].sum() / n_cycles)
    out["flow_balance"] = (out["spawns_per_cycle"] / out["kills_per_cycle"]
                           if out["kills_per_cycle"] > 0 else float("nan"))
    lo = cfg.target_pop - cfg.cycle_quota
    out["live_mean"] = float(live[w:].mean())
    out["live_band_fraction"] = float(np.mean((live[w:] >= lo) & (live[w:] <= cfg.target_pop)))
    out["coverage_distance"] = float(np.nanmean(cover)) if len(cover) else float("nan")
    pts = spawns[post][:, 2:4]
    bal = metrics.spatial_balance(metrics.region_counts(pts, cfg.side, cfg.regions))
    out.update(bal)
    pp = metrics.point_process_stats(ctrl.pos, cfg.radii, cfg.side)
    out["ripley_K_norm"] = pp["K_norm"]
    out["pair_g"] = pp["g"]
    out["nn_mean"] = pp["nn_mean"]
    ms = runtime / 1e6
    out["runtime_ms_mean"] = float(ms.mean())
    out["runtime_ms_p95"] = float(np.percentile(ms, 95))
    return out
