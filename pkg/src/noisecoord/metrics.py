"""Evaluation statistics over simulation records.

Spatial structure over distance bins, temporal smoothness, diversity,
coverage, event timing, regional balance, point-process and coverage
distance metrics. All functions are pure; undefined values are returned
as NaN together with a flag rather than silently as zero.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

TWO_PI = 2.0 * np.pi


# --- pair statistics over distance bins ---------------------------------------

def _pairs(pos: np.ndarray, rmax: float, L: Optional[float]):
    """Index pairs (i < j) with distance < rmax and their distances."""
    pos = np.asarray(pos, dtype=np.float64)
    if L is not None:
        pos = np.mod(pos, L)
        pos[pos >= L] = 0.0
        tree = cKDTree(pos, boxsize=L)
    else:
        tree = cKDTree(pos)
    pairs = tree.query_pairs(rmax, output_type="ndarray")
    if len(pairs) == 0:
        return pairs.reshape(0, 2), np.empty(0)
    d = pos[pairs[:, 1]] - pos[pairs[:, 0]]
    if L is not None:
        d -= L * np.round(d / L)
    return pairs, np.hypot(d[:, 0], d[:, 1])


class PairAccumulator:
    """Running per-bin sums for heading/speed pair statistics."""

    def __init__(self, edges):
        self.edges = np.asarray(edges, dtype=np.float64)
        if self.edges.ndim != 1 or len(self.edges) < 2 or np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be strictly increasing, >= 2 entries")
        nb = len(self.edges) - 1
        self.n = np.zeros(nb)
        self.cos = np.zeros(nb)
        self.dth2 = np.zeros(nb)
        self.dv2 = np.zeros(nb)
        self.s1 = np.zeros(nb)
        self.s2 = np.zeros(nb)
        self.sp = np.zeros(nb)

    def add(self, pos, theta, speed, L: Optional[float] = None) -> None:
        pairs, dist = _pairs(pos, self.edges[-1], L)
        if len(dist) == 0:
            return
        b = np.searchsorted(self.edges, dist, side="right") - 1
        keep = (b >= 0) & (b < len(self.n))
        b, pairs = b[keep], pairs[keep]
        i, j = pairs[:, 0], pairs[:, 1]
        dth = np.mod(theta[j] - theta[i] + np.pi, TWO_PI) - np.pi
        vi, vj = speed[i], speed[j]
        nb = len(self.n)
        self.n += np.bincount(b, minlength=nb)
        self.cos += np.bincount(b, np.cos(dth), nb)
        self.dth2 += np.bincount(b, dth * dth, nb)
        self.dv2 += np.bincount(b, (vi - vj) ** 2, nb)
        self.s1 += np.bincount(b, vi + vj, nb)
        self.s2 += np.bincount(b, vi * vi + vj * vj, nb)
        self.sp += np.bincount(b, vi * vj, nb)

    def merge_first_bin(self, other: "PairAccumulator") -> None:
        for k in ("n", "cos", "dth2", "dv2", "s1", "s2", "sp"):
            getattr(self, k)[0] += getattr(other, k)[0]

    def result(self) -> dict:
        n = self.n
        with np.errstate(invalid="ignore", divide="ignore"):
            s_dir = self.cos / n
            g_th = 0.5 * self.dth2 / n
            g_v = 0.5 * self.dv2 / n
            m = self.s1 / (2 * n)
            var = self.s2 / (2 * n) - m * m
            cov = self.sp / n - m * m
            c_v = np.where(var > 1e-15, cov / var, np.nan)
        empty = n == 0
        for arr in (s_dir, g_th, g_v, c_v):
            arr[empty] = np.nan
        return {"edges": self.edges.tolist(), "S_dir": s_dir.tolist(),
                "C_v": c_v.tolist(), "gamma_theta": g_th.tolist(),
                "gamma_v": g_v.tolist(), "count": n.astype(int).tolist(),
                "undefined_bins": np.flatnonzero(empty).tolist()}


def correlation_length(edges, stat, fraction: float = 0.5) -> float:
    """First bin centre where ``stat`` falls to ``fraction`` of its first
    finite value; NaN if it never does."""
    edges = np.asarray(edges, dtype=np.float64)
    centres = 0.5 * (edges[:-1] + edges[1:])
    stat = np.asarray(stat, dtype=np.float64)
    finite = np.flatnonzero(np.isfinite(stat))
    if len(finite) == 0:
        return float("nan")
    ref = stat[finite[0]]
    for k in finite[1:]:
        if stat[k] <= fraction * ref:
            return float(centres[k])
    return float("nan")


def spatial_stats(pos, theta, speed, bins, L: Optional[float] = None,
                  fraction: float = 0.5) -> dict:
    """Per-bin S_dir, C_v and semivariograms for one snapshot.

    Args:
        pos: (N, 2) positions.
        theta: headings in radians.
        speed: scalar speeds.
        bins: distance bin edges.
        L: torus side (minimum-image distances) or None for the plane.

    Returns:
        dict of per-bin lists plus correlation lengths.
    """
    if len(theta) < 2:
        raise ValueError("need at least two agents")
    acc = PairAccumulator(bins)
    acc.add(np.asarray(pos), np.asarray(theta, float), np.asarray(speed, float), L)
    out = acc.result()
    out["corr_length_S_dir"] = correlation_length(bins, out["S_dir"], fraction)
    out["corr_length_C_v"] = correlation_length(bins, out["C_v"], fraction)
    return out


# --- temporal smoothness -----------------------------------------------------------

def jerk_series(positions, L: Optional[float] = None) -> np.ndarray:
    """Jerk magnitudes from a (T, N, 2) position track.

    Velocity is the (torus-aware) first difference of position; jerk is the
    norm of the second difference of velocity. Returns (T - 3, N).
    """
    p = np.asarray(positions, dtype=np.float64)
    if p.shape[0] < 4:
        raise ValueError("need at least 4 positions (3 velocity samples)")
    d = np.diff(p, axis=0)
    if L is not None:
        d -= L * np.round(d / L)
    j = d[2:] - 2 * d[1:-1] + d[:-2]
    return np.linalg.norm(j, axis=-1)


def jerk_from_velocity(vel) -> np.ndarray:
    """Jerk magnitudes from a (T, N, 2) velocity track -> (T - 2, N)."""
    v = np.asarray(vel, dtype=np.float64)
    if v.shape[0] < 3:
        raise ValueError("need at least 3 ticks")
    return np.linalg.norm(v[2:] - 2 * v[1:-1] + v[:-2], axis=-1)


def hf_lf_ratio(signal, window: int = 256) -> dict:
    """High/low frequency energy ratio of a scalar series.

    The series is cut into non-overlapping windows; each window is
    demeaned and its periodogram averaged. Over the nonzero frequency bins,
    LF is the lowest quartile and HF the top half.
    """
    x = np.asarray(signal, dtype=np.float64)
    short = len(x) < window
    w = len(x) if short else window
    if w < 8:
        return {"ratio": float("nan"), "short": True, "undefined": True}
    nwin = len(x) // w
    segs = x[: nwin * w].reshape(nwin, w)
    segs = segs - segs.mean(axis=1, keepdims=True)
    power = (np.abs(np.fft.rfft(segs, axis=1)) ** 2).mean(axis=0)[1:]
    nbin = len(power)
    lf = power[: max(1, nbin // 4)].sum()
    hf = power[nbin - nbin // 2:].sum()
    ratio = hf / lf if lf > 0 else float("nan")
    return {"ratio": float(ratio), "hf": float(hf), "lf": float(lf),
            "short": short, "undefined": not np.isfinite(ratio)}


class LagAutocorr:
    """Online short-lag autocorrelation of headings (circular) and speeds."""

    def __init__(self, lags=(1, 5, 10)):
        self.lags = tuple(lags)
        self.hist = deque(maxlen=max(self.lags) + 1)
        self.acc = {k: np.zeros(6) for k in self.lags}

    def update(self, theta, speed) -> None:
        self.hist.append((np.asarray(theta).copy(), np.asarray(speed).copy()))
        for k in self.lags:
            if len(self.hist) > k:
                th0, v0 = self.hist[-1 - k]
                th1, v1 = self.hist[-1]
                a = self.acc[k]
                a[0] += np.cos(th1 - th0).sum()
                a[1] += len(th1)
                a[2] += (v0 * v1).sum()
                a[3] += v0.sum() + v1.sum()
                a[4] += (v0 * v0).sum() + (v1 * v1).sum()

    def result(self) -> dict:
        out = {}
        for k, a in self.acc.items():
            n = a[1]
            if n == 0:
                out[f"heading_acf_{k}"] = float("nan")
                out[f"speed_acf_{k}"] = float("nan")
                continue
            m = a[3] / (2 * n)
            var = a[4] / (2 * n) - m * m
            out[f"heading_acf_{k}"] = float(a[0] / n)
            out[f"speed_acf_{k}"] = float((a[2] / n - m * m) / var) if var > 1e-15 else float("nan")
        return out


def temporal_stats(positions, L: Optional[float] = None, window: int = 256) -> dict:
    """Jerk mean/p95, short-lag autocorrelations and HF/LF from a track.

    Args:
        positions: (T, N, 2) positions (wrapped onto the torus if L given).
        L: torus side.
        window: periodogram window for the kinetic signal.
    """
    p = np.asarray(positions, dtype=np.float64)
    if p.shape[0] < 4:
        raise ValueError("need at least 4 ticks")
    d = np.diff(p, axis=0)
    if L is not None:
        d -= L * np.round(d / L)
    j = jerk_series(p, L)
    speed = np.linalg.norm(d, axis=-1)
    theta = np.arctan2(d[..., 1], d[..., 0])
    lag = LagAutocorr()
    for t in range(len(d)):
        lag.update(theta[t], speed[t])
    hf = hf_lf_ratio((speed ** 2).sum(axis=1), window)
    out = {"jerk_mean": float(j.mean()), "jerk_p95": float(np.percentile(j, 95)),
           "hf_lf": hf["ratio"], "hf_lf_short": hf["short"]}
    out.update(lag.result())
    return out


# --- diversity -----------------------------------------------------------------------

def polarization(theta) -> float:
    th = np.asarray(theta, dtype=np.float64)
    return float(np.hypot(np.cos(th).sum(), np.sin(th).sum()) / len(th))


def heading_entropy(theta, nbins: int = 36) -> float:
    """Shannon entropy (nats) of the heading histogram."""
    th = np.mod(np.asarray(theta, dtype=np.float64), TWO_PI)
    h = np.bincount(np.minimum((th / TWO_PI * nbins).astype(int), nbins - 1),
                    minlength=nbins).astype(np.float64)
    p = h[h > 0] / h.sum()
    return float(-(p * np.log(p)).sum())


def diversity_stats(theta, speed) -> dict:
    v = np.asarray(speed, dtype=np.float64)
    sd = v.std()
    skew = float(((v - v.mean()) ** 3).mean() / sd ** 3) if sd > 1e-12 else float("nan")
    return {"polarization": polarization(theta), "entropy": heading_entropy(theta),
            "speed_mean": float(v.mean()), "speed_std": float(sd),
            "speed_skew": skew}


# --- coverage and paths -----------------------------------------------------------------

class CoverageTracker:
    """Fraction of grid cells touched within the trailing window."""

    def __init__(self, L: float, grid: int = 50, window: int = 60):
        self.L, self.grid, self.window = float(L), int(grid), int(window)
        self.last = np.full(self.grid * self.grid, -(10 ** 9), dtype=np.int64)

    def cells(self, pos) -> np.ndarray:
        g = np.clip((np.asarray(pos) / self.L * self.grid).astype(np.int64), 0, self.grid - 1)
        return g[:, 0] * self.grid + g[:, 1]

    def update(self, pos, t: int) -> float:
        self.last[self.cells(pos)] = t
        return float(np.mean(self.last > t - self.window))


def tortuosity(track) -> dict:
    """Arc length over chord length per agent for a window of unwrapped
    positions (sequence of (N, 2) arrays)."""
    p = np.asarray(track, dtype=np.float64)
    arc = np.linalg.norm(np.diff(p, axis=0), axis=-1).sum(axis=0)
    chord = np.linalg.norm(p[-1] - p[0], axis=-1)
    capped = chord < 1e-9
    tau = np.where(capped, 1e6, arc / np.where(capped, 1.0, chord))
    return {"mean": float(tau.mean()), "p95": float(np.percentile(tau, 95)),
            "n_capped": int(capped.sum())}


def coverage_and_paths(positions, L: float, window: int = 60, grid: int = 50) -> dict:
    """Visited fraction and tortuosity over the last ``window`` ticks.

    Args:
        positions: (T, N, 2) wrapped positions on a torus of side L.
    """
    p = np.asarray(positions, dtype=np.float64)
    w = min(window, p.shape[0])
    tracker = CoverageTracker(L, grid, w)
    frac = 0.0
    for t in range(p.shape[0] - w, p.shape[0]):
        frac = tracker.update(p[t], t)
    seg = p[p.shape[0] - w:]
    if len(seg) >= 2:
        d = np.diff(seg, axis=0)
        d -= L * np.round(d / L)
        unwrapped = np.concatenate([seg[:1], seg[:1] + np.cumsum(d, axis=0)])
        tort = tortuosity(unwrapped)
    else:
        tort = {"mean": float("nan"), "p95": float("nan"), "n_capped": 0}
    return {"visited_fraction": frac, "tortuosity_mean": tort["mean"],
            "tortuosity_p95": tort["p95"], "tortuosity_capped": tort["n_capped"]}


# --- event timing ----------------------------------------------------------------------------

def isi_stats(timestamps) -> dict:
    """ISI moments on the merged, sorted timestamp sequence."""
    ts = np.sort(np.asarray(timestamps, dtype=np.float64))
    if len(ts) < 2:
        nan = float("nan")
        return {"isi_mean": nan, "isi_std": nan, "isi_cv": nan,
                "burstiness": nan, "isi_undefined": True}
    isi = np.diff(ts)
    mu, sd = isi.mean(), isi.std()
    cv = sd / mu if mu > 0 else float("nan")
    b = (sd - mu) / (sd + mu) if (sd + mu) > 0 else float("nan")
    return {"isi_mean": float(mu), "isi_std": float(sd), "isi_cv": float(cv),
            "burstiness": float(b), "isi_undefined": False}


def fano_factor(counts_per_tick, window: int = 60) -> float:
    """Var/mean of event counts over sliding windows (stride 1)."""
    c = np.asarray(counts_per_tick, dtype=np.float64)
    if len(c) < window:
        return float("nan")
    cs = np.concatenate([[0.0], np.cumsum(c)])
    nw = cs[window:] - cs[:-window]
    m = nw.mean()
    return float(nw.var() / m) if m > 0 else float("nan")


def counts_per_tick(timestamps, n_ticks: int, t0: int = 0) -> np.ndarray:
    ts = np.floor(np.asarray(timestamps, dtype=np.float64)).astype(np.int64) - t0
    ts = ts[(ts >= 0) & (ts < n_ticks)]
    return np.bincount(ts, minlength=n_ticks).astype(np.float64)


def event_stats(timestamps, n_ticks: int, active_counts=None, n_agents: Optional[int] = None,
                window: int = 60, agent_ids=None, t0: int = 0) -> dict:
    """Timing statistics for an event stream.

    Args:
        timestamps: event times (ticks, may be fractional).
        n_ticks: number of ticks in the observation span starting at t0.
        active_counts: per-tick active agent counts (for duty cycle).
        n_agents: population size (for duty cycle).
        window: Fano window in ticks.
        agent_ids: optional per-event agent ids for per-agent gap p95.
    """
    out = isi_stats(timestamps)
    out["fano"] = fano_factor(counts_per_tick(timestamps, n_ticks, t0), window)
    out["n_events"] = int(len(timestamps))
    if active_counts is not None and n_agents:
        out["duty"] = float(np.mean(active_counts) / n_agents)
    if agent_ids is not None and len(timestamps) > 1:
        ts = np.asarray(timestamps, dtype=np.float64)
        ids = np.asarray(agent_ids)
        order = np.lexsort((ts, ids))
        ts, ids = ts[order], ids[order]
        same = ids[1:] == ids[:-1]
        gaps = np.diff(ts)[same]
        out["gap_p95"] = float(np.percentile(gaps, 95)) if len(gaps) else float("nan")
    return out


def second_difference_energy(series) -> float:
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 3:
        return float("nan")
    return float(np.mean(np.diff(x, n=2) ** 2))


# --- regional balance ------------------------------------------------------------------------------

def region_counts(points, extent: float, grid: int = 8) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    g = np.clip((p / extent * grid).astype(np.int64), 0, grid - 1)
    return np.bincount(g[:, 0] * grid + g[:, 1], minlength=grid * grid).reshape(grid, grid).astype(float)


def rook_weights(rows: int, cols: int) -> np.ndarray:
    """Row-standardised rook adjacency for a rows x cols lattice."""
    n = rows * cols
    W = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    W[i, rr * cols + cc] = 1.0
    return W / W.sum(axis=1, keepdims=True)


def morans_i(grid_values) -> float:
    z = np.asarray(grid_values, dtype=np.float64)
    W = rook_weights(*z.shape)
    z = z.ravel() - z.mean()
    denom = (z * z).sum()
    if denom <= 1e-15:
        return float("nan")
    n = len(z)
    return float(n / W.sum() * (z @ W @ z) / denom)


def spatial_balance(counts) -> dict:
    """Regional CV and Moran's I of a 2D grid of counts."""
    c = np.asarray(counts, dtype=np.float64)
    m = c.mean()
    cv = float(c.std() / m) if m > 0 else float("nan")
    if c.std() <= 1e-15:
        cv = 0.0 if m > 0 else cv
    mi = morans_i(c)
    return {"regional_cv": cv, "morans_i": mi, "morans_i_undefined": not np.isfinite(mi)}


# --- point processes ----------------------------------------------------------------------------------

def point_process_stats(points, radii, width: float, height: Optional[float] = None,
                        torus: bool = False) -> dict:
    """Ripley's K, pair correlation g and mean nearest-neighbour distance.

    Toroidal distances on a torus, translation edge correction otherwise.
    g uses an Epanechnikov kernel with bandwidth equal to the radius
    spacing.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    height = width if height is None else height
    radii = np.asarray(radii, dtype=np.float64)
    n = len(p)
    area = width * height
    if n < 10:
        nan = [float("nan")] * len(radii)
        return {"K": nan, "K_norm": nan, "g": nan, "nn_mean": float("nan"), "undefined": True}
    h = float(np.min(np.diff(radii))) if len(radii) > 1 else float(radii[0]) / 2
    rmax = radii.max() + h
    if torus:
        q = np.mod(p, [width, height])
        tree = cKDTree(q, boxsize=[width, height])
        pairs = tree.query_pairs(rmax, output_type="ndarray")
        d = q[pairs[:, 1]] - q[pairs[:, 0]]
        d -= np.array([width, height]) * np.round(d / [width, height])
        w = np.ones(len(pairs))
        nn = tree.query(q, k=2)[0][:, 1]
    else:
        tree = cKDTree(p)
        pairs = tree.query_pairs(rmax, output_type="ndarray")
        d = p[pairs[:, 1]] - p[pairs[:, 0]]
        w = area / ((width - np.abs(d[:, 0])) * (height - np.abs(d[:, 1])))
        nn = tree.query(p, k=2)[0][:, 1]
    dist = np.hypot(d[:, 0], d[:, 1]) if len(pairs) else np.empty(0)
    scale = area / (n * (n - 1))
    K, g = [], []
    for r in radii:
        K.append(float(2 * scale * w[dist <= r].sum()))
        u = (r - dist) / h
        k = np.where(np.abs(u) < 1, 0.75 * (1 - u * u) / h, 0.0)
        g.append(float(2 * scale * (k * w).sum() / (TWO_PI * r)))
    K = np.array(K)
    return {"K": K.tolist(), "K_norm": (K / (np.pi * radii ** 2)).tolist(),
            "g": g, "nn_mean": float(nn.mean()), "undefined": False}


def coverage_distance(entities, probes) -> float:
    """Mean distance from each probe to its nearest entity."""
    e = np.asarray(entities, dtype=np.float64).reshape(-1, 2)
    if len(e) == 0:
        return float("nan")
    d, _ = cKDTree(e).query(np.asarray(probes, dtype=np.float64).reshape(-1, 2))
    return float(d.mean())


# --- front coherence ---------------------------------------------------------------------------------------

def front_coherence(counts, driver, cycle_len: int) -> dict:
    """Per-cycle Pearson correlation of event counts and driver intensity,
    averaged over cycles with nonzero variance in both series."""
    c = np.asarray(counts, dtype=np.float64)
    d = np.asarray(driver, dtype=np.float64)
    n = min(len(c), len(d)) // cycle_len
    rs = []
    skipped = 0
    for k in range(n):
        a = c[k * cycle_len:(k + 1) * cycle_len]
        b = d[k * cycle_len:(k + 1) * cycle_len]
        if a.std() <= 1e-15 or b.std() <= 1e-15:
            skipped += 1
            continue
        rs.append(float(np.corrcoef(a, b)[0, 1]))
    value = float(np.mean(rs)) if rs else float("nan")
    return {"coherence": value, "n_cycles": len(rs), "skipped_cycles": skipped,
            "undefined": not rs}
