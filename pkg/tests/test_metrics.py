import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisecoord import metrics as M


def _brute_pairs(pos, theta, edges, L):
    n = len(pos)
    acc = [[] for _ in range(len(edges) - 1)]
    for i in range(n):
        for j in range(i + 1, n):
            d = pos[j] - pos[i]
            d -= L * np.round(d / L)
            r = math.hypot(*d)
            for b in range(len(edges) - 1):
                if edges[b] <= r < edges[b + 1]:
                    acc[b].append(math.cos(theta[j] - theta[i]))
    return [np.mean(a) if a else np.nan for a in acc]


def test_spatial_stats_matches_brute_force():
    rng = np.random.default_rng(3)
    pos = rng.uniform(0, 50, (120, 2))
    th = rng.uniform(0, 2 * np.pi, 120)
    edges = [0, 5, 10, 20]
    out = M.spatial_stats(pos, th, rng.random(120), edges, L=50.0)
    np.testing.assert_allclose(out["S_dir"], _brute_pairs(pos, th, edges, 50.0), atol=1e-12)


def test_spatial_stats_aligned_and_speed_correlation():
    rng = np.random.default_rng(0)
    pos = rng.uniform(0, 100, (300, 2))
    out = M.spatial_stats(pos, np.full(300, 1.0), pos[:, 0] / 100, [0, 5, 10], L=None)
    assert out["S_dir"] == pytest.approx([1.0, 1.0])
    assert out["gamma_theta"] == pytest.approx([0.0, 0.0])
    # speeds smooth in x -> strongly positive short-range correlation
    assert out["C_v"][0] > 0.9
    with pytest.raises(ValueError):
        M.spatial_stats(pos[:1], [0.0], [1.0], [0, 1])


def test_correlation_length():
    assert M.correlation_length([0, 10, 20, 30], [1.0, 0.8, 0.4]) == 25.0
    assert math.isnan(M.correlation_length([0, 10, 20], [1.0, 0.9]))


def test_jerk_of_uniform_motion_is_zero():
    t = np.arange(20)[:, None, None]
    pos = np.concatenate([t * 1.0, t * 0.5], axis=-1) * np.ones((1, 3, 1))
    assert np.allclose(M.jerk_series(pos), 0)
    st_ = M.temporal_stats(pos)
    assert st_["jerk_mean"] == pytest.approx(0.0, abs=1e-12)
    assert st_["heading_acf_1"] == pytest.approx(1.0)


def test_hf_lf_ratio_spectra():
    t = np.arange(4096)
    slow = np.sin(2 * np.pi * t / 512)
    assert M.hf_lf_ratio(slow, 256)["ratio"] < 1e-3
    white = np.random.default_rng(1).standard_normal(4096 * 8)
    # [DERIVED] flat spectrum: HF covers half the bins, LF a quarter
    assert M.hf_lf_ratio(white, 256)["ratio"] == pytest.approx(2.0, rel=0.08)
    assert M.hf_lf_ratio(np.ones(4), 256)["undefined"]


def test_polarization_entropy_diversity():
    assert M.polarization(np.zeros(10)) == pytest.approx(1.0)
    assert M.polarization([0.0, np.pi]) == pytest.approx(0.0, abs=1e-12)
    th = (np.arange(36) + 0.5) / 36 * 2 * np.pi
    assert M.heading_entropy(th) == pytest.approx(math.log(36))
    assert math.isnan(M.diversity_stats([0, 1], [1.0, 1.0])["speed_skew"])


def test_tortuosity_and_coverage():
    line = np.stack([np.arange(5.0), np.zeros(5)], axis=-1)[:, None, :]
    assert M.tortuosity(line)["mean"] == pytest.approx(1.0)
    tr = M.CoverageTracker(10.0, grid=2, window=3)
    assert tr.update(np.array([[1.0, 1.0]]), 0) == 0.25
    assert tr.update(np.array([[6.0, 6.0]]), 1) == 0.5
    assert tr.update(np.array([[6.0, 6.0]]), 3) == 0.25
    cp = M.coverage_and_paths(np.tile(line, (1, 2, 1)), 100.0, window=5)
    assert cp["tortuosity_mean"] == pytest.approx(1.0)


def test_isi_and_fano():
    reg = np.arange(0, 1000, 5.0)
    s = M.isi_stats(reg)
    assert s["isi_cv"] == 0 and s["burstiness"] == -1
    assert M.isi_stats([1.0])["isi_undefined"]
    assert M.fano_factor(np.ones(200), 10) == 0.0
    assert math.isnan(M.fano_factor(np.ones(5), 10))
    c = M.counts_per_tick([0.2, 0.9, 3.5, 12], 10)
    assert c.tolist() == [2, 0, 0, 1, 0, 0, 0, 0, 0, 0]


def test_event_stats_fields():
    out = M.event_stats([0, 2, 4, 6], 8, active_counts=np.full(8, 5), n_agents=10,
                        window=2, agent_ids=[0, 1, 0, 1])
    assert out["duty"] == 0.5 and out["gap_p95"] == 4.0 and out["n_events"] == 4


def _brute_moran(z):
    r, c = z.shape
    zc = z - z.mean()
    num, wsum = 0.0, 0.0
    for i in range(r):
        for j in range(c):
            nb = [(i + a, j + b) for a, b in ((-1, 0), (1, 0), (0, -1), (0, 1))
                  if 0 <= i + a < r and 0 <= j + b < c]
            for a, b in nb:
                w = 1.0 / len(nb)
                num += w * zc[i, j] * zc[a, b]
                wsum += w
    return z.size / wsum * num / (zc ** 2).sum()


def test_morans_i():
    cb = np.indices((8, 8)).sum(axis=0) % 2
    assert M.morans_i(cb) == pytest.approx(-1.0)
    z = np.random.default_rng(5).random((6, 7))
    assert M.morans_i(z) == pytest.approx(_brute_moran(z))
    assert M.morans_i(np.add.outer(np.arange(8.0), np.arange(8.0))) > 0.5
    b = M.spatial_balance(np.ones((4, 4)))
    assert b["regional_cv"] == 0.0 and b["morans_i_undefined"]


def test_region_counts():
    c = M.region_counts([[0.1, 0.1], [0.9, 0.1], [0.99, 0.99]], 1.0, 2)
    assert c.tolist() == [[1, 0], [1, 1]]


def test_ripley_k_against_brute_force():
    rng = np.random.default_rng(2)
    p = rng.random((150, 2)) * 10
    radii = np.array([0.5, 1.0, 1.5])
    out = M.point_process_stats(p, radii, 10.0, torus=True)
    d = p[:, None] - p[None]
    d -= 10 * np.round(d / 10)
    r = np.hypot(d[..., 0], d[..., 1])[~np.eye(150, dtype=bool)]
    K = [100.0 / (150 * 149) * np.sum(r <= x) for x in radii]
    np.testing.assert_allclose(out["K"], K)
    # translation-corrected plane version keeps CSR near pi r^2
    big = rng.random((3000, 2))
    pl = M.point_process_stats(big, [0.02, 0.04, 0.06], 1.0)
    np.testing.assert_allclose(pl["K_norm"], 1.0, atol=0.1)
    assert M.point_process_stats(big[:3], [0.1], 1.0)["undefined"]


def test_coverage_distance_brute_force():
    rng = np.random.default_rng(8)
    e, q = rng.random((30, 2)), rng.random((200, 2))
    brute = np.mean(np.min(np.linalg.norm(q[:, None] - e[None], axis=-1), axis=1))
    assert M.coverage_distance(e, q) == pytest.approx(brute)
    assert math.isnan(M.coverage_distance(np.empty((0, 2)), q))


@given(st.floats(0.1, 10), st.floats(-5, 5))
def test_front_coherence_affine_invariance(a, b):
    drv = np.sin(np.arange(120) / 7.0)
    fc = M.front_coherence(a * drv + b, drv, 60)
    assert fc["coherence"] == pytest.approx(1.0)
    assert fc["n_cycles"] == 2


def test_front_coherence_skips_flat_cycles():
    fc = M.front_coherence(np.zeros(120), np.arange(120.0), 60)
    assert fc["undefined"] and fc["skipped_cycles"] == 2


def test_uniform_heading_entropy_near_max():
    th = np.random.default_rng(0).uniform(0, 2 * np.pi, 100_000)
    assert M.heading_entropy(th) == pytest.approx(math.log(36), abs=2e-3)


def test_random_walk_tortuosity():
    rng = np.random.default_rng(1)
    steps = rng.standard_normal((60, 200, 2))
    track = np.concatenate([np.zeros((1, 200, 2)), np.cumsum(steps, axis=0)])
    assert M.tortuosity(track)["mean"] > 1.5
    line = np.linspace(0, 10, 11)[:, None, None] * np.array([[[1.0, 0.0]]])
    assert M.tortuosity(line)["mean"] == pytest.approx(1.0)


def test_point_process_lattice_and_cluster():
    xs = (np.arange(20) + 0.5) * 5.0
    lattice = np.stack(np.meshgrid(xs, xs), -1).reshape(-1, 2)
    lat = M.point_process_stats(lattice, [1.0, 2.0, 3.0], 100.0, torus=True)
    assert max(lat["g"]) < 0.05 and lat["K"] == [0.0, 0.0, 0.0]
    rng = np.random.default_rng(2)
    parents = rng.uniform(0, 100, (20, 2))
    cl = (parents[:, None, :] + rng.normal(0, 1.0, (20, 20, 2))).reshape(-1, 2) % 100
    cs = M.point_process_stats(cl, [1.0, 2.0, 3.0], 100.0, torus=True)
    assert min(cs["K_norm"]) > 2.0
    few = M.point_process_stats(cl[:5], [1.0, 2.0], 100.0)
    assert few["undefined"] and set(few) >= {"K", "K_norm", "g"}


def test_coverage_distance_quadrature():
    # [DERIVED] mean distance from the centre of a side-2 square: (sqrt2 + asinh 1) / 3
    g = (np.arange(400) + 0.5) / 400 * 2 - 1
    probes = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    exact = (math.sqrt(2) + math.asinh(1)) / 3
    assert M.coverage_distance([[0.0, 0.0]], probes) == pytest.approx(exact, rel=1e-4)


def test_front_coherence_null_and_antiphase():
    rng = np.random.default_rng(3)
    T = 600
    driver = np.tile(np.sin(np.linspace(0, 2 * np.pi, T, endpoint=False)) + 1, 50)
    null = M.front_coherence(rng.poisson(2.0, 50 * T), driver, T)
    assert abs(null["coherence"]) < 0.02
    anti = M.front_coherence(2.5 - driver, driver, T)
    assert anti["coherence"] == pytest.approx(-1.0)
