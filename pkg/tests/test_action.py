import numpy as np
import pytest
from hypothesis import given, strategies as st

from noisecoord.action import (
    METHODS, SchedulerConfig, circular_tick_distance, expected_duty, hazard_tick, hybrid_tick,
    phase_kernel, phase_tick, run_action_timing,
)


def _simulate_renewal(p, D, T, rng):
    busy_until, on = -1, 0
    for t in range(T):
        if t >= busy_until and rng.random() < p:
            busy_until = t + D
        on += t < busy_until
    return on / T


def test_expected_duty_against_simulation():
    # [DERIVED] Monte Carlo of the idle-Bernoulli / fixed-duration renewal process
    rng = np.random.default_rng(0)
    for p, D in ((0.0165, 8), (0.2, 3)):
        sim = _simulate_renewal(p, D, 400_000, rng)
        assert sim == pytest.approx(expected_duty(p, D), rel=0.02)
    assert expected_duty(0.0, 8) == 0.0
    assert expected_duty(1.0, 8) == 1.0


def test_lam_target_value():
    # [TRIVIAL] 0.03 * (0.1 + 0.45)
    assert SchedulerConfig().lam_target == pytest.approx(0.0165)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=200))
def test_rate_matching_preserves_mean_rate(u):
    cfg = SchedulerConfig()
    p, lam, flag = hazard_tick(np.array(u), cfg)
    assert not flag
    g = cfg.lam_target / lam.mean()
    np.testing.assert_allclose(p, -np.expm1(-g * lam))
    assert np.all((p >= 0) & (p < 1))


def test_rate_matching_off_uses_raw_hazard():
    cfg = SchedulerConfig(rate_matching=False)
    p, _, _ = hazard_tick(np.array([0.0, 1.0]), cfg)
    np.testing.assert_allclose(p, -np.expm1(-np.array([0.003, 0.03])))


@given(st.integers(0, 10_000), st.integers(0, 59))
def test_circular_distance(t, tau):
    d = int(circular_tick_distance(t, tau, 60))
    assert 0 <= d <= 30
    assert d == min((t - tau) % 60, (tau - t) % 60)


def test_phase_intensity_peaks_at_phase():
    cfg = SchedulerConfig()
    lam = phase_tick(np.array([10]), np.arange(60), cfg)
    assert int(np.argmax(lam)) == 10
    assert lam.max() == pytest.approx(cfg.lam0)
    assert lam.min() >= cfg.lam0 * cfg.eps
    assert phase_kernel(0.0, 8.0) == 1.0


def test_hybrid_endpoints():
    a, b = np.array([0.01]), np.array([0.05])
    assert hybrid_tick(a, b, 0.0)[0][0] == pytest.approx(0.01)
    assert hybrid_tick(a, b, 1.0)[0][0] == pytest.approx(0.05)


@pytest.mark.parametrize("method", METHODS)
def test_every_method_respects_duration(method):
    cfg = SchedulerConfig.for_scale("small", n_agents=200, horizon=300, warmup=20)
    r = run_action_timing(cfg, method, seed=2, check=True)
    log = r.log
    np.testing.assert_array_equal(log.active, log.recompute_active(cfg.horizon, cfg.duration))
    for a in np.unique(log.agent):
        assert np.all(np.diff(np.sort(log.tick[log.agent == a])) >= cfg.duration)
    assert log.active.max() <= cfg.n_agents
    assert r.summary["n_events"] > 0


def test_poisson_duty_matches_renewal_prediction():
    cfg = SchedulerConfig.for_scale("small")
    duty = np.mean([run_action_timing(cfg, "poisson", s).summary["duty"] for s in range(3)])
    assert duty == pytest.approx(expected_duty(-np.expm1(-cfg.lam_target), cfg.duration), rel=0.03)


def test_unknown_method():
    with pytest.raises(ValueError):
        run_action_timing(SchedulerConfig.for_scale("small", horizon=5), "bogus")


from noisecoord.action import (  # noqa: E402
    FixedPeriodScheduler, PoissonScheduler, SchedulerState, SinusoidScheduler,
)
from noisecoord.noise import SeedBundle  # noqa: E402


def test_rate_matching_examples():
    cfg = SchedulerConfig(eps=0.0, alpha_ema=0.0, lam0=1.0)
    p, lam, _ = hazard_tick(np.full(5, 0.5), cfg)
    np.testing.assert_allclose(p, -np.expm1(-0.5))
    p, lam, _ = hazard_tick(np.full(3, 0.2), cfg)
    np.testing.assert_allclose(lam * cfg.lam_target / lam.mean(), 0.5)


def test_rate_matching_monte_carlo():
    cfg = SchedulerConfig()
    rng = np.random.default_rng(0)
    u = rng.beta(0.5, 2.0, 1000)
    p, _, _ = hazard_tick(u, cfg)
    starts = sum((rng.random(1000) < p).sum() for _ in range(100))
    rate = -np.log1p(-starts / 100_000)
    assert rate == pytest.approx(cfg.lam_target, rel=0.05)


def test_phase_kernel_examples():
    assert phase_kernel(8.0, 8.0) == pytest.approx(np.exp(-0.5))
    assert int(circular_tick_distance(1, 59, 60)) == 2
    assert hybrid_tick(np.array([0.2]), np.array([0.4]), 0.5)[0][0] == pytest.approx(0.3)


def _state(n):
    return SchedulerState(pos=np.zeros((n, 2)), heading=np.zeros(n),
                          last_start=np.full(n, -10 ** 9, dtype=np.int64))


def test_poisson_scheduler_duty_monte_carlo():
    cfg = SchedulerConfig(n_agents=100)
    s = PoissonScheduler(cfg, SeedBundle(0))
    st_ = _state(100)
    on = 0
    for t in range(3000):
        idle = st_.idle(t, cfg.duration)
        st_.last_start[s.decide(st_, t, idle)] = t
        if t >= 500:
            on += (~st_.idle(t, cfg.duration)).sum()
    target = expected_duty(-np.expm1(-cfg.lam_target), cfg.duration)
    assert on / 250_000 == pytest.approx(target, rel=0.05)


def test_fixed_period_without_jitter():
    cfg = SchedulerConfig(n_agents=20, fixed_period_std=0.0, fixed_jitter=0, duration=1)
    s = FixedPeriodScheduler(cfg, SeedBundle(1))
    st_ = _state(20)
    starts = {i: [] for i in range(20)}
    for t in range(80):
        for i in np.flatnonzero(s.decide(st_, t, st_.idle(t, 1))):
            starts[i].append(t)
            st_.last_start[i] = t
    for ts in starts.values():
        assert np.all(np.diff(ts) == 8) and ts[0] < 8


def test_sinusoid_amplitude_regression():
    # [DERIVED] least-squares fit of counts on sin/cos at the forcing period
    cfg = SchedulerConfig(n_agents=2000, duration=1, lam0=0.03)
    s = SinusoidScheduler(cfg, SeedBundle(0))
    st_ = _state(2000)
    T = 10_000
    counts = np.empty(T)
    for t in range(T):
        counts[t] = s.decide(st_, t, np.ones(2000, bool)).sum()
    tt = np.arange(T)
    X = np.stack([np.ones(T), np.sin(2 * np.pi * tt / 120), np.cos(2 * np.pi * tt / 120)], -1)
    coef = np.linalg.lstsq(X, counts / 2000, rcond=None)[0]
    amp = np.hypot(coef[1], coef[2])
    assert amp == pytest.approx(0.3 * cfg.lam_target, rel=0.10)


def test_same_seed_same_log():
    cfg = SchedulerConfig.for_scale("small", horizon=150)
    a, b = run_action_timing(cfg, "perlin_phase", 4), run_action_timing(cfg, "perlin_phase", 4)
    assert np.array_equal(a.log.tick, b.log.tick) and np.array_equal(a.log.agent, b.log.agent)
