import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from noisecoord.noise import (
    PERLIN_RAW_BOUND, FieldSampler, NoiseSpec, SeedBundle, _GRAD3, _perlin3_table,
    derive_substream, dump_raster, fbm, fbm_raw, fnv1a64, hazard_map, load_raster,
    octave_frequencies, perlin3, phase_map, quantile_map, sample_raster, splitmix64, to_unit,
)

# Reference permutation from the published improved-noise implementation.
REF_PERM = [
    151, 160, 137, 91, 90, 15, 131, 13, 201, 95, 96, 53, 194, 233, 7, 225, 140, 36, 103, 30,
    69, 142, 8, 99, 37, 240, 21, 10, 23, 190, 6, 148, 247, 120, 234, 75, 0, 26, 197, 62, 94,
    252, 219, 203, 117, 35, 11, 32, 57, 177, 33, 88, 237, 149, 56, 87, 174, 20, 125, 136, 171,
    168, 68, 175, 74, 165, 71, 134, 139, 48, 27, 166, 77, 146, 158, 231, 83, 111, 229, 122, 60,
    211, 133, 230, 220, 105, 92, 41, 55, 46, 245, 40, 244, 102, 143, 54, 65, 25, 63, 161, 1,
    216, 80, 73, 209, 76, 132, 187, 208, 89, 18, 169, 200, 196, 135, 130, 116, 188, 159, 86,
    164, 100, 109, 198, 173, 186, 3, 64, 52, 217, 226, 250, 124, 123, 5, 202, 38, 147, 118,
    126, 255, 82, 85, 212, 207, 206, 59, 227, 47, 16, 58, 17, 182, 189, 28, 42, 223, 183, 170,
    213, 119, 248, 152, 2, 44, 154, 163, 70, 221, 153, 101, 155, 167, 43, 172, 9, 129, 22, 39,
    253, 19, 98, 108, 110, 79, 113, 224, 232, 178, 185, 112, 104, 218, 246, 97, 228, 251, 34,
    242, 193, 238, 210, 144, 12, 191, 179, 162, 241, 81, 51, 145, 235, 249, 14, 239, 107, 49,
    192, 214, 31, 181, 199, 106, 157, 184, 84, 204, 176, 115, 121, 50, 45, 127, 4, 150, 254,
    138, 236, 205, 93, 222, 114, 67, 29, 24, 72, 243, 141, 128, 195, 78, 66, 215, 61, 156, 180,
]


def _ref_noise(x, y, z, p):
    """Scalar transcription of the reference algorithm (branchy grad)."""
    def fade(t):
        return t * t * t * (t * (t * 6 - 15) + 10)

    def lerp(t, a, b):
        return a + t * (b - a)

    def grad(h, x, y, z):
        h &= 15
        u = x if h < 8 else y
        v = y if h < 4 else (x if h in (12, 14) else z)
        return (u if h & 1 == 0 else -u) + (v if h & 2 == 0 else -v)

    X, Y, Z = int(math.floor(x)) & 255, int(math.floor(y)) & 255, int(math.floor(z)) & 255
    x, y, z = x - math.floor(x), y - math.floor(y), z - math.floor(z)
    u, v, w = fade(x), fade(y), fade(z)
    A = p[X] + Y
    AA, AB = p[A] + Z, p[A + 1] + Z
    B = p[X + 1] + Y
    BA, BB = p[B] + Z, p[B + 1] + Z
    return lerp(w, lerp(v, lerp(u, grad(p[AA], x, y, z), grad(p[BA], x - 1, y, z)),
                        lerp(u, grad(p[AB], x, y - 1, z), grad(p[BB], x - 1, y - 1, z))),
                lerp(v, lerp(u, grad(p[AA + 1], x, y, z - 1), grad(p[BA + 1], x - 1, y, z - 1)),
                     lerp(u, grad(p[AB + 1], x, y - 1, z - 1), grad(p[BB + 1], x - 1, y - 1, z - 1))))


PERM2 = np.array(REF_PERM + REF_PERM, dtype=np.int64)


def test_reference_permutation_is_a_permutation():
    assert sorted(REF_PERM) == list(range(256))


def test_raw_noise_matches_reference_value():
    # [DERIVED] value produced by the reference implementation at (3.14, 42, 7)
    assert _ref_noise(3.14, 42.0, 7.0, PERM2) == pytest.approx(0.136919958784, abs=1e-12)
    assert float(_perlin3_table(3.14, 42.0, 7.0, PERM2)) == pytest.approx(0.136919958784, abs=1e-12)


def test_vectorised_matches_scalar_reference():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-300, 300, size=(400, 3))
    vec = _perlin3_table(pts[:, 0], pts[:, 1], pts[:, 2], PERM2)
    ref = np.array([_ref_noise(*p, PERM2) for p in pts])
    np.testing.assert_allclose(vec, ref, atol=1e-13)


def test_raw_bound_is_the_maximum():
    # max over the cell of sum_i w_i(x) * max_g g.(x - c_i), with gradients chosen per corner
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], float)

    def fade(t):
        return t * t * t * (t * (t * 6 - 15) + 10)

    def neg(x):
        x = np.clip(x, 0, 1)
        f = fade(x)
        total = 0.0
        for c in corners:
            w = np.prod(np.where(c == 1, f, 1 - f))
            total += w * np.max(_GRAD3 @ (x - c))
        return -total

    best = max(-minimize(neg, x0, method="Nelder-Mead",
                         options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 5000}).fun
               for x0 in np.random.default_rng(0).uniform(0.2, 0.8, size=(12, 3)))
    assert best == pytest.approx(PERLIN_RAW_BOUND, abs=1e-7)


@given(st.integers(0, 2**63), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(-1e3, 1e3))
def test_perlin_range(seed, x, y, t):
    v = perlin3(x, y, t, seed)
    assert -1.0 <= v <= 1.0


def test_perlin_zero_on_lattice():
    g = np.arange(-5, 6, dtype=float)
    X, Y, T = np.meshgrid(g, g, g)
    assert np.all(perlin3(X, Y, T, 7) == 0.0)


def test_perlin_is_continuous():
    xs = np.linspace(0, 10, 20001)
    v = perlin3(xs, 0.3, 0.7, 3)
    assert np.max(np.abs(np.diff(v))) < 0.01


@given(st.integers(1, 8), st.floats(0.1, 1.0), st.integers(0, 2**32))
def test_fbm_range(octaves, persistence, seed):
    spec = NoiseSpec(0.05, octaves, persistence, 2.0, seed=seed)
    rng = np.random.default_rng(seed % 1000)
    v = fbm_raw(spec, rng.uniform(0, 500, 256), rng.uniform(0, 500, 256), 1.5)
    assert np.all(np.abs(v) <= 1.0)


def test_fbm_single_octave_equals_scaled_perlin():
    spec = NoiseSpec(0.1, 1, seed=11)
    x, y = np.linspace(0, 50, 30), np.linspace(3, 9, 30)
    np.testing.assert_allclose(fbm_raw(spec, x, y, 0.25), perlin3(0.1 * x, 0.1 * y, 0.25, 11))


def test_fbm_deterministic_and_seed_sensitive():
    x = np.linspace(0, 100, 50)
    a = fbm_raw(NoiseSpec(0.03, 4, seed=1), x, x, 0.0)
    assert np.array_equal(a, fbm_raw(NoiseSpec(0.03, 4, seed=1), x, x, 0.0))
    assert not np.array_equal(a, fbm_raw(NoiseSpec(0.03, 4, seed=2), x, x, 0.0))


def test_toroidal_field_wraps():
    spec = NoiseSpec(0.013, 3, seed=5)
    s = FieldSampler(spec, period=200.0)
    y = np.linspace(0, 200, 17)
    np.testing.assert_allclose(s.sample(np.zeros_like(y), y), s.sample(np.full_like(y, 200.0), y),
                               atol=1e-12)
    for f, cells in octave_frequencies(spec, 200.0):
        assert f * 200.0 == pytest.approx(cells)


def test_drift_and_resample_modes():
    spec = NoiseSpec(0.02, 2, seed=4)
    d = FieldSampler(spec, mode="drift", v_drift=0.01)
    x = np.linspace(0, 100, 10)
    v0 = d.sample(x, x)
    ahead = fbm(d, x, x, t=5)
    d.advance(5)
    assert d.current_phase == pytest.approx(0.05)
    np.testing.assert_allclose(d.sample(x, x), ahead)
    assert not np.allclose(v0, ahead)
    r = FieldSampler(spec, mode="resample", t_cycle=10)
    a = r.sample(x, x)
    r.advance(9)
    np.testing.assert_array_equal(r.sample(x, x), a)
    r.advance(1)
    assert not np.allclose(r.sample(x, x), a)
    with pytest.raises(ValueError):
        r.advance(-1)


@given(st.floats(-5, 5))
def test_to_unit_clamped(n):
    u = to_unit(n)
    assert 0.0 <= u <= 1.0
    if -1 <= n <= 1:
        assert u == pytest.approx((n + 1) / 2)


def test_hash_reference_vectors():
    # [DERIVED] published FNV-1a and SplitMix64 test vectors
    assert fnv1a64("") == 0xCBF29CE484222325
    assert fnv1a64("a") == 0xAF63DC4C8601EC8C
    assert fnv1a64("foobar") == 0x85944171F73967E8
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_substreams():
    b = SeedBundle(1234)
    assert b.get("place") == splitmix64(1234 ^ fnv1a64("place"))
    assert b.get("place") == derive_substream(1234, "place")
    assert b.get("place") != b.get("layout")
    o = SeedBundle(1234, substreams={"place": 5})
    assert o.get("place") == 5 and o.get("layout") == b.get("layout")
    with pytest.raises(ValueError):
        derive_substream(1, "")


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=400),
       st.lists(st.integers(1, 20), min_size=1, max_size=6))
def test_quantile_map_histogram(values, weights):
    fr = np.array(weights, float) / sum(weights)
    c = quantile_map(values, fr)
    counts = np.bincount(c, minlength=len(fr))
    assert np.all(np.abs(counts - fr * len(values)) <= 1.0 + 1e-9)
    v = np.asarray(values)
    # monotone: a larger value never gets a smaller class
    o = np.argsort(v, kind="stable")
    assert np.all(np.diff(c[o]) >= 0)


def test_quantile_map_rejects_bad_fractions():
    with pytest.raises(ValueError):
        quantile_map([1, 2], [0.5, 0.6])
    with pytest.raises(ValueError):
        quantile_map([], [1.0])


@given(st.floats(0, 1), st.floats(0.001, 0.5), st.floats(0, 0.99))
def test_hazard_map(u, lam0, eps):
    p = hazard_map(u, lam0, eps)
    lam = lam0 * (eps + (1 - eps) * u)
    assert p == pytest.approx(1 - math.exp(-lam))
    assert hazard_map(0.0, lam0, eps) <= p + 1e-15 <= hazard_map(1.0, lam0, eps) + 1e-15


@given(st.floats(0, 1), st.integers(1, 5000))
def test_phase_map(u, T):
    tau = phase_map(u, T)
    assert 0 <= tau <= T - 1
    assert tau == min(math.floor(u * T), T - 1)


def test_raster_roundtrip(tmp_path):
    s = FieldSampler(NoiseSpec(0.05, 3, seed=9))
    a = sample_raster(s, 32, 16)
    assert a.shape == (16, 32)
    dump_raster(tmp_path / "f.raster", a, spec_hash="abc")
    b, h = load_raster(tmp_path / "f.raster")
    assert np.array_equal(a, b) and h["spec"] == "abc" and h["width"] == 32
    ints = np.arange(12).reshape(3, 4)
    dump_raster(tmp_path / "i.raster", ints)
    c, h = load_raster(tmp_path / "i.raster")
    assert np.array_equal(c, ints) and h["dtype"] == "int32"


def test_spec_validation():
    for kw in ({"octaves": 0}, {"persistence": 0.0}, {"lacunarity": 1.0}, {"base_frequency": 0}):
        with pytest.raises(ValueError):
            NoiseSpec(**kw)
    assert NoiseSpec(seed=3).spec_hash() == NoiseSpec(seed=3).spec_hash()
    assert NoiseSpec.from_dict(NoiseSpec(seed=3).to_dict()) == NoiseSpec(seed=3)


def test_perlin_monte_carlo_mean():
    rng = np.random.default_rng(0)
    p = rng.uniform(0, 256, (100_000, 3))
    v = perlin3(p[:, 0], p[:, 1], p[:, 2], 17)
    assert v.min() >= -1 and v.max() <= 1
    assert abs(v.mean()) <= 0.01
    assert perlin3(1.3, 2.7, 0.4, 5) == perlin3(1.3, 2.7, 0.4, 5)


def test_amplitude_norm():
    assert NoiseSpec(octaves=4, persistence=0.5).amplitude_norm == 1.875


def test_fbm_matches_naive_octave_sum():
    spec = NoiseSpec(0.01, 4, 0.5, 2.0, offsets=(3.0, 7.0, 0.5), seed=21)
    rng = np.random.default_rng(2)
    x, y = rng.uniform(0, 2000, 10_000), rng.uniform(0, 2000, 10_000)
    naive = sum(0.5 ** k * perlin3(0.01 * 2 ** k * x + 3.0, 0.01 * 2 ** k * y + 7.0, 1.5, 21)
                * PERLIN_RAW_BOUND for k in range(4)) / (1.875 * PERLIN_RAW_BOUND)
    np.testing.assert_allclose(fbm_raw(spec, x, y, 1.0), naive, atol=1e-12)


def test_fbm_range_on_parameter_grid():
    rng = np.random.default_rng(3)
    p = rng.uniform(0, 5000, (100_000, 3))
    for f in (0.005, 0.01, 0.02):
        for K in (3, 4, 5):
            for per in (0.45, 0.55):
                for lac in (1.8, 2.2):
                    v = fbm_raw(NoiseSpec(f, K, per, lac, seed=K), p[:, 0], p[:, 1], p[:, 2] * 0.01)
                    assert np.abs(v).max() <= 1.0


def test_to_unit_endpoints():
    assert (to_unit(-1), to_unit(0), to_unit(1)) == (0.0, 0.5, 1.0)


def test_sampler_boundaries_and_replay():
    d = FieldSampler(NoiseSpec(seed=1), mode="drift", v_drift=0.002).advance(100)
    assert d.current_phase == pytest.approx(0.2)
    r = FieldSampler(NoiseSpec(seed=1), mode="resample", t_cycle=600).advance(599)
    o599 = r.offsets
    o600 = r.advance(1).offsets
    assert o600 != o599 and r.advance(1).offsets == o600
    a = FieldSampler(NoiseSpec(seed=8), mode="drift", v_drift=0.01).advance(37)
    b = FieldSampler(NoiseSpec(seed=8), mode="drift", v_drift=0.01).advance(37)
    x = np.linspace(0, 500, 300)
    assert np.array_equal(a.sample(x, x[::-1]), b.sample(x, x[::-1]))


def test_substream_collision_scan():
    seeds = range(10_000)
    lay = [derive_substream(s, "layout") for s in seeds]
    noi = [derive_substream(s, "noise") for s in seeds]
    assert all(a != b for a, b in zip(lay, noi))
    assert len(set(derive_substream(s, "place") for s in seeds)) == 10_000


def test_quantile_map_examples():
    assert quantile_map([0.1, 0.2, 0.3, 0.4], [0.25, 0.75]).tolist() == [0, 1, 1, 1]
    assert quantile_map([5.0] * 4, [0.5, 0.5]).tolist() == [0, 0, 1, 1]
    assert set(quantile_map(np.random.default_rng(0).random(50), [1.0]).tolist()) == {0}


def test_hazard_and_phase_examples():
    assert hazard_map(0.0, 1.0, 0.0) == 0.0
    assert hazard_map(0.5, 1.0, 0.0) == pytest.approx(0.39347, abs=1e-5)
    assert hazard_map(1.0, 2.0, 0.2) == pytest.approx(0.86466, abs=1e-5)
    with pytest.raises(ValueError):
        hazard_map(0.5, 1.0, 1.0)
    assert (phase_map(0.0, 60), phase_map(0.999, 60), phase_map(1.0, 60)) == (0, 59, 59)
