import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from bonegraph.features import (
    GROUP_ORDER,
    FeatureConfig,
    FeatureStack,
    PATCH_STATS,
    curvature_map,
    cw_cumulative,
    cw_local_statistics,
    extract_all,
    gabor_kernel,
    gabor_response,
    haar_center_surround,
    lbp_family,
    load_stack,
    patch_statistics,
    rayleigh_fit_error,
    rayleigh_fit_values,
    save_stack,
)
from bonegraph.imagecore import Image

FAST_CONF = [np.zeros((32, 32))] * 4


def random_image(rng, shape=(32, 32)):
    return rng.random(shape)


# ------------------------------------------------------------ patch statistics


def test_patch_stats_constant_image():
    st_ = patch_statistics(np.full((12, 12), 0.5), 2)
    area = 25
    expect = {"mean": 0.5, "median": 0.5, "variance": 0, "std": 0, "entropy": 0,
              "energy": 0.25 * area, "skewness": 0, "kurtosis": 0}
    for k, v in expect.items():
        np.testing.assert_allclose(st_[k], v, atol=1e-12, err_msg=k)


def test_patch_variance_population_convention():
    vals = np.array([0.0, 0.5, 1.0])
    assert vals.var() == pytest.approx(1 / 6)
    # a 3-wide mirrored row [0, .5, 1] seen from the centre is exactly that patch, three times
    st_ = patch_statistics(np.tile(vals, (3, 1)), 1)
    assert st_["mean"][1, 1] == pytest.approx(0.5)
    assert st_["variance"][1, 1] == pytest.approx(1 / 6, abs=1e-12)


def test_patch_stats_match_loop_oracle_at_centre(rng):
    a = random_image(rng, (16, 16))
    st_ = patch_statistics(a, 3)
    ref = oracles.patch_stats_at(a, 8, 8, 3)
    for k in PATCH_STATS:
        assert st_[k][8, 8] == pytest.approx(ref[k], abs=1e-9), k


def test_patch_stats_match_oracle_everywhere(rng):
    a = random_image(rng, (20, 20))
    st_ = patch_statistics(a, 2)
    for r in range(20):
        for c in range(20):
            ref = oracles.patch_stats_at(a, r, c, 2)
            for k in PATCH_STATS:
                assert abs(st_[k][r, c] - ref[k]) <= 1e-6, (k, r, c)


def test_patch_scale_must_be_positive():
    with pytest.raises(ValueError):
        patch_statistics(np.zeros((5, 5)), 0)


# ------------------------------------------------------------- CW local


def test_cw_local_constant():
    a = np.full((40, 6), 0.3)
    np.testing.assert_allclose(cw_local_statistics(a, 3, 0), 0.3, atol=1e-12)
    for order in (1, 2, 3):
        np.testing.assert_allclose(cw_local_statistics(a, 3, order), 0.0, atol=1e-12)


def test_cw_local_ramp():
    h = 100
    a = np.tile((np.arange(h) / h)[:, None], (1, 4))
    sigma = 3
    interior = slice(int(4 * sigma) + 1, h - int(4 * sigma) - 1)
    d1 = cw_local_statistics(a, sigma, 1)[interior]
    d2 = cw_local_statistics(a, sigma, 2)[interior]
    assert np.max(np.abs(d1 - 1 / h)) < 1e-6
    assert np.max(np.abs(d2)) < 1e-6


def test_cw_local_order1_matches_finite_difference(rng):
    col = rng.random((200, 1))
    s0 = cw_local_statistics(col, 5, 0)[:, 0]
    s1 = cw_local_statistics(col, 5, 1)[:, 0]
    fd = (s0[2:] - s0[:-2]) / 2
    assert np.max(np.abs(s1[1:-1] - fd)) < 1e-3


@pytest.mark.parametrize("order", [1, 2, 3])
def test_cw_local_annihilates_low_degree_polynomials(rng, order):
    h = 120
    x = np.arange(h, dtype=np.float64) / h
    coeffs = rng.normal(size=order)
    col = np.polyval(coeffs, x)[:, None]
    sigma = 4
    margin = int(4 * sigma) + 1
    out = cw_local_statistics(col, sigma, order)[margin:-margin]
    assert np.max(np.abs(out)) < 1e-6


def test_cw_local_rejects_tiny_sigma():
    with pytest.raises(ValueError):
        cw_local_statistics(np.zeros((5, 5)), 0.4, 0)


# -------------------------------------------------------- CW cumulative


def test_cw_cumulative_hand_column():
    cum = cw_cumulative(np.array([[0.4], [0.2], [0.0]]))
    assert cum["mean"][0, 0] == pytest.approx(0.2)
    assert cum["sum"][2, 0] == 0.0 and cum["std"][2, 0] == 0.0


def test_cw_cumulative_constant():
    cum = cw_cumulative(np.full((10, 3), 0.7))
    np.testing.assert_allclose(cum["mean"], 0.7, atol=1e-15)
    assert np.all(cum["std"] == 0)


def test_cw_cumulative_matches_suffix_oracle(rng):
    a = rng.random((32, 3))
    cum = cw_cumulative(a)
    for r in range(32):
        for c in range(3):
            s, m, sd = oracles.cumulative_at(a, r, c)
            assert cum["sum"][r, c] == pytest.approx(s, abs=1e-9)
            assert cum["mean"][r, c] == pytest.approx(m, abs=1e-9)
            assert cum["std"][r, c] == pytest.approx(sd, abs=1e-9)


# ------------------------------------------------------------ LBP family


def test_lbp_constant_image_all_bits():
    fam = lbp_family(np.full((6, 6), 0.4))
    assert np.all(fam["LBP"] == 255 / 256)
    assert np.all(fam["extended LBP"] == 255 / 256)


def test_lbp_bright_centre_is_zero():
    a = np.zeros((5, 5))
    a[2, 2] = 1.0
    assert lbp_family(a)["LBP"][2, 2] == 0.0


def test_lbp_matches_oracle(rng):
    a = np.round(rng.random((10, 12)) * 4) / 4  # plenty of ties
    fam = lbp_family(a)
    for r in range(10):
        for c in range(12):
            lbp, mct = oracles.lbp_at(a, r, c)
            assert fam["LBP"][r, c] * 256 == lbp
            assert fam["MCT"][r, c] * 256 == mct


def test_lbp_gamma_invariant(rng):
    a = rng.random((24, 24))
    np.testing.assert_array_equal(lbp_family(a)["LBP"], lbp_family(np.sqrt(a))["LBP"])


# Strictly increasing maps that are exact in floating point on a grid of
# dyadic values, so order (and ties) survive.
GRID = np.arange(17) / 16.0


@given(seed=st.integers(0, 2 ** 31 - 1), shift=st.integers(-8, 8), scale_pow=st.integers(-3, 3),
       expo=st.sampled_from([2, 3]))
def test_lbp_invariant_under_monotone_maps(seed, shift, scale_pow, expo):
    rng = np.random.default_rng(seed)
    a = rng.choice(GRID, size=(12, 12))
    b = a ** expo
    c = a * 2.0 ** scale_pow + shift
    base = lbp_family(a)
    for t in (b, c):
        out = lbp_family(t)
        np.testing.assert_array_equal(out["LBP"], base["LBP"])
        np.testing.assert_array_equal(out["extended LBP"], base["extended LBP"])
    # MCT variants compare against means, so only positive affine maps are exact
    out = lbp_family(c)
    np.testing.assert_array_equal(out["MCT"], base["MCT"])
    np.testing.assert_array_equal(out["extended MCT"], base["extended MCT"])


# ------------------------------------------------------------- Rayleigh


def test_rayleigh_zero_patch():
    assert rayleigh_fit_values(np.zeros(25), 8) == 0.0
    assert np.all(rayleigh_fit_error(np.zeros((6, 6)), 2) == 0)


def test_rayleigh_two_valued_hand_value():
    x = np.array([0.1, 0.9, 0.1, 0.9])
    b2 = (2 * 0.01 + 2 * 0.81) / 8
    width = 0.8 / 8
    centres = 0.1 + (np.arange(8) + 0.5) * width
    pdf = centres / b2 * np.exp(-centres ** 2 / (2 * b2))
    hist = np.zeros(8)
    hist[0] = hist[7] = 0.5
    want = np.linalg.norm(hist - pdf / pdf.sum())
    assert rayleigh_fit_values(x, 8) == pytest.approx(want, abs=1e-9)
    assert oracles.rayleigh_fit(x, 8) == pytest.approx(want, abs=1e-12)


def test_rayleigh_samples_fit_better_than_uniform(rng):
    ray = rng.rayleigh(0.3, 10_000)
    uni = rng.random(10_000)
    assert rayleigh_fit_values(ray, 16) < rayleigh_fit_values(uni, 16)


def test_rayleigh_map_matches_oracle(rng):
    a = rng.random((8, 8))
    out = rayleigh_fit_error(a, 2, 8)
    p = oracles.reflect(a, 2)
    for r, c in [(0, 0), (3, 4), (7, 7)]:
        assert out[r, c] == pytest.approx(oracles.rayleigh_fit(p[r : r + 5, c : c + 5], 8), abs=1e-9)


# -------------------------------------------------------------- Gabor


def test_gabor_constant_is_zero():
    img = Image(np.full((64, 64), 0.6), spacing_mm=0.5)
    assert np.max(np.abs(gabor_response(img))) < 1e-9


def test_gabor_prefers_its_own_frequency():
    cfg = FeatureConfig(gabor_period_px=16.0, gabor_sigma_mm=(2.0, 4.0))
    rows = np.arange(128)[:, None] * np.ones((1, 128))
    f = 1 / 16.0
    power = {}
    for mult in (0.25, 0.5, 1, 2, 4):
        a = 0.5 + 0.5 * np.cos(2 * math.pi * f * mult * rows)
        resp = gabor_response(Image(a, spacing_mm=0.5), cfg)
        power[mult] = np.abs(resp[40:-40, 40:-40]).max()
    assert max(power, key=power.get) == 1


def test_gabor_impulse_returns_flipped_kernel():
    cfg = FeatureConfig(gabor_sigma_mm=(1.0, 1.5))
    img = np.zeros((41, 41))
    img[20, 20] = 1.0
    resp = gabor_response(Image(img, spacing_mm=0.5), cfg)
    k = gabor_kernel((2.0, 3.0), cfg.gabor_period_px, cfg.gabor_theta)
    kh, kw = k.shape[0] // 2, k.shape[1] // 2
    window = resp[20 - kh : 20 + kh + 1, 20 - kw : 20 + kw + 1]
    np.testing.assert_allclose(window, k[::-1, ::-1], atol=1e-9)


# ----------------------------------------------------------- curvature


def test_curvature_ramp_and_constant():
    r, c = np.mgrid[0:20, 0:20]
    assert np.max(np.abs(curvature_map(0.01 * r + 0.02 * c)[2:-2, 2:-2])) < 1e-9
    assert np.all(curvature_map(np.full((8, 8), 0.3)) == 0)


def test_curvature_of_circles():
    r, c = np.mgrid[0:61, 0:61].astype(float)
    dist = np.hypot(r - 30, c - 30)
    k = curvature_map(dist / 100)
    sel = (dist > 5) & (dist < 25)
    rel = np.abs(k[sel] - (-1 / dist[sel])) / (1 / dist[sel])
    assert rel.max() < 0.10


# ---------------------------------------------------------------- Haar


def test_haar_constant_is_zero():
    for m in haar_center_surround(np.full((40, 40), 0.2), [2, 5, 9]):
        assert np.max(np.abs(m)) < 1e-12


def test_haar_bright_square_negative():
    a = np.zeros((41, 41))
    a[18:23, 18:23] = 1.0
    assert haar_center_surround(a, [5])[0][20, 20] < 0


def test_haar_matches_box_sum_oracle(rng):
    a = rng.random((32, 32))
    scales = [2, 5, 9]
    maps = haar_center_surround(a, scales)
    for s, m in zip(scales, maps):
        for r in range(0, 32, 3):
            for c in range(0, 32, 5):
                assert abs(m[r, c] - oracles.haar_at(a, r, c, s)) <= 1e-6


# --------------------------------------------------------------- stack


def small_img(rng, shape=(32, 32)):
    return Image(rng.random(shape), spacing_mm=0.5)


def test_default_stack_counts(rng):
    st_ = extract_all(small_img(rng), FeatureConfig(), FAST_CONF)
    assert st_.n_features == 57
    assert list(st_.groups) == list(GROUP_ORDER)
    assert len(st_.groups) == 21


def test_five_haar_scales_give_56(rng):
    st_ = extract_all(small_img(rng), FeatureConfig(haar_scales_px=(2, 5, 9, 15, 25)), FAST_CONF)
    assert st_.n_features == 56


def test_dropping_kurtosis_removes_three(rng):
    st_ = extract_all(small_img(rng), FeatureConfig(), FAST_CONF)
    assert st_.drop_group("patch kurtosis").n_features == st_.n_features - 3


def test_stack_registry_partitions_indices(rng):
    st_ = extract_all(small_img(rng), FeatureConfig(), FAST_CONF)
    members = sorted(i for idx in st_.groups.values() for i in idx)
    assert members == list(range(st_.n_features))
    assert np.all(np.isfinite(st_.data))
    assert st_.shape == (32, 32)


def test_stack_with_real_confidence_is_finite(rng):
    st_ = extract_all(small_img(rng, (24, 20)))
    assert st_.shape == (24, 20) and np.all(np.isfinite(st_.data))


def test_stack_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        extract_all(small_img(rng), FeatureConfig(), [np.zeros((5, 5))] * 4)


def test_stack_round_trip(tmp_path, rng):
    st_ = extract_all(small_img(rng, (16, 16)), FeatureConfig(), [np.zeros((16, 16))] * 4)
    save_stack(st_, tmp_path / "x.feat")
    back = load_stack(tmp_path / "x.feat")
    assert back.names == st_.names
    np.testing.assert_allclose(back.data, st_.data.astype(np.float32))


def test_stack_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureStack([("a", "b")], np.full((1, 2, 2), np.nan))


def test_config_validation():
    with pytest.raises(ValueError):
        FeatureConfig(patch_scales=(0, 3))
    with pytest.raises(ValueError):
        FeatureConfig(cw_orders=(4,))
