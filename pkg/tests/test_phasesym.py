import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bonegraph.phasesym import (
    PsConfig,
    f_ps,
    filter_responses,
    frequency_grid,
    log_gabor,
    log_gabor_bank,
    orientation_schedule,
    phase_symmetry,
)


def test_schedule_examples():
    np.testing.assert_allclose(orientation_schedule(1, 0.7), [math.pi / 2])
    np.testing.assert_allclose(orientation_schedule(3, math.pi / 3),
                               [math.pi / 2 - math.pi / 3, math.pi / 2, math.pi / 2 + math.pi / 3])
    np.testing.assert_allclose(orientation_schedule(2, math.pi / 12),
                               [math.pi / 2 - math.pi / 12, math.pi / 2 + math.pi / 12])
    with pytest.raises(ValueError):
        orientation_schedule(0, 1.0)


def test_log_gabor_peak_and_bandwidth():
    w0 = 0.3
    assert log_gabor(w0, 1.0, w0, 0.25 * w0, 1.0, 0.5) == pytest.approx(1.0)
    # radial factor at omega = kappa is exp(-1/2)
    assert log_gabor(0.25 * w0, 1.0, w0, 0.25 * w0, 1.0, 0.5) == pytest.approx(math.exp(-0.5))


def test_bank_dc_is_zero():
    for row in log_gabor_bank((32, 40), PsConfig(n_orient=3, n_scale=2)):
        for g in row:
            assert g[0, 0] == 0.0
            assert g.shape == (32, 40)


def test_constant_image_gives_zero():
    ps = phase_symmetry(np.full((64, 64), 0.7))
    assert np.max(np.abs(ps.raw)) < 1e-9
    assert np.all(ps.normalized == 0)


def test_line_is_localised():
    a = np.zeros((64, 64))
    a[30, :] = 1.0
    ps = phase_symmetry(a, PsConfig(n_orient=1, wavelength_px=8))
    assert ps.normalized.max() == pytest.approx(1.0)
    rows = np.argmax(ps.normalized, axis=0)
    assert np.all(np.abs(rows - 30) <= 1)


@given(seed=st.integers(0, 10_000), c=st.floats(-2, 2))
def test_raw_nonnegative_and_offset_invariant(seed, c):
    a = np.random.default_rng(seed).random((32, 32))
    p1 = phase_symmetry(a)
    p2 = phase_symmetry(a + c)
    assert np.all(p1.raw >= 0)
    assert np.max(np.abs(p1.raw - p2.raw)) < 1e-6
    assert 0 <= p1.normalized.min() and p1.normalized.max() <= 1


def test_response_linearity(rng):
    a = rng.random((32, 32))
    r1 = filter_responses(a)
    r2 = filter_responses(2 * a)
    for row1, row2 in zip(r1, r2):
        for x, y in zip(row1, row2):
            np.testing.assert_allclose(y.real, 2 * x.real, atol=1e-9)
            np.testing.assert_allclose(y.imag, 2 * x.imag, atol=1e-9)


def test_f_ps_examples():
    assert f_ps(np.array([0.0]), 0.3)[0] == 1.0
    assert f_ps(np.array([1.0]), 0.01)[0] == pytest.approx(math.exp(-100), rel=1e-12)
    assert f_ps(np.array([0.5]), 0.5)[0] == pytest.approx(0.3679, abs=1e-4)
    with pytest.raises(ValueError):
        f_ps(np.array([0.5]), 0.0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.05, 2))
def test_f_ps_decreasing(a, b, s0):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-9:  # below float64 resolution of exp near 1
        return
    fa, fb = f_ps(np.array([lo, hi]), s0)
    assert fa > fb or (fa == fb == 0.0)


def test_frequency_grid_horizontal_line_direction():
    omega, phi = frequency_grid((8, 8))
    # frequencies along the depth axis only (horizontal structures) have angle +-pi/2
    assert phi[1, 0] == pytest.approx(math.pi / 2)
    assert omega[0, 0] == 0


def test_config_validation():
    with pytest.raises(ValueError):
        PsConfig(wavelength_px=1.5)
    with pytest.raises(ValueError):
        PsConfig(n_orient=0)
    with pytest.raises(ValueError):
        PsConfig(sigma0=0)
