import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from fbmlab.model import SamplingScheme, Theta
from fbmlab.spectral import (
    c_H,
    dH_fgn_autocov,
    dH_log_cH,
    fgn_autocov,
    increment_autocov,
    noise_diff_autocov,
    spectral_f_H,
    spectral_g,
    spectral_h,
)

H_ST = st.floats(0.02, 0.98)


def test_fgn_autocov_trivial_values():
    assert fgn_autocov(0.5, 0) == 1.0
    np.testing.assert_allclose(fgn_autocov(0.5, np.arange(1, 6)), 0.0, atol=1e-15)
    assert fgn_autocov(0.3, 1) == pytest.approx(0.5 * (2 ** 0.6 - 2))


@given(H_ST, st.integers(0, 50))
def test_fgn_autocov_symmetric(H, k):
    assert fgn_autocov(H, k) == fgn_autocov(H, -k)


@given(H_ST)
def test_fgn_partial_sums_reproduce_fbm_variance(H):
    # Var(sum_{i<m} F_i) = m^{2H}
    m = 37
    k = np.arange(-(m - 1), m)
    total = np.sum((m - np.abs(k)) * fgn_autocov(H, k))
    assert total == pytest.approx(m ** (2 * H), rel=1e-10)


@given(st.floats(0.05, 0.95), st.integers(0, 20))
def test_dH_fgn_autocov_matches_finite_difference(H, k):
    h = 1e-6
    fd = (fgn_autocov(H + h, k) - fgn_autocov(H - h, k)) / (2 * h)
    assert dH_fgn_autocov(H, k) == pytest.approx(fd, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("K", [0, 1, 2, 3])
def test_noise_diff_autocov_matches_filter(K):
    coef = np.array([math.comb(K + 1, i) * (-1) ** i for i in range(K + 2)], dtype=float)
    full = np.correlate(coef, coef, mode="full")
    lags = np.arange(-(K + 1), K + 2)
    np.testing.assert_array_equal(noise_diff_autocov(K, lags), full)
    assert noise_diff_autocov(K, K + 2) == 0.0


def test_noise_diff_autocov_K0():
    assert noise_diff_autocov(0, 0) == 2.0 and noise_diff_autocov(0, 1) == -1.0


def test_increment_autocov_combines_terms():
    th, sch = Theta(0.3, 2.0, 0.5), SamplingScheme(100, nu=0.8, K=1)
    k = np.arange(4)
    expect = 4.0 * 0.01 ** 0.6 * fgn_autocov(0.3, k) + 0.25 * 0.64 * noise_diff_autocov(1, k)
    np.testing.assert_allclose(increment_autocov(th, sch, k), expect, rtol=1e-14)


@pytest.mark.parametrize("H", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_c_H_against_mpmath(H):
    ref = mpmath.gamma(2 * H + 1) * mpmath.sin(mpmath.pi * H) / (2 * mpmath.pi)
    assert c_H(H) == pytest.approx(float(ref), rel=1e-13)
    fd = (math.log(c_H(H + 1e-6)) - math.log(c_H(H - 1e-6))) / 2e-6
    assert dH_log_cH(H) == pytest.approx(fd, rel=1e-7)


def test_dH_log_cH_guard():
    with pytest.raises(ValueError):
        dH_log_cH(1e-6)


@pytest.mark.parametrize("H", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("lam", [0.01, 0.7, 2.0, math.pi])
def test_f_H_against_hurwitz_zeta(H, lam):
    # sum_t |lam + 2 pi t|^{-a} = (2 pi)^{-a} (zeta(a, x) + zeta(a, 1 - x)), x = lam / 2 pi
    a = 1 + 2 * H
    x = mpmath.mpf(lam) / (2 * mpmath.pi)
    s = (2 * mpmath.pi) ** (-a) * (mpmath.zeta(a, x) + mpmath.zeta(a, 1 - x))
    ref = float(c_H(H) * 2 * (1 - mpmath.cos(lam)) * s)
    assert spectral_f_H(lam, H) == pytest.approx(ref, rel=1e-11)


@pytest.mark.parametrize("H", [0.25, 0.5, 0.75])
def test_f_H_integrates_to_autocovariance(H):
    for k in (0, 1, 3):
        # lam = u^2 removes the integrable singularity at 0
        val, _ = integrate.quad(
            lambda u: 4 * u * spectral_f_H(u * u, H, T=200) * math.cos(k * u * u),
            1e-9, math.sqrt(math.pi), limit=200)
        assert val == pytest.approx(fgn_autocov(H, k), abs=5e-6)


def test_f_H_rejects_bad_frequencies():
    with pytest.raises(ValueError):
        spectral_f_H(0.0, 0.5)
    with pytest.raises(ValueError):
        spectral_f_H(4.0, 0.5)
    with pytest.raises(ValueError):
        spectral_f_H(1.0, 0.5, T=0)


@pytest.mark.parametrize("K", [0, 1, 2])
def test_noise_spectrum_reproduces_noise_autocov(K):
    th, sch = Theta(0.4, 0.0, 1.0), SamplingScheme(64, K=K)
    for k in range(K + 3):
        val, _ = integrate.quad(lambda lam: 2 * spectral_h(lam, th, sch) * math.cos(k * lam),
                                1e-12, math.pi)
        assert val == pytest.approx(noise_diff_autocov(K, k), abs=1e-10)
    assert spectral_g(math.pi, K) == 4.0 ** (K + 1)
