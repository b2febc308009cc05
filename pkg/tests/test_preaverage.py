import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbmlab.model import DegenerateInputError, ObservationSeries, SamplingScheme, Theta
from fbmlab.preaverage import (
    WeightComplianceError,
    WeightFunction,
    alpha,
    alpha_vector,
    corrected_energy,
    d_level,
    default_weight,
    dH_kappa_inf,
    dH_phi_H,
    energy,
    energy_bias,
    expected_energy,
    gamma_p,
    gamma_p_oracle,
    j_level,
    j_pair,
    j_star,
    kappa_bar,
    kappa_inf,
    kappa_p,
    phi_H,
    wavelet_coeff,
    wavelet_coeffs,
    weight_self_correlation,
)
from fbmlab.simulate import RngStream, synthesize
from fbmlab.spectral import fgn_autocov

ONE = WeightFunction.constant_one()
WEIGHTS = [ONE, WeightFunction.polynomial(1), WeightFunction.polynomial(2)]


def kappa_double_sum(p, H, w):
    ws = w(np.arange(p) / p)
    lag = np.subtract.outer(np.arange(p), np.arange(p)) / p
    return float(ws @ phi_H(lag, H) @ ws / p ** 2)


def coefficient_vector(j, p, n, w):
    """Weights of a wavelet coefficient on X_0..X_n."""
    c = np.zeros(n + 1)
    ws = w.samples(p)
    for block, sign in ((0, 1.0), (1, -2.0), (2, 1.0)):
        start = (j + block) * p
        c[start:start + p] += sign * ws
    return c / math.sqrt(n * p)


def fbm_cov(n, H):
    t = np.arange(n + 1) / n
    s, u = np.meshgrid(t, t, indexing="ij")
    return 0.5 * (s ** (2 * H) + u ** (2 * H) - np.abs(s - u) ** (2 * H))


def ma_cov(n, K):
    coef = np.array([math.comb(K, i) * (-1) ** i for i in range(K + 1)], dtype=float)
    r = np.correlate(coef, coef, mode="full")[K:]
    lag = np.abs(np.subtract.outer(np.arange(n + 1), np.arange(n + 1)))
    out = np.zeros(lag.shape)
    for k, v in enumerate(r):
        out[lag == k] = v
    return out


# ----- weights

def test_default_weight_choice_and_compliance():
    assert default_weight(0) == ONE
    for K in (1, 2, 3):
        w = default_weight(K)
        assert w == WeightFunction.polynomial(K)
        w.check_compliance()
        assert ONE.endpoint_violations(K) == [0]
    with pytest.raises(WeightComplianceError):
        ONE.check_compliance(1)


def test_polynomial_weight_values_and_derivatives():
    w = WeightFunction.polynomial(2)
    x = np.linspace(0, 1, 7)
    np.testing.assert_allclose(w(x), x ** 2 * (1 - x) ** 2, atol=1e-15)
    fd = (w(x + 1e-6) - w(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(w.derivative(1, x), fd, atol=1e-8)
    with pytest.raises(ValueError):
        w.derivative(9, x)


def test_tabulated_weight():
    x = np.linspace(0, 1, 201)
    w = WeightFunction.tabulated(x, x * (1 - x), K=1)
    np.testing.assert_allclose(w(np.array([0.3])), 0.21, rtol=1e-6)
    assert w.endpoint_violations() == []
    assert w == WeightFunction.tabulated(x, x * (1 - x), K=1)
    with pytest.raises(ValueError):
        WeightFunction.tabulated([0.1, 1.0], [0, 0])


# ----- phi and kappa

@given(st.floats(0.02, 0.98), st.integers(0, 30))
def test_phi_at_integers_is_second_difference_autocov(H, k):
    rho = lambda m: fgn_autocov(H, m)
    expect = 2 * rho(k) - rho(k + 1) - rho(abs(k - 1))
    assert phi_H(k, H) == pytest.approx(expect, rel=1e-10, abs=1e-12)


@given(st.floats(0.02, 0.98))
def test_phi_at_zero(H):
    assert phi_H(0.0, H) == pytest.approx(4 - 4 ** H, rel=1e-13)
    assert dH_phi_H(0.0, H) == pytest.approx(-(4 ** H) * 2 * math.log(2), rel=1e-12)


@given(st.floats(0.05, 0.95), st.floats(-3, 3))
def test_dH_phi_matches_finite_difference(H, x):
    fd = (phi_H(x, H + 1e-6) - phi_H(x, H - 1e-6)) / 2e-6
    assert dH_phi_H(x, H) == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("w", WEIGHTS, ids=lambda w: w.kind + str(w.K_assoc))
@given(p=st.integers(1, 80), H=st.floats(0.02, 0.98))
def test_kappa_grouped_sum_equals_double_sum(w, p, H):
    assert kappa_p(p, H, w) == pytest.approx(kappa_double_sum(p, H, w), rel=1e-12, abs=1e-15)


def test_kappa_vectorised_matches_scalar():
    Hs = np.array([0.1, 0.4, 0.9])
    np.testing.assert_allclose(kappa_p(9, Hs, ONE), [kappa_p(9, h, ONE) for h in Hs], rtol=1e-14)
    with pytest.raises(ValueError):
        kappa_p(0, 0.5, ONE)


@given(st.floats(0.02, 0.98))
def test_kappa_one_block(H):
    assert kappa_p(1, H, ONE) == pytest.approx(4 - 4 ** H, rel=1e-13)


@pytest.mark.parametrize("H", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("w", WEIGHTS[:2], ids=["one", "poly1"])
def test_kappa_inf_against_mpmath_double_integral(H, w):
    f = lambda x, y: w(np.array([float(x)]))[0] * w(np.array([float(y)]))[0] * phi_H(float(x - y), H)
    mpmath.mp.dps = 15
    ref = mpmath.quad(lambda x: mpmath.quad(lambda y: f(x, y), [0, x, 1]), [0, 1])
    assert kappa_inf(H, w) == pytest.approx(float(ref), rel=1e-7)


@pytest.mark.parametrize("H", [0.3, 0.7])
def test_kappa_p_converges_to_kappa_inf(H):
    gaps = [abs(kappa_bar(p, H, ONE)) for p in (8, 64, 512)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3 * kappa_inf(H, ONE)


@pytest.mark.parametrize("H", [0.2, 0.6])
def test_kappa_gap_respects_the_rate_bound(H):
    # p^(2H^1) |kappa_p - kappa_inf| stays bounded (it in fact tends to 0)
    scaled = [p ** min(2 * H, 1.0) * abs(kappa_bar(p, H, ONE)) for p in 2 ** np.arange(4, 11)]
    assert all(b < a for a, b in zip(scaled, scaled[1:]))


def test_weight_self_correlation_constant_one():
    for u in (0.0, 0.25, 0.9, -0.5):
        assert weight_self_correlation(u, ONE) == pytest.approx(1 - abs(u), rel=1e-13)
    assert weight_self_correlation(1.5, ONE) == 0.0


@pytest.mark.parametrize("H", [0.25, 0.6])
def test_dH_kappa_inf_matches_finite_difference(H):
    for w in WEIGHTS[:2]:
        fd = (kappa_inf(H + 1e-5, w) - kappa_inf(H - 1e-5, w)) / 2e-5
        assert dH_kappa_inf(H, w) == pytest.approx(fd, rel=1e-6)


# ----- alpha and gamma

def test_alpha_examples_and_bounds():
    assert alpha(1, 4, 1, WeightFunction.polynomial(1)) == pytest.approx(-0.0625, abs=1e-15)
    assert alpha(0, 1, 0, ONE) == 1.0
    with pytest.raises(IndexError):
        alpha(4, 4, 1, ONE)
    with pytest.raises(IndexError):
        alpha(-2, 4, 1, ONE)


@given(st.integers(1, 40), st.integers(0, 3))
def test_alpha_vector_matches_scalar_definition(p, K):
    w = WeightFunction.polynomial(K)
    vec = alpha_vector(p, K, w)
    ref = [alpha(l, p, K, w) for l in range(-K, p)]
    np.testing.assert_allclose(vec, ref, atol=1e-14)


@given(st.integers(1, 64), st.integers(0, 3), st.sampled_from(["one", "poly"]))
def test_gamma_formula_equals_filter_oracle_when_p_at_least_K(p, K, kind):
    w = ONE if kind == "one" else WeightFunction.polynomial(K)
    if p < K:
        return
    assert gamma_p(p, K, w) == pytest.approx(gamma_p_oracle(p, K, w), rel=1e-12, abs=1e-15)


def test_gamma_formula_short_block_gap():
    # the missing alpha_l alpha_{l-2p} products: 2 * 6 * ... worth exactly 2 here
    assert gamma_p(1, 2, ONE) == pytest.approx(68.0)
    assert gamma_p_oracle(1, 2, ONE) == pytest.approx(70.0)


def test_gamma_unit_block_values():
    assert gamma_p(1, 0, ONE) == 6.0
    for K in range(4):
        assert gamma_p_oracle(1, K, ONE) == pytest.approx(math.comb(2 * K + 4, K + 2))


@pytest.mark.parametrize("K", [0, 1, 2])
def test_gamma_decays_like_p_to_minus_2K(K):
    w = default_weight(K)
    ratio = gamma_p_oracle(1024, K, w) / gamma_p_oracle(512, K, w)
    assert ratio == pytest.approx(2.0 ** (-2 * K), rel=0.02)


# ----- block counts, coefficients and energies

@given(st.integers(1, 200), st.integers(4, 5000))
def test_block_counts(p, n):
    assert j_star(p, n) == (n + 1) // p - 2
    assert j_level(p, n) == j_star(p, n) // 2
    J = j_pair(p, n)
    if J >= 1:
        assert 2 * J <= j_star(p, n) and J <= j_star(2 * p, n)
        assert (2 * J + 2) * p <= n + 1 and (J + 2) * 2 * p <= n + 1


def test_wavelet_coeffs_agree_with_single_coefficient():
    obs = synthesize(Theta(0.4, 1, 0.3), SamplingScheme(300, K=1), RngStream(2))
    w = WeightFunction.polynomial(1)
    d = wavelet_coeffs(obs, 20, 7, w)
    np.testing.assert_allclose(d, [wavelet_coeff(obs, j, 7, w) for j in range(20)], rtol=1e-12)
    for j in (0, 5, 19):
        assert d[j] == pytest.approx(coefficient_vector(j, 7, 300, w) @ obs.values, rel=1e-12)
    with pytest.raises(IndexError):
        wavelet_coeffs(obs, j_star(7, 300) + 1, 7, w)
    with pytest.raises(IndexError):
        wavelet_coeff(obs, j_star(7, 300), 7, w)


def test_energy_is_sum_of_squares_and_validates_J():
    obs = synthesize(Theta(0.5, 1, 0.1), SamplingScheme(200), RngStream(1))
    lvl = energy(obs, 10, 4, ONE)
    assert lvl.value == pytest.approx(np.sum(wavelet_coeffs(obs, 10, 4, ONE) ** 2))
    assert (lvl.J, lvl.p, lvl.n) == (10, 4, 200)
    with pytest.raises(DegenerateInputError):
        energy(obs, 0, 4, ONE)
    with pytest.raises(DegenerateInputError):
        energy(obs, j_star(4, 200) + 1, 4, ONE)


@pytest.mark.parametrize("K,p,H", [(0, 1, 0.3), (0, 5, 0.7), (1, 4, 0.4), (2, 6, 0.2), (1, 2, 0.5)])
def test_expected_energy_against_exact_covariance(K, p, H):
    # compute the mean energy from the dense covariance of X
    n, J = 120, 5
    w = default_weight(K)
    theta = Theta(H, 1.3, 0.7)
    cov = theta.sigma ** 2 * fbm_cov(n, H) + theta.tau ** 2 * ma_cov(n, K)
    exact = sum(coefficient_vector(j, p, n, w) @ cov @ coefficient_vector(j, p, n, w)
                for j in range(J))
    assert expected_energy(theta, J, p, n, K, w) == pytest.approx(exact, rel=1e-10)


def test_corrected_energy_subtracts_bias():
    obs = synthesize(Theta(0.3, 1, 0.5), SamplingScheme(512), RngStream(5))
    lvl = energy(obs, 20, 8, ONE)
    th = Theta(0.3, 1.0, 0.5)
    c = corrected_energy(lvl, th, K=0)
    assert c.corrected == pytest.approx(lvl.value - energy_bias(th, 20, 8, 512, 0, ONE))
    assert c.theta_used == th and c.value == lvl.value


def test_d_level_cancels_noise_on_average():
    vals = []
    for r in range(400):
        obs = synthesize(Theta(0.5, 0.0, 1.0), SamplingScheme(256), RngStream(8, r))
        vals.append(d_level(obs, 20, 4, ONE, K=0))
    scale = gamma_p_oracle(4, 0, ONE) * gamma_p_oracle(8, 0, ONE) * 20 / 256
    assert abs(np.mean(vals)) < 4 * np.std(vals) / math.sqrt(len(vals))
    assert abs(np.mean(vals)) < 0.1 * scale
    obs = synthesize(Theta(0.5, 0.0, 1.0), SamplingScheme(64), RngStream(1))
    with pytest.raises(DegenerateInputError):
        d_level(obs, 10, 4, ONE)
