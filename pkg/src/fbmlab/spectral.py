"""Autocovariances and spectral densities of the increment process.

Spectral densities use the convention ``cov(k) = integral over [-pi, pi] of
f(lam) * exp(i k lam)``, under which ``f_H`` integrates to ``rho_H(0) = 1``.
The noise filter ``g`` is kept in its raw form ``(2 - 2 cos lam)^(K+1)``.
With unit-variance innovations the noise increments have density
``g / (2 pi)`` in that convention.
"""

from __future__ import annotations

import math
from math import comb

import numpy as np
from scipy.special import digamma

from .model import SamplingScheme, Theta

_H_GUARD = 1e-4


def _check_H(H: float, guard: float = 0.0) -> None:
    if not guard < H < 1.0 - guard:
        raise ValueError(f"H={H} outside the admissible range")


def _pow2H(m, H):
    return np.abs(m) ** (2.0 * H)


def _xlogx(m, H):
    """``|m|^{2H} log|m|`` with the value 0 at ``m = 0``."""
    m = np.abs(np.asarray(m, dtype=float))
    out = np.zeros_like(m)
    nz = m > 0
    out[nz] = m[nz] ** (2.0 * H) * np.log(m[nz])
    return out


def fgn_autocov(H: float, k):
    """Autocovariance of unit fractional Gaussian noise at lag ``k``.

    ``rho_H(k) = (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2``; accepts scalar or
    array lags.
    """
    _check_H(H)
    k = np.abs(np.asarray(k, dtype=float))
    out = 0.5 * (_pow2H(k + 1, H) - 2.0 * _pow2H(k, H) + _pow2H(k - 1, H))
    return out if out.ndim else float(out)


def dH_fgn_autocov(H: float, k):
    """Derivative of :func:`fgn_autocov` with respect to ``H``."""
    _check_H(H)
    k = np.abs(np.asarray(k, dtype=float))
    out = _xlogx(k + 1, H) - 2.0 * _xlogx(k, H) + _xlogx(k - 1, H)
    return out if out.ndim else float(out)


def noise_diff_autocov(K: int, k):
    """Autocovariance of ``Y_i - Y_{i-1}`` per unit noise scale.

    The differenced noise is the filter ``(1 - B)^{K+1}`` applied to iid
    standard normals, so the lag-``k`` covariance is
    ``(-1)^k C(2K+2, K+1+k)`` for ``|k| <= K+1`` and zero beyond.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    lags = np.abs(np.atleast_1d(np.asarray(k, dtype=int)))
    out = np.zeros(lags.shape, dtype=float)
    inside = lags <= K + 1
    out[inside] = [(-1) ** int(j) * comb(2 * K + 2, K + 1 + int(j))
                   for j in lags[inside]]
    return out if np.ndim(k) else float(out[0])


def increment_autocov(theta: Theta, scheme: SamplingScheme, k):
    """Lag-``k`` autocovariance of ``Z_i = X_i - X_{i-1}``."""
    signal = theta.sigma ** 2 * scheme.delta ** (2 * theta.H) * np.asarray(
        fgn_autocov(theta.H, k))
    noise = theta.tau ** 2 * scheme.nu ** 2 * np.asarray(
        noise_diff_autocov(scheme.K, k))
    out = signal + noise
    return out if out.ndim else float(out)


def c_H(H: float) -> float:
    """Normalising constant ``Gamma(2H+1) sin(pi H) / (2 pi)`` of ``f_H``."""
    return math.gamma(2 * H + 1) * math.sin(math.pi * H) / (2 * math.pi)


def dH_log_cH(H: float) -> float:
    """``d/dH log c_H = 2 psi(2H+1) + pi cot(pi H)``."""
    _check_H(H, _H_GUARD)
    return float(2.0 * digamma(2 * H + 1) + math.pi / math.tan(math.pi * H))


def _aliased_sum(lam: float, a: float, T: int) -> float:
    """``sum over integer t of |lam + 2 pi t|^{-a}`` for ``0 < |lam| <= pi``.

    Terms ``|t| <= T`` are summed directly; each one-sided tail is closed by
    Euler-Maclaurin (integral plus three correction terms).
    """
    t = np.arange(1, T + 1, dtype=float)
    two_pi = 2.0 * math.pi
    total = abs(lam) ** (-a)
    total += np.sum((two_pi * t + lam) ** (-a)) + np.sum((two_pi * t - lam) ** (-a))
    for shift in (lam, -lam):
        x = two_pi * T + shift
        g = x ** (-a)
        g1 = -a * two_pi * x ** (-a - 1)
        g3 = -a * (a + 1) * (a + 2) * two_pi ** 3 * x ** (-a - 3)
        integral = x ** (1 - a) / (two_pi * (a - 1))
        total += integral - 0.5 * g - g1 / 12.0 + g3 / 720.0
    return float(total)


def spectral_f_H(lam, H: float, T: int = 256):
    """Spectral density of unit fractional Gaussian noise.

    ``f_H(lam) = c_H (2 - 2 cos lam) sum_t |lam + 2 pi t|^{-1-2H}``. The
    aliasing sum is truncated at ``|t| <= T`` (``T <= 1e5``) with an
    Euler-Maclaurin tail, relative error below 1e-12 for ``T >= 100``.
    """
    _check_H(H)
    if not 1 <= T <= 100_000:
        raise ValueError("T must be within [1, 1e5]")
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lam_arr == 0.0):
        raise ValueError("f_H is singular at lambda = 0")
    if np.any(np.abs(lam_arr) > math.pi + 1e-12):
        raise ValueError("lambda must lie in [-pi, pi]")
    a = 1.0 + 2.0 * H
    cH = c_H(H)
    out = np.array([cH * 2.0 * (1.0 - math.cos(x)) * _aliased_sum(x, a, T)
                    for x in lam_arr])
    return out if np.ndim(lam) else float(out[0])


def spectral_g(lam, K: int):
    """Raw noise filter ``(2 - 2 cos lam)^{K+1}``."""
    out = (2.0 * (1.0 - np.cos(np.asarray(lam, dtype=float)))) ** (K + 1)
    return out if out.ndim else float(out)


def spectral_h(lam, theta: Theta, scheme: SamplingScheme):
    """Spectral density of the increments in the ``cov = integral f e^{ik lam}``
    convention (noise term rescaled by ``1 / 2 pi``)."""
    fxi = theta.sigma ** 2 * scheme.delta ** (2 * theta.H) * np.asarray(
        spectral_f_H(lam, theta.H))
    gtau = theta.tau ** 2 * scheme.nu ** 2 * np.asarray(spectral_g(lam, scheme.K))
    out = fxi + gtau / (2.0 * math.pi)
    return out if out.ndim else float(out)
