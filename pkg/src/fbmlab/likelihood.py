"""Exact Gaussian likelihood of the increments, Fisher information and the
one-step efficient update."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, linalg

from .model import (
    DEFAULT_BOX,
    IncrementSeries,
    ParamBox,
    SamplingScheme,
    Theta,
    differences,
    project_to_box,
    RawTheta,
)
from .estimators import EstimationResult
from .spectral import c_H, dH_fgn_autocov, dH_log_cH, fgn_autocov, noise_diff_autocov

N_MAX = 2048
_DERIVS = ("none", "dH", "dSigma", "dTau")


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class RegimeWarning(UserWarning):
    """The noise does not dominate the signal at the sampling frequency."""


# --------------------------------------------------------------------------
# covariance

@dataclass(frozen=True)
class ToeplitzCov:
    """Symmetric Toeplitz matrix given by its first row, with an optional
    Cholesky factor (lower triangular) for the covariance itself."""

    first_row: np.ndarray
    factor: Optional[Tuple[np.ndarray, bool]] = None

    @property
    def n(self) -> int:
        return self.first_row.size

    def dense(self) -> np.ndarray:
        return linalg.toeplitz(self.first_row)

    def logdet(self) -> float:
        if self.factor is None:
            raise ValueError("matrix was built without a factorization")
        return 2.0 * float(np.sum(np.log(np.diag(self.factor[0]))))

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.factor is None:
            raise ValueError("matrix was built without a factorization")
        return linalg.cho_solve(self.factor, b)


def _check_theta(theta: Theta) -> None:
    if theta.sigma <= 0 or theta.tau <= 0:
        raise ValueError("likelihood requires sigma > 0 and tau > 0")


def _check_n(n: int) -> None:
    if n > N_MAX:
        raise ValueError(f"exact likelihood limited to n <= {N_MAX}, got {n}")


def cov_row(theta: Theta, scheme: SamplingScheme, deriv: str = "none") -> np.ndarray:
    """First row of the increment covariance or of one of its parameter derivatives."""
    if deriv not in _DERIVS:
        raise ValueError(f"deriv must be one of {_DERIVS}")
    lags = np.arange(scheme.n)
    H, sigma, tau = theta.H, theta.sigma, theta.tau
    scale = scheme.delta ** (2.0 * H)
    if deriv == "none":
        return (sigma ** 2 * scale * np.asarray(fgn_autocov(H, lags))
                + tau ** 2 * scheme.nu ** 2 * noise_diff_autocov(scheme.K, lags))
    if deriv == "dH":
        rho = np.asarray(fgn_autocov(H, lags))
        drho = np.asarray(dH_fgn_autocov(H, lags))
        return sigma ** 2 * scale * (2.0 * math.log(scheme.delta) * rho + drho)
    if deriv == "dSigma":
        return 2.0 * sigma * scale * np.asarray(fgn_autocov(H, lags))
    return 2.0 * tau * scheme.nu ** 2 * noise_diff_autocov(scheme.K, lags)


def build_cov(theta: Theta, scheme: SamplingScheme, deriv: str = "none") -> ToeplitzCov:
    """Toeplitz covariance of ``Z_1..Z_n`` (factorized when ``deriv='none'``)."""
    _check_theta(theta)
    _check_n(scheme.n)
    row = cov_row(theta, scheme, deriv)
    if deriv != "none":
        return ToeplitzCov(row)
    try:
        factor = linalg.cho_factor(linalg.toeplitz(row), lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None
    return ToeplitzCov(row, factor)


def levinson_logdet(row: np.ndarray) -> float:
    """Log-determinant of a symmetric positive definite Toeplitz matrix by
    the Durbin-Levinson recursion (O(n^2))."""
    row = np.asarray(row, dtype=float)
    n = row.size
    v = row[0]
    if v <= 0:
        raise NotPositiveDefiniteError("non-positive leading entry")
    total = math.log(v)
    phi = np.zeros(0)
    for k in range(1, n):
        refl = (row[k] - np.dot(phi, row[k - 1:0:-1])) / v
        phi = np.concatenate([phi - refl * phi[::-1], [refl]])
        v *= 1.0 - refl * refl
        if v <= 0:
            raise NotPositiveDefiniteError(f"prediction variance vanished at step {k}")
        total += math.log(v)
    return total


def _increments(Z) -> Tuple[np.ndarray, SamplingScheme]:
    if isinstance(Z, IncrementSeries):
        return Z.values, Z.scheme
    return differences(Z).values, Z.scheme


def loglik(theta: Theta, Z) -> float:
    """Exact Gaussian log-likelihood of the increments.

    ``Z`` may be an :class:`IncrementSeries` or an observation series.
    """
    z, scheme = _increments(Z)
    cov = build_cov(theta, scheme)
    quad = float(z @ cov.solve(z))
    return -0.5 * (z.size * math.log(2.0 * math.pi) + cov.logdet() + quad)


def score(theta: Theta, Z) -> np.ndarray:
    """Gradient of :func:`loglik` in ``(H, sigma, tau)``.

    Each component is ``-1/2 tr(S^-1 S_i) + 1/2 a' S_i a`` with ``a = S^-1 Z``.
    """
    z, scheme = _increments(Z)
    cov = build_cov(theta, scheme)
    inv = cov.solve(np.eye(z.size))
    a = inv @ z
    out = np.empty(3)
    for i, deriv in enumerate(_DERIVS[1:]):
        d = linalg.toeplitz(cov_row(theta, scheme, deriv))
        out[i] = -0.5 * float(np.sum(inv * d)) + 0.5 * float(a @ d @ a)
    return out


# --------------------------------------------------------------------------
# rates and Fisher information

@dataclass(frozen=True)
class RateInfo:
    r1: float
    r2: float
    diamond: float
    c_theta: float
    d_theta: float
    a_n: float
    regime_ok: bool


def c_theta(theta: Theta, K: int) -> float:
    """``(2 pi sigma^2 tau^-2 c_H)^{1/(2K+2H+1)}``: ratio scale of signal to noise
    spectra near frequency zero, both written per unit innovation."""
    dia = 2.0 * K + 2.0 * theta.H + 1.0
    return (2.0 * math.pi * theta.sigma ** 2 * c_H(theta.H) / theta.tau ** 2) ** (1.0 / dia)


def d_theta(theta: Theta, K: int) -> float:
    return dH_log_cH(theta.H) - 2.0 * math.log(c_theta(theta, K))


def rate_info(theta: Theta, scheme: SamplingScheme) -> RateInfo:
    dia = 2.0 * scheme.K + 2.0 * theta.H + 1.0
    strength = scheme.nu * scheme.delta ** (-theta.H)
    regime_ok = strength > 1.0
    if not regime_ok:
        warnings.warn("nu * delta^-H <= 1: the noise-dominated rates do not apply",
                      RegimeWarning, stacklevel=2)
    r1 = scheme.n * strength ** (-2.0 / dia)
    a_n = math.log(scheme.delta) - math.log(r1 / scheme.n)
    return RateInfo(r1, float(scheme.n), dia, c_theta(theta, scheme.K),
                    d_theta(theta, scheme.K), a_n, regime_ok)


def rate_matrix(theta: Theta, scheme: SamplingScheme, info: Optional[RateInfo] = None) -> np.ndarray:
    """``diag(r1, r1, n)^{-1/2} [[1,0,0],[-sigma a_n,1,0],[0,0,1]]``."""
    info = rate_info(theta, scheme) if info is None else info
    mix = np.eye(3)
    mix[1, 0] = -theta.sigma * info.a_n
    scale = np.diag([info.r1 ** -0.5, info.r1 ** -0.5, info.r2 ** -0.5])
    return scale @ mix


def _moment_integral(k: int, dia: float) -> float:
    """``integral over mu > 0 of (-2 log mu)^k / (1 + mu^dia)^2``, with ``mu = e^u``."""
    def f(u):
        return (-2.0 * u) ** k * math.exp(u - 2.0 * np.logaddexp(0.0, dia * u))
    total = 0.0
    for lo, hi in ((-np.inf, 0.0), (0.0, np.inf)):
        val, err = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        if err > 1e-10:
            raise ArithmeticError(f"Fisher integral did not converge (error {err:.2e})")
        total += val
    return total


def fisher_moments(H: float, K: int) -> np.ndarray:
    """The 2x2 block of integrals in the Fisher matrix without its
    ``c(theta)/(2 pi)`` prefactor."""
    dia = 2.0 * K + 2.0 * H + 1.0
    m0, m1, m2 = (_moment_integral(k, dia) for k in (0, 1, 2))
    return np.array([[m2, m1], [m1, m0]])


def fisher_F(theta: Theta, K: int) -> np.ndarray:
    """3x3 matrix ``F``: the ``(H, log sigma)`` block scaled by ``c(theta)/(2 pi)``
    and ``F_33 = 1/2``."""
    F = np.zeros((3, 3))
    F[:2, :2] = c_theta(theta, K) / (2.0 * math.pi) * fisher_moments(theta.H, K)
    F[2, 2] = 0.5
    return F


@dataclass(frozen=True)
class FisherBundle:
    F: np.ndarray
    I: np.ndarray
    I_inv_diag: np.ndarray
    phi_n: np.ndarray
    a_n: float
    rate: RateInfo

    def I_inv(self) -> np.ndarray:
        return np.linalg.inv(self.I)


def fisher_I(theta: Theta, scheme: SamplingScheme) -> FisherBundle:
    """Asymptotic Fisher matrix ``P' F P`` for ``P = [[1,0,0],[d,2/sigma,0],[0,0,2/tau]]``.

    The diagonal of the inverse is returned in closed form.
    """
    _check_theta(theta)
    info = rate_info(theta, scheme)
    F = fisher_F(theta, scheme.K)
    d = info.d_theta
    P = np.array([[1.0, 0.0, 0.0], [d, 2.0 / theta.sigma, 0.0], [0.0, 0.0, 2.0 / theta.tau]])
    I = P.T @ F @ P
    f11, f12, f22 = F[0, 0], F[0, 1], F[1, 1]
    det = f11 * f22 - f12 * f12
    inv_diag = np.array([
        f22 / det,
        theta.sigma ** 2 * (f11 + 2.0 * d * f12 + d * d * f22) / (4.0 * det),
        theta.tau ** 2 / 2.0,
    ])
    return FisherBundle(F, I, inv_diag, rate_matrix(theta, scheme, info), info.a_n, info)


def asymptotic_variance_H(H: float, K: int) -> float:
    """Closed form of ``F_22 / (F_11 F_22 - F_12^2)`` at unit ``c(theta)``."""
    dia = 2.0 * K + 2.0 * H + 1.0
    if dia <= 1.0:
        raise ValueError("need 2K + 2H + 1 > 1")
    s = math.sin(math.pi / dia)
    num = dia ** 4 * (dia - 1.0) * s ** 3
    den = dia ** 2 * math.cos(2.0 * math.pi / dia) + 2.0 * math.pi ** 2 * (dia - 1.0) ** 2 - dia ** 2
    return num / den


# --------------------------------------------------------------------------
# one-step estimator

def one_step(theta_tilde: Theta, Z, scheme: Optional[SamplingScheme] = None,
             box: ParamBox = DEFAULT_BOX) -> EstimationResult:
    """``theta + Phi I^-1 Phi' score`` evaluated at ``theta_tilde``.

    The unprojected update is kept in ``raw``; the returned coordinates are
    its projection onto ``box``.
    """
    z, zscheme = _increments(Z)
    scheme = zscheme if scheme is None else scheme
    inc = IncrementSeries(z, scheme)
    bundle = fisher_I(theta_tilde, scheme)
    phi = bundle.phi_n
    step = phi @ np.linalg.solve(bundle.I, phi.T @ score(theta_tilde, inc))
    raw = theta_tilde.as_array() + step
    projected = project_to_box(RawTheta(*raw), box)
    clamped = {k: bool(a != b) for k, a, b in zip(("H", "sigma", "tau"), raw,
                                                   projected.as_array())}
    flags = frozenset({"clamped"} if any(clamped.values()) else ())
    return EstimationResult("one-step", H=projected.H, sigma=projected.sigma,
                            tau=projected.tau, clamped=clamped, flags=flags,
                            raw=tuple(float(v) for v in raw))
