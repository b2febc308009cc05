"""Pre-averaging weights, signal/noise variance constants and energy levels.

A pre-averaged wavelet coefficient at level ``p`` is

    d_j = (n p)^{-1/2} sum_{l<p} w(l/p) (X_{jp+l} - 2 X_{(j+1)p+l} + X_{(j+2)p+l})

and the energy ``Q_{J,p}`` is the sum of ``d_j^2`` over ``j < J``. Its mean is
``J (sigma^2 kappa_p(H) (p/n)^{1+2H} + tau^2 gamma_p / n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from .model import DegenerateInputError, ObservationSeries, Theta

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_ENDPOINT_TOL = 1e-8


class WeightComplianceError(ValueError):
    """A weight violates the vanishing-derivative endpoint condition."""


# --------------------------------------------------------------------------
# weight functions

@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Weight ``w`` on ``[0, 1]`` used to pre-average each block.

    Build instances with :meth:`constant_one`, :meth:`polynomial` or
    :meth:`tabulated`. ``key`` identifies the weight in caches; two weights
    with the same key are interchangeable.
    """

    kind: str
    K_assoc: int
    evaluator: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    derivatives: Tuple[Callable[[np.ndarray], np.ndarray], ...] = field(repr=False)
    key: tuple = ()

    def __call__(self, x):
        return self.evaluator(np.asarray(x, dtype=float))

    def __hash__(self):
        return hash(self.key)

    def __eq__(self, other):
        return isinstance(other, WeightFunction) and self.key == other.key

    def derivative(self, order: int, x):
        if order == 0:
            return self(x)
        if order > len(self.derivatives):
            raise ValueError(f"derivative of order {order} not available")
        return self.derivatives[order - 1](np.asarray(x, dtype=float))

    def samples(self, p: int) -> np.ndarray:
        """``w(l/p)`` for ``l = 0..p-1``."""
        return _samples(self, p)

    def endpoint_violations(self, K: Optional[int] = None) -> list:
        """Orders ``i < K`` whose derivative is not (numerically) zero at 0 or 1."""
        K = self.K_assoc if K is None else K
        bad = []
        for i in range(K):
            vals = np.abs(self.derivative(i, np.array([0.0, 1.0])))
            if np.any(vals >= _ENDPOINT_TOL):
                bad.append(i)
        return bad

    def check_compliance(self, K: Optional[int] = None) -> None:
        bad = self.endpoint_violations(K)
        if bad:
            raise WeightComplianceError(
                f"weight '{self.kind}' has non-vanishing endpoint derivatives of orders {bad}")

    @classmethod
    def constant_one(cls) -> "WeightFunction":
        zero = lambda x: np.zeros_like(x)
        return cls("constant-one", 0, lambda x: np.ones_like(x), (zero,) * 8, ("one",))

    @classmethod
    def polynomial(cls, K: int) -> "WeightFunction":
        """``w(x) = x^K (1-x)^K``, with exact derivatives of every order."""
        if K < 0:
            raise ValueError("K must be non-negative")
        poly = np.polynomial.Polynomial([0, 1]) ** K * np.polynomial.Polynomial([1, -1]) ** K
        derivs = tuple(poly.deriv(m) for m in range(1, 2 * K + 1))
        return cls("polynomial", K, poly, derivs, ("poly", K))

    @classmethod
    def tabulated(cls, x: Sequence[float], values: Sequence[float], K: int = 0,
                  derivatives: Optional[Sequence[Callable]] = None,
                  name: str = "tabulated") -> "WeightFunction":
        """Cubic-spline weight through ``(x, values)`` on ``[0, 1]``.

        ``derivatives`` overrides the spline derivatives when supplied.
        """
        x = np.asarray(x, dtype=float)
        values = np.asarray(values, dtype=float)
        if x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0):
            raise ValueError("tabulation grid must increase from 0 to 1")
        spline = CubicSpline(x, values)
        if derivatives is None:
            derivs = tuple(spline.derivative(m) for m in range(1, 4))
        else:
            derivs = tuple(derivatives)
        key = ("tab", name, x.tobytes(), values.tobytes())
        return cls("tabulated", K, spline, derivs, key)


def default_weight(K: int) -> WeightFunction:
    """Constant one for ``K = 0``; ``x^K (1-x)^K`` otherwise."""
    return WeightFunction.constant_one() if K == 0 else WeightFunction.polynomial(K)


@lru_cache(maxsize=4096)
def _samples(w: WeightFunction, p: int) -> np.ndarray:
    out = np.asarray(w(np.arange(p) / p), dtype=float)
    out = np.broadcast_to(out, (p,)).copy()
    out.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# signal constants

_PHI_COEF = np.array([(-1) ** (k + 1) * comb(4, k) for k in range(5)], dtype=float)
_PHI_SHIFT = np.arange(5) - 2.0


def phi_H(x, H: float):
    """Covariance kernel of unit-step second differences of fBm.

    ``phi_H(x) = 1/2 sum_k (-1)^{k+1} C(4,k) |x + k - 2|^{2H}``; ``phi_H(0) = 4 - 4^H``.
    """
    xa = np.asarray(x, dtype=float)
    terms = np.abs(xa[..., None] + _PHI_SHIFT) ** (2.0 * H)
    out = 0.5 * terms @ _PHI_COEF
    return out if out.ndim else float(out)


def dH_phi_H(x, H: float):
    """Derivative of :func:`phi_H` in ``H`` (``0 log 0 = 0``)."""
    xa = np.asarray(x, dtype=float)
    m = np.abs(xa[..., None] + _PHI_SHIFT)
    safe = np.where(m > 0, m, 1.0)
    terms = np.where(m > 0, 2.0 * safe ** (2.0 * H) * np.log(safe), 0.0)
    out = 0.5 * terms @ _PHI_COEF
    return out if out.ndim else float(out)


def _weight_autocorr(ws: np.ndarray) -> np.ndarray:
    """``r[d] = sum_l w_l w_{l+d}`` for ``d = 0..p-1``."""
    p = ws.size
    full = np.correlate(ws, ws, mode="full")
    return full[p - 1:]


def _kappa_vec(p: int, H: np.ndarray, w: WeightFunction) -> np.ndarray:
    lags = np.arange(p) / p
    phi = 0.5 * (np.abs(lags[None, :, None] + _PHI_SHIFT) ** (2.0 * H[:, None, None])) @ _PHI_COEF
    if w.kind == "constant-one":
        mult = (p - np.arange(p)).astype(float)
    else:
        mult = _weight_autocorr(w.samples(p))
    mult = mult * np.where(np.arange(p) == 0, 1.0, 2.0)
    return phi @ mult / p ** 2


@lru_cache(maxsize=65536)
def _kappa_cached(p: int, H: float, w: WeightFunction) -> float:
    return float(_kappa_vec(p, np.array([H]), w)[0])


def kappa_p(p: int, H, w: WeightFunction):
    """Signal constant ``kappa_p(H) = p^-2 sum_{l1,l2} w(l1/p) w(l2/p) phi_H((l1-l2)/p)``.

    Equal lags are grouped, so the constant weight costs O(p) per ``H``.
    ``H`` may be an array; scalar calls are memoised.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    if np.ndim(H) == 0:
        return _kappa_cached(int(p), float(H), w)
    return _kappa_vec(int(p), np.asarray(H, dtype=float), w)


def weight_self_correlation(u: float, w: WeightFunction) -> float:
    """``(w * w)(u) = integral of w(x) w(x - u)`` over the overlap of the supports."""
    u = abs(u)
    if u >= 1.0:
        return 0.0
    a, b = u, 1.0
    half = 0.5 * (b - a)
    x = a + half * (_GL_NODES + 1.0)
    return float(half * np.sum(_GL_WEIGHTS * w(x) * w(x - u)))


def _integrate_against(kernel: Callable[[float], float], w: WeightFunction) -> float:
    # the self-correlation is even, so fold onto [0, 1]; the kernel has kinks at 0 and 1
    if w.kind == "constant-one":
        corr = lambda u: 1.0 - u
    else:
        corr = lambda u: weight_self_correlation(u, w)
    val, err = integrate.quad(lambda u: corr(u) * kernel(u), 0.0, 1.0,
                              epsabs=1e-12, epsrel=1e-12, limit=200)
    if not np.isfinite(val) or err > 1e-8:
        raise ArithmeticError(f"quadrature did not converge (error estimate {err:.2e})")
    return 2.0 * val


@lru_cache(maxsize=4096)
def kappa_inf(H: float, w: WeightFunction) -> float:
    """Limit of ``kappa_p`` as ``p`` grows: ``integral of w(x) w(y) phi_H(x - y)``."""
    return _integrate_against(lambda u: phi_H(u, H), w)


@lru_cache(maxsize=4096)
def dH_kappa_inf(H: float, w: WeightFunction) -> float:
    return _integrate_against(lambda u: dH_phi_H(u, H), w)


def kappa_bar(p: int, H: float, w: WeightFunction) -> float:
    return kappa_p(p, H, w) - kappa_inf(H, w)


# --------------------------------------------------------------------------
# noise constants

def alpha(l: int, p: int, K: int, w: WeightFunction) -> float:
    """``alpha_{l,p} = sum_i C(K,i) (-1)^i w((l+i)/p)`` over ``max(0,-l) <= i <= min(K, p-1-l)``."""
    if not -K <= l <= p - 1:
        raise IndexError(f"l={l} outside [{-K}, {p - 1}]")
    lo, hi = max(0, -l), min(K, p - 1 - l)
    i = np.arange(lo, hi + 1)
    if i.size == 0:
        return 0.0
    binom = np.array([comb(K, int(k)) * (-1) ** int(k) for k in i], dtype=float)
    return float(np.sum(binom * w((l + i) / p)))


def alpha_vector(p: int, K: int, w: WeightFunction) -> np.ndarray:
    """All ``alpha_{l,p}`` for ``l = -K..p-1`` (index ``l + K``)."""
    coef = np.array([comb(K, i) * (-1) ** i for i in range(K + 1)], dtype=float)
    # alpha_l = sum_i coef_i w_{l+i}: a correlation of the window with the filter
    return np.convolve(w.samples(p), coef[::-1], mode="full")


def gamma_p(p: int, K: int, w: WeightFunction) -> float:
    """Noise constant from the ``alpha`` coefficients.

    ``gamma_p = p^-1 (6 sum_l alpha_l^2 - 8 sum_{l=p-K}^{p-1} alpha_l alpha_{l-p})``.
    The expression omits the ``alpha_l alpha_{l-2p}`` products, which only
    exist for ``p < K``; use :func:`gamma_p_oracle` in that regime.
    """
    a = alpha_vector(p, K, w)
    total = 6.0 * np.dot(a, a)
    for l in range(p - K, p):
        total -= 8.0 * a[l + K] * a[l - p + K]
    return float(total / p)


def noise_filter(p: int, K: int, w: WeightFunction) -> np.ndarray:
    """Coefficients of a noise wavelet coefficient on the iid innovations.

    Composition of the MA(K) filter, the window ``w(l/p)`` and the block
    second difference, without the ``(n p)^{-1/2}`` scale.
    """
    ws = w.samples(p)
    window = np.zeros(3 * p)
    window[:p] += ws
    window[p:2 * p] -= 2.0 * ws
    window[2 * p:] += ws
    ma = np.array([comb(K, i) * (-1) ** i for i in range(K + 1)], dtype=float)
    return np.convolve(window, ma)


@lru_cache(maxsize=4096)
def gamma_p_oracle(p: int, K: int, w: WeightFunction) -> float:
    """``n Var(e_j)`` computed from the composite filter: squared norm over ``p``."""
    c = noise_filter(p, K, w)
    return float(np.dot(c, c) / p)


# --------------------------------------------------------------------------
# wavelet coefficients and energies

def j_star(p: int, n: int) -> int:
    """Number of complete coefficients at level ``p``: ``floor((n+1)/p) - 2``."""
    return (n + 1) // p - 2


def j_level(p: int, n: int) -> int:
    """Half the available blocks, ``floor(j_star / 2)``."""
    return j_star(p, n) // 2


def j_pair(p: int, n: int) -> int:
    """Block count usable at both levels ``p`` (``2J`` blocks) and ``2p`` (``J`` blocks)."""
    return min(j_level(p, n), j_star(2 * p, n))


def _values(obs) -> np.ndarray:
    return obs.values if isinstance(obs, ObservationSeries) else np.asarray(obs, dtype=float)


def wavelet_coeffs(obs, J: int, p: int, w: WeightFunction) -> np.ndarray:
    """First ``J`` pre-averaged coefficients at level ``p`` in O(n)."""
    x = _values(obs)
    n = x.size - 1
    if J < 0 or J > j_star(p, n):
        raise IndexError(f"J={J} outside [0, {j_star(p, n)}] for p={p}, n={n}")
    blocks = x[:(J + 2) * p].reshape(J + 2, p) @ w.samples(p)
    return (blocks[:-2] - 2.0 * blocks[1:-1] + blocks[2:]) / math.sqrt(n * p)


def wavelet_coeff(obs, j: int, p: int, w: WeightFunction) -> float:
    x = _values(obs)
    n = x.size - 1
    if not 0 <= j < j_star(p, n):
        raise IndexError(f"block {j} outside [0, {j_star(p, n)})")
    ws = w.samples(p)
    seg = x[j * p:(j + 3) * p].reshape(3, p) @ ws
    return float((seg[0] - 2.0 * seg[1] + seg[2]) / math.sqrt(n * p))


@dataclass(frozen=True)
class EnergyLevel:
    """Energy ``Q`` over ``J`` blocks at level ``p`` of an ``n``-step series."""

    J: int
    p: int
    weight: WeightFunction
    value: float
    n: int
    corrected: Optional[float] = None
    theta_used: Optional[Theta] = None


def energy(obs, J: int, p: int, w: WeightFunction) -> EnergyLevel:
    x = _values(obs)
    n = x.size - 1
    if J < 1 or J > j_star(p, n):
        raise DegenerateInputError(
            f"J={J} not in [1, {j_star(p, n)}] for p={p}, n={n}")
    d = wavelet_coeffs(x, J, p, w)
    return EnergyLevel(J, p, w, float(np.dot(d, d)), n)


def expected_energy(theta: Theta, J: int, p: int, n: int, K: int,
                    w: WeightFunction) -> float:
    """Mean of the energy under ``delta = 1/n`` and unit noise intensity."""
    sig = theta.sigma ** 2 * kappa_p(p, theta.H, w) * (p / n) ** (1 + 2 * theta.H)
    return J * (sig + theta.tau ** 2 * gamma_p_oracle(p, K, w) / n)


def energy_bias(theta: Theta, J: int, p: int, n: int, K: int, w: WeightFunction) -> float:
    """``J (sigma^2 kappa_bar_p(H) (p/n)^{1+2H} + tau^2 gamma_p / n)``."""
    sig = theta.sigma ** 2 * kappa_bar(p, theta.H, w) * (p / n) ** (1 + 2 * theta.H)
    return J * (sig + theta.tau ** 2 * gamma_p_oracle(p, K, w) / n)


def corrected_energy(level: EnergyLevel, theta_tilde: Theta, K: Optional[int] = None) -> EnergyLevel:
    """Subtract the finite-``p`` signal bias and the noise contribution.

    ``K`` defaults to the weight's target order.
    """
    K = level.weight.K_assoc if K is None else K
    bias = energy_bias(theta_tilde, level.J, level.p, level.n, K, level.weight)
    return EnergyLevel(level.J, level.p, level.weight, level.value, level.n,
                       level.value - bias, theta_tilde)


def d_level(obs, J: int, p: int, w: WeightFunction, K: Optional[int] = None) -> float:
    """Noise-free contrast ``gamma_p Q_{J,2p} - gamma_{2p} Q_{J,p}``."""
    K = w.K_assoc if K is None else K
    x = _values(obs)
    n = x.size - 1
    if J > j_star(2 * p, n):
        raise DegenerateInputError(f"J={J} exceeds {j_star(2 * p, n)} blocks at level {2 * p}")
    q2 = energy(x, J, 2 * p, w).value
    q1 = energy(x, J, p, w).value
    return gamma_p_oracle(p, K, w) * q2 - gamma_p_oracle(2 * p, K, w) * q1
