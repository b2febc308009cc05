"""Exact synthesis of fractional Gaussian noise, MA(K) noise and noisy paths."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from .model import ObservationSeries, SamplingScheme, Theta
from .spectral import fgn_autocov

_FGN_SUBSTREAM = 0
_NOISE_SUBSTREAM = 1


class EmbeddingError(RuntimeError):
    """The circulant embedding has a significantly negative eigenvalue."""


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream) pair addressing an independent Philox generator.

    Replication ``r`` of an experiment uses ``stream=r``; the fGn and noise
    draws of one replication come from two disjoint child streams.
    """

    seed: int
    stream: int = 0

    def generator(self, substream: Optional[int] = None) -> np.random.Generator:
        key = (self.stream,) if substream is None else (self.stream, substream)
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def label(self) -> str:
        return f"{self.seed}:{self.stream}"


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


def circulant_eigenvalues(n: int, H: float) -> np.ndarray:
    """Eigenvalues of the size ``2(n-1)`` circulant embedding of fGn."""
    gamma = fgn_autocov(H, np.arange(n))
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(row).real
    floor = -1e-10 * eig.max()
    if eig.min() < floor:
        raise EmbeddingError(f"embedding eigenvalue {eig.min():.3e} below {floor:.3e}")
    return np.clip(eig, 0.0, None)


def sample_fgn(n: int, H: float, rng, size: Optional[int] = None) -> np.ndarray:
    """Draw unit-step, unit-scale fractional Gaussian noise ``F_1..F_n``.

    Uses circulant embedding (Davies-Harte): exact in distribution, with cost
    O(n log n). ``size`` returns an array of shape ``(size, n)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    gen = _as_generator(rng)
    m = 1 if size is None else size
    if n == 1:
        out = gen.standard_normal((m, 1))
        return out[0] if size is None else out
    eig = circulant_eigenvalues(n, H)
    M = eig.size
    xi = gen.standard_normal((m, M)) + 1j * gen.standard_normal((m, M))
    out = np.fft.fft(np.sqrt(eig / M) * xi, axis=-1).real[:, :n]
    return out[0] if size is None else out


def ma_coefficients(K: int) -> np.ndarray:
    return np.array([comb(K, l) * (-1) ** l for l in range(K + 1)], dtype=float)


def sample_ma_noise(n: int, K: int, rng, size: Optional[int] = None) -> np.ndarray:
    """Draw ``Y_0..Y_n`` with ``Y_j = sum_l C(K,l) (-1)^l eps_{j-l}``.

    Consumes ``n + 1 + K`` iid standard normals per path.
    """
    if n < 1 or K < 0:
        raise ValueError("need n >= 1 and K >= 0")
    gen = _as_generator(rng)
    m = 1 if size is None else size
    eps = gen.standard_normal((m, n + 1 + K))
    coef = ma_coefficients(K)
    y = np.zeros((m, n + 1))
    for l, c in enumerate(coef):
        y += c * eps[:, K - l:K - l + n + 1]
    return y[0] if size is None else y


def synthesize_values(theta: Theta, scheme: SamplingScheme, rng: RngStream,
                      size: Optional[int] = None) -> np.ndarray:
    """Raw observation values; see :func:`synthesize`."""
    n = scheme.n
    shape = (1 if size is None else size, n + 1)
    x = np.zeros(shape)
    if theta.sigma != 0.0:
        f = sample_fgn(n, theta.H, rng.generator(_FGN_SUBSTREAM), size=shape[0])
        x[:, 1:] = theta.sigma * scheme.delta ** theta.H * np.cumsum(f, axis=-1)
    if theta.tau != 0.0 and scheme.nu != 0.0:
        y = sample_ma_noise(n, scheme.K, rng.generator(_NOISE_SUBSTREAM), size=shape[0])
        x += theta.tau * scheme.nu * y
    return x[0] if size is None else x


def synthesize(theta: Theta, scheme: SamplingScheme, rng: RngStream) -> ObservationSeries:
    """Simulate ``X_i = sigma W^H_{i delta} + tau nu Y_i`` for ``i = 0..n``.

    The fBm on the ``delta`` grid is unit-grid fBm rescaled by ``delta^H``
    (self-similarity), and ``W^H_0 = 0``.
    """
    return ObservationSeries(synthesize_values(theta, scheme, rng), scheme, rng.label())


def sample_fgn_cholesky(n: int, H: float, rng, size: Optional[int] = None) -> np.ndarray:
    """Reference sampler via dense Cholesky; intended for tests (``n <= 4096``)."""
    if n > 4096:
        raise ValueError("Cholesky reference sampler limited to n <= 4096")
    gen = _as_generator(rng)
    from scipy.linalg import toeplitz
    L = np.linalg.cholesky(toeplitz(fgn_autocov(H, np.arange(n))))
    m = 1 if size is None else size
    out = gen.standard_normal((m, n)) @ L.T
    return out[0] if size is None else out
