"""Parameter and data containers shared across the package.

Observations follow ``X_i = sigma * W^H_{i*delta} + tau * nu * Y_i`` for
``i = 0..n`` where ``W^H`` is a fractional Brownian motion and ``Y`` a
moving-average noise of order ``K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, TextIO, Union

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when a series is too short or otherwise unusable."""


@dataclass(frozen=True)
class Theta:
    """Parameter triple ``(H, sigma, tau)``."""

    H: float
    sigma: float
    tau: float

    def __post_init__(self):
        if not 0.0 < self.H < 1.0:
            raise ValueError(f"H must lie in (0, 1), got {self.H}")
        if self.sigma < 0 or self.tau < 0:
            raise ValueError("sigma and tau must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.H, self.sigma, self.tau], dtype=float)

    @classmethod
    def from_array(cls, values) -> "Theta":
        H, sigma, tau = (float(v) for v in values)
        return cls(H, sigma, tau)


@dataclass(frozen=True)
class ParamBox:
    """Compact box the estimators are projected onto."""

    H_lo: float = 0.01
    H_hi: float = 0.99
    sigma_lo: float = 0.05
    sigma_hi: float = 20.0
    tau_lo: float = 0.01
    tau_hi: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.H_lo < self.H_hi < 1.0:
            raise ValueError("need 0 < H_lo < H_hi < 1")
        if not 0.0 < self.sigma_lo < self.sigma_hi:
            raise ValueError("need 0 < sigma_lo < sigma_hi")
        if not 0.0 < self.tau_lo < self.tau_hi:
            raise ValueError("need 0 < tau_lo < tau_hi")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.H_lo, self.sigma_lo, self.tau_lo])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.H_hi, self.sigma_hi, self.tau_hi])

    def contains(self, theta: Theta) -> bool:
        v = theta.as_array()
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))


DEFAULT_BOX = ParamBox()


def clamp(value: float, lo: float, hi: float) -> float:
    return min(max(value, lo), hi)


def project_to_box(theta: Theta, box: ParamBox = DEFAULT_BOX) -> Theta:
    """Clamp each coordinate of ``theta`` into its interval of ``box``.

    Accepts any object with ``H``, ``sigma`` and ``tau`` attributes, so raw
    estimates outside ``(0, 1)`` can be passed as a :class:`RawTheta`.
    """
    return Theta(
        clamp(theta.H, box.H_lo, box.H_hi),
        clamp(theta.sigma, box.sigma_lo, box.sigma_hi),
        clamp(theta.tau, box.tau_lo, box.tau_hi),
    )


@dataclass(frozen=True)
class RawTheta:
    """Unvalidated triple, e.g. an estimate before projection."""

    H: float
    sigma: float
    tau: float


@dataclass(frozen=True)
class SamplingScheme:
    """Observation design: ``n`` increments on a grid of step ``delta``.

    ``delta`` defaults to ``1/n`` and ``nu`` to 1, the high-frequency
    setting used by the estimators.
    """

    n: int
    delta: Optional[float] = None
    nu: float = 1.0
    K: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if int(self.K) != self.K or self.K < 0:
            raise ValueError(f"K must be a non-negative integer, got {self.K}")
        if self.delta is None:
            object.__setattr__(self, "delta", 1.0 / self.n)
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.nu < 0:
            raise ValueError("nu must be non-negative")

    def with_n(self, n: int) -> "SamplingScheme":
        """Same design at another sample size (``delta`` re-derived as ``1/n``
        when it was the default)."""
        delta = None if math.isclose(self.delta, 1.0 / self.n) else self.delta
        return replace(self, n=n, delta=delta)


@dataclass(frozen=True)
class ObservationSeries:
    values: np.ndarray
    scheme: SamplingScheme
    seed: Optional[str] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size != self.scheme.n + 1:
            raise DegenerateInputError(
                f"expected {self.scheme.n + 1} observations, got {values.size}"
            )

    @property
    def n(self) -> int:
        return self.scheme.n

    def scaled(self, factor: float) -> "ObservationSeries":
        return ObservationSeries(self.values * factor, self.scheme, self.seed)


@dataclass(frozen=True)
class IncrementSeries:
    values: np.ndarray
    scheme: SamplingScheme

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size != self.scheme.n:
            raise DegenerateInputError(
                f"expected {self.scheme.n} increments, got {values.size}"
            )


def differences(obs: ObservationSeries) -> IncrementSeries:
    """First differences ``Z_i = X_i - X_{i-1}``, ``i = 1..n``."""
    if obs.values.size < 2:
        raise DegenerateInputError("need at least two observations")
    return IncrementSeries(np.diff(obs.values), obs.scheme)


def cumulate(z: IncrementSeries, x0: float = 0.0) -> ObservationSeries:
    """Inverse of :func:`differences` anchored at ``x0``."""
    values = np.concatenate([[x0], x0 + np.cumsum(z.values)])
    return ObservationSeries(values, z.scheme)


# --------------------------------------------------------------------------
# CSV series I/O

def _format_header(scheme: SamplingScheme, seed) -> str:
    return (
        f"# n={scheme.n} delta={scheme.delta!r} nu={scheme.nu!r} "
        f"K={scheme.K} seed={'' if seed is None else seed}"
    )


def write_series(obs: ObservationSeries, dest: Union[str, Path, TextIO],
                 extra_header: tuple = ()) -> None:
    """Write one value per line, preceded by a ``# n=.. delta=..`` header.

    Values are written with ``repr`` so a round trip is lossless.
    """
    lines = [_format_header(obs.scheme, obs.seed)]
    lines += [f"# {line}" for line in extra_header]
    lines += [repr(float(v)) for v in obs.values]
    text = "\n".join(lines) + "\n"
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def _parse_header(line: str) -> dict:
    out = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            key, _, val = token.partition("=")
            out[key.strip()] = val.strip()
    return out


def read_series(src: Union[str, Path, TextIO], K: Optional[int] = None,
                nu: Optional[float] = None,
                delta: Optional[float] = None) -> ObservationSeries:
    """Read a series written by :func:`write_series` (or a bare column).

    Keyword arguments override header fields; missing fields fall back to
    ``delta = 1/n``, ``nu = 1`` and ``K = 0``.
    """
    text = src.read() if hasattr(src, "read") else Path(src).read_text()
    meta = {}
    values = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parsed = _parse_header(line)
            if "n" in parsed and not meta:
                meta = parsed
            continue
        values.append(float(line.split(",")[0]))
    if len(values) < 2:
        raise DegenerateInputError("series file holds fewer than two values")
    n = len(values) - 1
    if "n" in meta and int(meta["n"]) != n:
        raise DegenerateInputError(
            f"header says n={meta['n']} but file holds {len(values)} values"
        )
    if K is None:
        K = int(meta.get("K", 0) or 0)
    if nu is None:
        nu = float(meta.get("nu", 1.0) or 1.0)
    if delta is None and meta.get("delta"):
        delta = float(meta["delta"])
    seed = meta.get("seed") or None
    return ObservationSeries(np.array(values), SamplingScheme(n, delta, nu, K), seed)
