"""Energy-ratio estimators of ``(H, sigma, tau)``.

All estimators assume ``delta = 1/n`` and unit noise intensity, and project
their output onto a :class:`~fbmlab.model.ParamBox`. Degenerate energies do
not raise: the nearest box boundary is returned and a flag is recorded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .model import DEFAULT_BOX, DegenerateInputError, ObservationSeries, ParamBox, Theta, clamp
from .preaverage import (
    WeightFunction,
    default_weight,
    energy,
    gamma_p_oracle,
    j_level,
    j_pair,
    j_star,
    kappa_bar,
    kappa_p,
)

FLAG_DEGENERATE = "degenerate"
FLAG_NEGATIVE_RADICAND = "negative-radicand"
FLAG_OUT_OF_RANGE = "ratio-out-of-range"

_ONE = WeightFunction.constant_one()


class SelectionError(RuntimeError):
    """No pre-averaging level satisfies the selection threshold."""


class MonotonicityError(RuntimeError):
    """The ratio function is not increasing on the inversion grid."""


@dataclass(frozen=True)
class GridConfig:
    """Resolution ``q_n`` of the grid the level selection snaps ``H`` onto."""

    q_n: Optional[int] = None

    def resolve(self, n: int) -> int:
        if self.q_n is not None:
            if self.q_n < 1:
                raise ValueError("q_n must be positive")
            return int(self.q_n)
        return int(math.ceil(math.log(n) ** 2))


@dataclass(frozen=True)
class EstimationResult:
    """Outcome of one estimator.

    Single-coordinate estimators fill only their own field of ``H``,
    ``sigma``, ``tau``; ``theta_hat`` is available once all three are set.
    """

    stage: str
    H: Optional[float] = None
    sigma: Optional[float] = None
    tau: Optional[float] = None
    levels_used: Tuple[Tuple[int, int], ...] = ()
    clamped: Dict[str, bool] = field(default_factory=dict)
    flags: frozenset = frozenset()
    trajectory: Tuple[Theta, ...] = ()
    rounds: int = 0
    raw: Tuple[float, ...] = ()

    @property
    def theta_hat(self) -> Theta:
        if None in (self.H, self.sigma, self.tau):
            raise AttributeError(f"stage '{self.stage}' does not estimate the full triple")
        return Theta(self.H, self.sigma, self.tau)

    @property
    def failed(self) -> bool:
        """Degenerate data or a failed selection (the NaN column of a table)."""
        return FLAG_DEGENERATE in self.flags or "selection-failure" in self.flags


# --------------------------------------------------------------------------
# helpers

class EnergyTable:
    """Memoised energies of one path for a fixed weight."""

    def __init__(self, obs, w: WeightFunction):
        self.values = obs.values if isinstance(obs, ObservationSeries) else np.asarray(obs, float)
        self.n = self.values.size - 1
        self.w = w
        self._memo: Dict[Tuple[int, int], float] = {}

    def __call__(self, J: int, p: int) -> float:
        key = (J, p)
        if key not in self._memo:
            self._memo[key] = energy(self.values, J, p, self.w).value
        return self._memo[key]


def _scheme_K(obs) -> int:
    return obs.scheme.K if isinstance(obs, ObservationSeries) else 0


def _weight(obs, w: Optional[WeightFunction]) -> WeightFunction:
    return default_weight(_scheme_K(obs)) if w is None else w


def _table(obs, w: WeightFunction, cache: Optional[dict]) -> EnergyTable:
    if cache is None:
        return EnergyTable(obs, w)
    if w not in cache:
        cache[w] = EnergyTable(obs, w)
    return cache[w]


def _clamp_flagged(value: float, lo: float, hi: float) -> Tuple[float, bool]:
    out = clamp(value, lo, hi)
    return out, out != value


def _log_ratio_H(num: float, den: float, box: ParamBox) -> Tuple[float, bool, bool]:
    """``1/2 log2(num/den)`` clamped; returns (value, clamped, degenerate)."""
    if num <= 0.0 or not np.isfinite(num):
        return box.H_lo, True, True
    if den <= 0.0 or not np.isfinite(den):
        return box.H_hi, True, True
    value, was_clamped = _clamp_flagged(0.5 * math.log2(num / den), box.H_lo, box.H_hi)
    return value, was_clamped, False


def _radicand_root(value: float, lo: float, hi: float) -> Tuple[float, bool, bool]:
    if not value > 0.0:
        return lo, True, True
    out, was_clamped = _clamp_flagged(math.sqrt(value), lo, hi)
    return out, was_clamped, False


def diamond(H: float, K: int) -> float:
    return 2.0 * K + 2.0 * H + 1.0


def m_opt(H_lo: float) -> int:
    """Number of rounds ``floor((2 H_lo + 1) / (8 H_lo^2)) + 1``."""
    h = Fraction(repr(float(H_lo)))
    return int((2 * h + 1) // (8 * h * h)) + 1


def initial_level(n: int, K: int) -> int:
    """``max(floor(n^{2/(2K+3)}), 2)``."""
    p = int(math.floor(n ** (2.0 / (2 * K + 3)) + 1e-9))
    return max(p, 2)


# --------------------------------------------------------------------------
# initial guesses

def h0_estimate(obs: ObservationSeries, w: Optional[WeightFunction] = None,
                box: ParamBox = DEFAULT_BOX, cache: Optional[dict] = None) -> EstimationResult:
    """Energy-ratio guess for ``H`` at the ``H``-free level ``n^{2/(2K+3)}``."""
    w = _weight(obs, w)
    n = obs.n
    p = initial_level(n, _scheme_K(obs))
    J = j_pair(p, n)
    if J < 1:
        raise DegenerateInputError(f"n={n} too short for level {p}")
    q = _table(obs, w, cache)
    H, was_clamped, bad = _log_ratio_H(q(J, 2 * p), q(2 * J, p), box)
    return EstimationResult(
        "guess", H=H, levels_used=((p, 2 * J), (2 * p, J)), clamped={"H": was_clamped},
        flags=frozenset({FLAG_DEGENERATE} if bad else ()))


def _q_unit(obs, cache: Optional[dict]) -> Tuple[float, int]:
    n = obs.n
    if n < 4:
        raise DegenerateInputError("need n >= 4")
    J = j_star(1, n)
    return _table(obs, _ONE, cache)(J, 1), J


def tau0_estimate(obs: ObservationSeries, box: ParamBox = DEFAULT_BOX,
                  cache: Optional[dict] = None) -> EstimationResult:
    """Noise scale from unit-level second differences, ignoring the signal."""
    return tau_corrected(obs, 0.5, 0.0, box=box, cache=cache, stage="guess")


# --------------------------------------------------------------------------
# corrected estimators

def grid_level(H_tilde: float, n: int, K: int, grid: GridConfig = GridConfig(),
               box: ParamBox = DEFAULT_BOX) -> int:
    """Level ``floor(n^{2h/(2K+2h+1)})`` at the grid point ``h`` below ``H_tilde``.

    Never below 2, and capped so that both ``p`` and ``2p`` keep a block.
    """
    q = grid.resolve(n)
    width = box.H_hi - box.H_lo
    i = math.floor(q * (clamp(H_tilde, box.H_lo, box.H_hi) - box.H_lo) / width)
    h = box.H_lo + (i / q) * width
    p = max(int(math.floor(n ** (2.0 * h / diamond(h, K)))), 2)
    while p > 2 and j_pair(p, n) < 1:
        p -= 1
    return p


def snapped_H(H_tilde: float, n: int, grid: GridConfig = GridConfig(),
              box: ParamBox = DEFAULT_BOX) -> float:
    q = grid.resolve(n)
    width = box.H_hi - box.H_lo
    i = math.floor(q * (clamp(H_tilde, box.H_lo, box.H_hi) - box.H_lo) / width)
    return box.H_lo + (i / q) * width


def sigma_corrected(obs: ObservationSeries, H_tilde: float, tau_tilde: float,
                    grid: GridConfig = GridConfig(), w: Optional[WeightFunction] = None,
                    box: ParamBox = DEFAULT_BOX, cache: Optional[dict] = None) -> EstimationResult:
    """Signal scale from all blocks at the adaptive level, noise bias removed."""
    w = _weight(obs, w)
    n, K = obs.n, _scheme_K(obs)
    p = grid_level(H_tilde, n, K, grid, box)
    J = j_star(p, n)
    if J < 1:
        raise DegenerateInputError(f"n={n} too short for level {p}")
    q = _table(obs, w, cache)(J, p)
    num = q - J * tau_tilde ** 2 * gamma_p_oracle(p, K, w) / n
    den = J * kappa_p(p, H_tilde, w) * (p / n) ** (1.0 + 2.0 * H_tilde)
    sigma, was_clamped, bad = _radicand_root(num / den, box.sigma_lo, box.sigma_hi)
    return EstimationResult(
        "corrected", sigma=sigma, levels_used=((p, J),), clamped={"sigma": was_clamped},
        flags=frozenset({FLAG_NEGATIVE_RADICAND} if bad else ()))


def _corrected(q: float, theta: Theta, J: int, p: int, n: int, K: int,
               w: WeightFunction) -> float:
    sig = theta.sigma ** 2 * kappa_bar(p, theta.H, w) * (p / n) ** (1.0 + 2.0 * theta.H)
    return q - J * (sig + theta.tau ** 2 * gamma_p_oracle(p, K, w) / n)


def H_corrected(obs: ObservationSeries, theta_tilde: Theta, grid: GridConfig = GridConfig(),
                w: Optional[WeightFunction] = None, box: ParamBox = DEFAULT_BOX,
                cache: Optional[dict] = None) -> EstimationResult:
    """Ratio of bias-corrected energies at levels ``2p`` and ``p``."""
    w = _weight(obs, w)
    n, K = obs.n, _scheme_K(obs)
    p = grid_level(theta_tilde.H, n, K, grid, box)
    J = j_pair(p, n)
    if J < 1:
        raise DegenerateInputError(f"n={n} too short for level {p}")
    table = _table(obs, w, cache)
    num = _corrected(table(J, 2 * p), theta_tilde, J, 2 * p, n, K, w)
    den = _corrected(table(2 * J, p), theta_tilde, 2 * J, p, n, K, w)
    H, was_clamped, bad = _log_ratio_H(num, den, box)
    return EstimationResult(
        "corrected", H=H, levels_used=((p, 2 * J), (2 * p, J)), clamped={"H": was_clamped},
        flags=frozenset({FLAG_DEGENERATE} if bad else ()))


def tau_corrected(obs: ObservationSeries, H_tilde: float, sigma_tilde: float,
                  box: ParamBox = DEFAULT_BOX, cache: Optional[dict] = None,
                  stage: str = "corrected") -> EstimationResult:
    """Noise scale from unit-level energy after removing the signal term."""
    n, K = obs.n, _scheme_K(obs)
    q, J = _q_unit(obs, cache)
    signal = J * sigma_tilde ** 2 * kappa_p(1, H_tilde, _ONE) * n ** (-1.0 - 2.0 * H_tilde)
    radicand = n * (q - signal) / (J * gamma_p_oracle(1, K, _ONE))
    tau, was_clamped, bad = _radicand_root(radicand, box.tau_lo, box.tau_hi)
    return EstimationResult(
        stage, tau=tau, levels_used=((1, J),), clamped={"tau": was_clamped},
        flags=frozenset({FLAG_NEGATIVE_RADICAND} if bad else ()))


# --------------------------------------------------------------------------
# iterative procedure

def iterate(obs: ObservationSeries, grid: GridConfig = GridConfig(),
            w: Optional[WeightFunction] = None, box: ParamBox = DEFAULT_BOX,
            rounds: Optional[int] = None) -> EstimationResult:
    """Alternate the corrected estimators ``H`` then ``tau`` then ``sigma``.

    Runs ``m_opt(box.H_lo)`` rounds unless ``rounds`` is given. Each round is
    a deterministic function of the previous triple, so once a triple
    repeats the remaining rounds follow the detected cycle and are filled in
    without recomputation.
    """
    w = _weight(obs, w)
    total = m_opt(box.H_lo) if rounds is None else int(rounds)
    cache: dict = {}
    flags = set()

    h0 = h0_estimate(obs, w, box, cache)
    t0 = tau0_estimate(obs, box, cache)
    s0 = sigma_corrected(obs, h0.H, t0.tau, grid, w, box, cache)
    for r in (h0, t0, s0):
        flags |= r.flags
    traj = [Theta(h0.H, s0.sigma, t0.tau)]
    seen = {traj[0]: 0}
    levels = []
    clamped = {"H": h0.clamped["H"], "sigma": s0.clamped["sigma"], "tau": t0.clamped["tau"]}

    m = 0
    while m < total:
        prev = traj[-1]
        rh = H_corrected(obs, prev, grid, w, box, cache)
        rt = tau_corrected(obs, rh.H, prev.sigma, box, cache)
        rs = sigma_corrected(obs, rh.H, rt.tau, grid, w, box, cache)
        flags |= rh.flags | rt.flags | rs.flags
        levels.append(rh.levels_used)
        clamped = {"H": rh.clamped["H"], "sigma": rs.clamped["sigma"], "tau": rt.clamped["tau"]}
        nxt = Theta(rh.H, rs.sigma, rt.tau)
        m += 1
        traj.append(nxt)
        if nxt in seen:
            start = seen[nxt]
            cycle = traj[start:-1]
            traj.extend(cycle[(k % len(cycle))] for k in range(1, total - m + 1))
            break
        seen[nxt] = m

    final = traj[-1]
    return EstimationResult(
        "iterative-final", H=final.H, sigma=final.sigma, tau=final.tau,
        levels_used=levels[-1] if levels else h0.levels_used, clamped=clamped,
        flags=frozenset(flags), trajectory=tuple(traj), rounds=total)


# --------------------------------------------------------------------------
# practical procedure

def max_level(n: int) -> int:
    """Largest ``p`` for which both ``p`` and ``2p`` still hold two paired blocks."""
    p = n // 6
    while p > 2 and j_pair(p, n) < 2:
        p -= 1
    return max(p, 2)


def p_star(obs: ObservationSeries, nu0: float = 2.0, w: Optional[WeightFunction] = None,
           cache: Optional[dict] = None, p_max: Optional[int] = None) -> int:
    """Smallest ``p >= 2`` with ``Q_{J_p, 2p} >= nu0 / p``.

    The scan stops at ``p_max`` (default :func:`max_level`); pass
    ``math.isqrt(n)`` for the conservative square-root cap.
    """
    if nu0 <= 0:
        raise ValueError("nu0 must be positive")
    w = _weight(obs, w)
    n = obs.n
    cap = max_level(n) if p_max is None else min(int(p_max), max_level(n))
    table = _table(obs, w, cache)
    for p in range(2, cap + 1):
        J = j_pair(p, n)
        if table(J, 2 * p) >= nu0 / p:
            return p
    raise SelectionError(f"no level p <= {cap} reaches the threshold {nu0}/p")


def psi_p(x, p: int, w: WeightFunction):
    """``kappa_{2p}(x) 2^{2x} / kappa_p(x)``, vectorised in ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return kappa_p(2 * p, float(x), w) * 2.0 ** (2.0 * float(x)) / kappa_p(p, float(x), w)
    return kappa_p(2 * p, x, w) * 2.0 ** (2.0 * x) / kappa_p(p, x, w)


_PSI_GRID_STEP = 1e-3


@lru_cache(maxsize=1024)
def _psi_checked(p: int, w: WeightFunction, lo: float, hi: float) -> Tuple[float, float]:
    grid = np.linspace(lo, hi, int(round((hi - lo) / _PSI_GRID_STEP)) + 1)
    values = psi_p(grid, p, w)
    if not np.all(np.diff(values) > 0):
        raise MonotonicityError(f"psi_{p} is not increasing on [{lo}, {hi}]")
    return float(values[0]), float(values[-1])


def psi_p_inverse(r: float, p: int, w: WeightFunction, box: ParamBox = DEFAULT_BOX,
                  ) -> Tuple[float, bool]:
    """Solve ``psi_p(x) = r`` on ``[H_lo, H_hi]``; returns (x, clamped)."""
    if p < 2:
        raise ValueError("p must be at least 2")
    lo_val, hi_val = _psi_checked(int(p), w, box.H_lo, box.H_hi)
    if not np.isfinite(r) or r <= lo_val:
        return box.H_lo, True
    if r >= hi_val:
        return box.H_hi, True
    x = brentq(lambda h: psi_p(h, p, w) - r, box.H_lo, box.H_hi, xtol=1e-12, rtol=1e-14)
    return float(x), False


def ratio_blocks(p: int, n: int, mode: str = "coarse") -> int:
    """Block count ``J`` for the ratio ``Q_{J,2p} / Q_{2J,p}`` of the practical estimator.

    ``"coarse"`` takes half the blocks available at level ``2p``, so each
    energy spans half the path; ``"paired"`` takes as many as both levels
    allow, spanning the whole path.
    """
    if mode == "coarse":
        return j_level(2 * p, n)
    if mode == "paired":
        return j_pair(p, n)
    raise ValueError(f"unknown block mode '{mode}'")


def H_star(obs: ObservationSeries, nu0: float = 2.0, w: Optional[WeightFunction] = None,
           box: ParamBox = DEFAULT_BOX, cache: Optional[dict] = None,
           p_max: Optional[int] = None, blocks: str = "coarse") -> EstimationResult:
    """Practical estimator: data-driven level, then invert the ratio function."""
    w = _weight(obs, w)
    n = obs.n
    try:
        p = p_star(obs, nu0, w, cache, p_max)
    except SelectionError:
        return EstimationResult("practical", H=box.H_lo, clamped={"H": True},
                                flags=frozenset({"selection-failure"}))
    J = ratio_blocks(p, n, blocks)
    if J < 1:
        return EstimationResult("practical", H=box.H_lo, clamped={"H": True},
                                flags=frozenset({FLAG_DEGENERATE}))
    table = _table(obs, w, cache)
    num, den = table(J, 2 * p), table(2 * J, p)
    levels = ((p, 2 * J), (2 * p, J))
    if num <= 0.0 or den <= 0.0:
        H, _, _ = _log_ratio_H(num, den, box)
        return EstimationResult("practical", H=H, levels_used=levels,
                                clamped={"H": True}, flags=frozenset({FLAG_DEGENERATE}))
    H, was_clamped = psi_p_inverse(num / den, p, w, box)
    return EstimationResult(
        "practical", H=H, levels_used=levels, clamped={"H": was_clamped},
        flags=frozenset({FLAG_OUT_OF_RANGE} if was_clamped else ()))


def practical_estimate(obs: ObservationSeries, nu0: float = 2.0,
                       grid: GridConfig = GridConfig(), w: Optional[WeightFunction] = None,
                       box: ParamBox = DEFAULT_BOX, blocks: str = "coarse") -> EstimationResult:
    """Full triple from the practical ``H`` followed by corrected ``sigma`` and ``tau``.

    ``sigma`` is first fitted against the unit-level noise guess, then ``tau``
    is corrected with that ``sigma`` and ``sigma`` refitted once.
    """
    w = _weight(obs, w)
    cache: dict = {}
    rh = H_star(obs, nu0, w, box, cache, blocks=blocks)
    t0 = tau0_estimate(obs, box, cache)
    s1 = sigma_corrected(obs, rh.H, t0.tau, grid, w, box, cache)
    t1 = tau_corrected(obs, rh.H, s1.sigma, box, cache)
    s2 = sigma_corrected(obs, rh.H, t1.tau, grid, w, box, cache)
    flags = rh.flags | t0.flags | s1.flags | t1.flags | s2.flags
    return EstimationResult(
        "practical", H=rh.H, sigma=s2.sigma, tau=t1.tau,
        levels_used=rh.levels_used + s2.levels_used,
        clamped={"H": rh.clamped["H"], "sigma": s2.clamped["sigma"], "tau": t1.clamped["tau"]},
        flags=frozenset(flags))
