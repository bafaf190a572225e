"""Closed-form fluid limits of the copy network on the normal time scale.

Stable regime (rho > d*beta): the fluid state is frozen at (0, ..., 0, beta).
Overloaded regime (p*beta < rho < (p+1)*beta, 2 <= p <= d-1): mass cascades
down through the levels. On the segment [t_{l+1}, t_l] level l is the active
one (it absorbs the whole duplication drift), levels below are pinned at zero
and levels above relax as exponential mixtures:

    s_l(t) = (l+1)*beta - rho + xi_{l,1} e^{-mu t} + sum_{i>=l+2} xi_{l,i} e^{-i mu t}
    s_k(t) = beta (1 - sum_{i>=k+1} alpha_{k,i} e^{-i mu t}),   k >= l+1

The thresholds t_l solve s_l(t_l) = rho/l (finite for l >= p+1, t_p = infinity,
t_d = 0) and the coefficient tables follow from the segment ODEs

    s_l' = mu (l+1) s_{l+1} - mu s_l - lam,    s_k' = mu (k+1) (s_{k+1} - s_k)

with continuity at the thresholds. The cross-check against the generalized
Skorohod solver (fluid_numeric) is the authoritative correctness test for the
coefficient indexing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import skorohod
from .errors import RegimeRejected, RootBracketFailure
from .model import ModelParams, Regime, classify_regime
from .skorohod import GSPResult, chain_reflection, _fluid_functional

#: bisection accuracy for the threshold equations s_l(t_l) = rho/l
THRESHOLD_TOL = 1e-12


@dataclass(frozen=True)
class FluidSolution:
    """Thresholds and coefficient tables defining the piecewise fluid limit.

    thresholds[l] is t_l for l = p..d (t_d = 0, t_p = +inf); xi[l] maps mode
    index i to xi_{l,i} for the active segment of level l; alpha[k] maps i to
    alpha_{k,i} for the relaxing tail of level k. Stable solutions carry empty
    tables and p = None.
    """

    params: ModelParams
    regime: Regime
    thresholds: dict[int, float] = field(default_factory=dict)
    alpha: dict[int, dict[int, float]] = field(default_factory=dict)
    xi: dict[int, dict[int, float]] = field(default_factory=dict)

    @property
    def p(self) -> int | None:
        return self.regime.p

    def active_level(self, t: float) -> int:
        """Level receiving the duplication drift at time t (overloaded only)."""
        level = self.params.d - 1
        while level > self.regime.p and t >= self.thresholds[level]:
            level -= 1
        return level

    def _active_levels(self, ts: np.ndarray) -> np.ndarray:
        d, p = self.params.d, self.regime.p
        finite = np.array([self.thresholds[l] for l in range(d - 1, p, -1)])
        return d - 1 - np.searchsorted(finite, ts, side="right")

    def _s_active(self, level: int, ts: np.ndarray) -> np.ndarray:
        pr = self.params
        out = (level + 1) * pr.beta - pr.rho + np.zeros_like(ts)
        for i, coeff in self.xi[level].items():
            out = out + coeff * np.exp(-i * pr.mu * ts)
        return out

    def _s_relaxed(self, level: int, ts: np.ndarray) -> np.ndarray:
        pr = self.params
        tail = np.zeros_like(ts)
        for i, coeff in self.alpha[level].items():
            tail = tail + coeff * np.exp(-i * pr.mu * ts)
        return pr.beta * (1.0 - tail)

    def s_grid(self, k: int, ts: np.ndarray) -> np.ndarray:
        """Cumulative fluid mass s_k = x_1 + ... + x_k on an array of times."""
        pr = self.params
        ts = np.asarray(ts, dtype=np.float64)
        if not 1 <= k <= pr.d:
            raise ValueError(f"k must be in 1..{pr.d}, got {k}")
        if self.regime.is_stable or k == pr.d:
            full = pr.beta if k == pr.d else 0.0
            return np.full(ts.shape, full)
        active = self._active_levels(ts)
        out = np.zeros(ts.shape)
        on = active == k
        if on.any():
            out[on] = self._s_active(k, ts[on])
        above = active < k
        if above.any():
            out[above] = self._s_relaxed(k, ts[above])
        return out

    def x_grid(self, ts: np.ndarray) -> np.ndarray:
        """Occupancy fractions (x_0, ..., x_d) on an array of times."""
        pr = self.params
        ts = np.asarray(ts, dtype=np.float64)
        out = np.zeros(ts.shape + (pr.d + 1,))
        if self.regime.is_stable:
            out[..., pr.d] = pr.beta
            return out
        s_prev = np.zeros(ts.shape)
        for k in range(1, pr.d + 1):
            s_k = self.s_grid(k, ts)
            out[..., k] = s_k - s_prev
            s_prev = s_k
        # x_0 = mu * int s_1 = 0 in every covered regime (s_1 identically 0)
        return out

    def s(self, k: int, t: float) -> float:
        return float(self.s_grid(k, np.array([t]))[0])

    def x(self, t: float) -> np.ndarray:
        return self.x_grid(np.array([t]))[0]


def _bisect_threshold(fun, lo: float, target: float, mu: float) -> float:
    """Root of fun(t) = target on (lo, inf); fun increases from fun(lo) < target."""
    step = 1.0 / mu
    hi = lo + step
    for _ in range(80):
        if fun(hi) >= target:
            break
        step *= 2.0
        hi += step
    else:
        raise RootBracketFailure(
            f"could not bracket threshold: fun({hi:g}) = {fun(hi):g} < {target:g}"
        )
    a, b = lo, hi
    while b - a > THRESHOLD_TOL:
        mid = 0.5 * (a + b)
        if fun(mid) >= target:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def fluid_limit(params: ModelParams) -> FluidSolution:
    """Closed-form fluid limit; Stable or Overloaded regimes only."""
    regime = classify_regime(params)
    if regime.is_rejected:
        raise RegimeRejected(regime.reason or "rejected parameters")
    if regime.is_stable:
        return FluidSolution(params=params, regime=regime)

    p, d = regime.p, params.d
    beta, rho, mu = params.beta, params.rho, params.mu
    thresholds: dict[int, float] = {d: 0.0, p: math.inf}
    alpha: dict[int, dict[int, float]] = {d: {}}
    xi: dict[int, dict[int, float]] = {}

    for level in range(d - 1, p - 1, -1):
        # active-segment particular modes, driven by the level above
        row = {
            i: (level + 1) * beta / (i - 1) * coeff
            for i, coeff in alpha[level + 1].items()
        }
        # homogeneous mode pinned by s_level(t_{level+1}) = 0
        t_start = thresholds[level + 1]
        row[1] = -math.exp(mu * t_start) * (
            (level + 1) * beta
            - rho
            + sum(coeff * math.exp(-i * mu * t_start) for i, coeff in row.items())
        )
        xi[level] = row

        if level == p:
            break  # s_p never reaches rho/p: the last segment runs to infinity

        sol_stub = FluidSolution(params=params, regime=regime, thresholds=thresholds,
                                 alpha=alpha, xi=xi)
        t_level = _bisect_threshold(
            lambda t: float(sol_stub._s_active(level, t)), t_start, rho / level, mu
        )
        thresholds[level] = t_level

        # relaxing-tail coefficients for t >= t_level
        tail = {
            i: (level + 1) / (level + 1 - i) * coeff
            for i, coeff in alpha[level + 1].items()
        }
        tail[level + 1] = math.exp((level + 1) * mu * t_level) * (
            1.0
            - rho / (level * beta)
            - sum(coeff * math.exp(-i * mu * t_level) for i, coeff in tail.items())
        )
        alpha[level] = tail

    return FluidSolution(params=params, regime=regime, thresholds=thresholds,
                         alpha=alpha, xi=xi)


def eval_fluid(sol: FluidSolution, t: float) -> np.ndarray:
    """Occupancy fractions (x_0, ..., x_d) of the fluid limit at time t >= 0."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return sol.x(t)


def fluid_numeric(
    params: ModelParams,
    grid: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 20,
) -> GSPResult:
    """Fluid limit by the generalized Skorohod route (dual to fluid_limit).

    The solution's x holds (s_1, ..., s_{d-1}) on the grid; r is the raw GSP
    regulator, i.e. lam times the paper's occupation-time regulators. Windows
    of length 2/(d*mu) keep the per-stage Picard count within max_iter.
    """
    regime = classify_regime(params)
    if regime.is_rejected:
        raise RegimeRejected(regime.reason or "rejected parameters")
    g = _fluid_functional(params)
    p = chain_reflection(params.d - 1)
    window = 2.0 / (params.d * params.mu)
    return skorohod.solve_gsp(g, p, grid, tol=tol, max_iter=max_iter, window=window)
