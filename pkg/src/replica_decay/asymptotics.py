"""Decay law of the stable network and the overloaded local-equilibrium decay.

Stable regime, time scale t -> N^{d-1} t: the lost fraction converges to
Phi(t), the unique y in [0, beta) with

    (1 - y/beta)^{rho/d} e^y = exp(-c t),      c = lam (d-1)! / rho^{d-1}.

Overloaded regime started from the local equilibrium, time scale N^{p-1}:
Phi_0 solves the same equation with beta -> beta' = beta - rho/(p+1),
exponent rho/(p(p+1)) and constant lam (p-1)!/rho^{p-1}; the level masses
follow linearly:  Phi_p = (p+1)(beta - Phi_0) - rho,
Phi_{p+1} = rho - p(beta - Phi_0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError, RegimeRejected
from .model import ModelParams, classify_regime

#: residual target for the implicit-equation bisections
BISECT_TOL = 1e-12


def _bisect_decay(exponent: float, cap: float, ct) -> np.ndarray:
    """Solve exponent*log(1 - y/cap) + y + ct = 0 for y in [0, cap), vectorized.

    The map is strictly decreasing in y whenever exponent > cap (true in every
    covered regime), so plain bisection is exact and robust.
    """
    ct = np.asarray(ct, dtype=np.float64)
    lo = np.zeros(ct.shape)
    hi = np.full(ct.shape, cap * (1.0 - 1e-16))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        val = exponent * np.log1p(-mid / cap) + mid + ct
        above = val > 0.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class DecayCurve:
    """Phi and its inverse for a stable parameter set."""

    params: ModelParams

    def __post_init__(self):
        if not classify_regime(self.params).is_stable:
            raise RegimeRejected("decay law needs the stable regime rho > d*beta")

    @property
    def c(self) -> float:
        """Decay constant lam*(d-1)!/rho^{d-1}; the decay time scale is N^{d-1}."""
        pr = self.params
        return pr.lam * math.factorial(pr.d - 1) / pr.rho ** (pr.d - 1)


def phi_of_t(curve: DecayCurve, t) -> np.ndarray | float:
    """Lost fraction Phi(t) on the decay time scale; accepts scalars or arrays."""
    pr = curve.params
    t_arr = np.asarray(t, dtype=np.float64)
    if (t_arr < 0).any():
        raise ValueError("t must be >= 0")
    y = _bisect_decay(pr.rho / pr.d, pr.beta, curve.c * t_arr)
    return float(y) if np.isscalar(t) or t_arr.ndim == 0 else y


def t_of_phi(curve: DecayCurve, y: float) -> float:
    """Closed-form inverse t(y) = -[(rho/d) log(1 - y/beta) + y] / c."""
    pr = curve.params
    if not 0.0 <= y < pr.beta:
        raise DomainError(f"y must be in [0, beta={pr.beta:g}), got {y}")
    return -(pr.rho / pr.d * math.log1p(-y / pr.beta) + y) / curve.c


def phi_prime(curve: DecayCurve, phi_values) -> np.ndarray | float:
    """Phi'(t) expressed through Phi itself (the fixed-point integrand):
    c * d*mu*(beta - Phi) / (lam - d*mu*(beta - Phi))."""
    pr = curve.params
    refill = pr.d * pr.mu * (pr.beta - np.asarray(phi_values, dtype=np.float64))
    out = curve.c * refill / (pr.lam - refill)
    return float(out) if np.ndim(phi_values) == 0 else out


def phi_via_ode(curve: DecayCurve, grid: np.ndarray) -> np.ndarray:
    """Phi on the grid by RK4 on the fixed-point ODE (dual to phi_of_t)."""
    pr = curve.params
    grid = np.asarray(grid, dtype=np.float64)
    if grid[0] != 0.0:
        raise ValueError("grid must start at 0")
    out = np.empty_like(grid)
    _kernels.decay_ode_rk4(curve.c, pr.d * pr.mu, pr.lam, pr.beta, grid, out)
    return out


def decay_time_asymptote(params: ModelParams, delta: float) -> float:
    """Limit of T_N(delta)/N^{d-1}: rho^{d-1}/(lam (d-1)!) *
    (-(rho/d) log(1-delta) - beta*delta). Identical to t_of_phi(delta*beta)."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    curve = DecayCurve(params)
    value = (
        params.rho ** (params.d - 1)
        / (params.lam * math.factorial(params.d - 1))
        * (-params.rho / params.d * math.log1p(-delta) - params.beta * delta)
    )
    other = t_of_phi(curve, delta * params.beta)
    assert abs(value - other) <= 1e-9 * max(abs(value), 1.0), (value, other)
    return value


def occupancy_parameter(curve: DecayCurve, t: float) -> float:
    """Geometric parameter r(t) = d*mu*(beta - Phi(t))/lam of the level-(d-1)
    occupancy on the decay time scale; strictly decreasing, r < 1 when stable."""
    pr = curve.params
    return pr.d * pr.mu * (pr.beta - phi_of_t(curve, t)) / pr.lam


def geometric_pmf(r: float, n: int) -> np.ndarray:
    """First n weights of the geometric law (1-r) r^x, x = 0, 1, ..."""
    if not 0.0 <= r < 1.0:
        raise ValueError(f"r must be in [0, 1), got {r}")
    return (1.0 - r) * r ** np.arange(n)


@dataclass(frozen=True)
class OverloadDecay:
    """Decay of the overloaded local equilibrium on the scale N^{p-1}."""

    params: ModelParams

    def __post_init__(self):
        regime = classify_regime(self.params)
        if not regime.is_overloaded:
            raise RegimeRejected("overload decay needs p*beta < rho < (p+1)*beta")
        object.__setattr__(self, "_p", regime.p)

    @property
    def p(self) -> int:
        return self._p

    @property
    def beta_prime(self) -> float:
        """Limiting lost fraction beta - rho/(p+1)."""
        return self.params.beta - self.params.rho / (self.p + 1)

    @property
    def c(self) -> float:
        """Decay constant lam*(p-1)!/rho^{p-1} on the scale N^{p-1}."""
        pr = self.params
        return pr.lam * math.factorial(self.p - 1) / pr.rho ** (self.p - 1)

    @property
    def equilibrium(self) -> tuple[float, float]:
        """Local-equilibrium level masses ((p+1)beta - rho, rho - p*beta)."""
        pr = self.params
        return (self.p + 1) * pr.beta - pr.rho, pr.rho - self.p * pr.beta


def overload_phi(od: OverloadDecay, t) -> tuple:
    """(Phi_0, Phi_p, Phi_{p+1}) at scaled time t; conserves total mass beta."""
    pr = od.params
    t_arr = np.asarray(t, dtype=np.float64)
    if (t_arr < 0).any():
        raise ValueError("t must be >= 0")
    p = od.p
    phi0 = _bisect_decay(pr.rho / (p * (p + 1)), od.beta_prime, od.c * t_arr)
    phi_p = (p + 1) * (pr.beta - phi0) - pr.rho
    phi_p1 = pr.rho - p * (pr.beta - phi0)
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(phi0), float(phi_p), float(phi_p1)
    return phi0, phi_p, phi_p1
