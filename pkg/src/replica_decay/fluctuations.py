"""Gaussian fluctuations of the lost-file count on the decay time scale.

The centered, sqrt(N)-rescaled lost count converges to the solution of

    dW = sqrt(Phi'(t)) dB - a(t) (W - gamma) dt,   W(0) = 0,
    a(t) = lam^2 mu d! / (rho^{d-1} (lam - d mu (beta - Phi(t)))^2),

a linear mean-reverting SDE whose diffusion coefficient depends on time only.
Euler-Maruyama with a fixed step is therefore strong order 1; the integrator
is vectorized across paths, with per-path Philox streams keyed by
(seed, path index) so ensembles are reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asymptotics import DecayCurve, phi_of_t, phi_prime
from .errors import GridMismatch
from .model import ModelParams
from .simulate import EnsembleStats


def _coefficients(params: ModelParams, grid: np.ndarray):
    """(diffusion std per step already excluded) a(t) and Phi'(t) on the grid."""
    curve = DecayCurve(params)
    phi = phi_of_t(curve, grid)
    dphi = phi_prime(curve, phi)
    pr = params
    denom = pr.lam - pr.d * pr.mu * (pr.beta - phi)
    a = pr.lam**2 * pr.mu * math.factorial(pr.d) / (pr.rho ** (pr.d - 1) * denom**2)
    return phi, dphi, a


def _path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Philox keyed by (seed, path index): independent streams by design."""
    key = (int(seed) & ((1 << 64) - 1)) | (int(path_index) + 1 << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class FluctuationPath:
    """One integrated path of the fluctuation SDE on a scaled-time grid."""

    grid: np.ndarray
    w: np.ndarray
    seed: int


def _euler_paths(
    params: ModelParams,
    grid: np.ndarray,
    noises: np.ndarray,
    diffusion_scale: float,
) -> np.ndarray:
    """Integrate a block of paths; noises has shape (paths, len(grid)-1)."""
    _, dphi, a = _coefficients(params, grid)
    steps = np.diff(grid)
    sigma = diffusion_scale * np.sqrt(np.maximum(dphi[:-1], 0.0) * steps)
    w = np.zeros((noises.shape[0], grid.shape[0]))
    for i in range(steps.shape[0]):
        drift = -a[i] * (w[:, i] - params.gamma) * steps[i]
        w[:, i + 1] = w[:, i] + drift + sigma[i] * noises[:, i]
    return w


def simulate_clt_path(
    params: ModelParams,
    grid: np.ndarray,
    seed: int,
    diffusion_scale: float = 1.0,
) -> FluctuationPath:
    """Euler-Maruyama path of the fluctuation SDE; deterministic given seed.

    diffusion_scale = 0 gives the noiseless mean ODE (useful as an oracle:
    the drift's unique fixed point is W = gamma).
    """
    grid = np.asarray(grid, dtype=np.float64)
    noise = _path_generator(seed, 0).standard_normal(grid.shape[0] - 1)
    w = _euler_paths(params, grid, noise[None, :], diffusion_scale)[0]
    return FluctuationPath(grid=grid, w=w, seed=seed)


@dataclass(frozen=True)
class CLTEnsemble:
    """Per-grid-point moments of the SDE ensemble."""

    grid: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    paths: int


def clt_ensemble(
    params: ModelParams,
    grid: np.ndarray,
    reps: int,
    seed: int,
    chunk: int = 512,
) -> CLTEnsemble:
    """Moments over `reps` independent SDE paths (chunked to bound memory)."""
    if reps < 2:
        raise ValueError(f"need reps >= 2, got {reps}")
    grid = np.asarray(grid, dtype=np.float64)
    n = grid.shape[0]
    total = np.zeros(n)
    total_sq = np.zeros(n)
    done = 0
    while done < reps:
        m = min(chunk, reps - done)
        noises = np.empty((m, n - 1))
        for j in range(m):
            noises[j] = _path_generator(seed, done + j).standard_normal(n - 1)
        w = _euler_paths(params, grid, noises, 1.0)
        total += w.sum(axis=0)
        total_sq += (w * w).sum(axis=0)
        done += m
    mean = total / reps
    var = (total_sq - reps * mean * mean) / (reps - 1)
    return CLTEnsemble(grid=grid, mean=mean, var=np.maximum(var, 0.0), paths=reps)


def clt_mean_ode(params: ModelParams, grid: np.ndarray) -> np.ndarray:
    """Mean of the SDE: gamma (1 - exp(-int_0^t a)), by trapezoid quadrature.

    The SDE is linear in W, so its mean solves the noiseless relaxation ODE.
    """
    grid = np.asarray(grid, dtype=np.float64)
    _, _, a = _coefficients(params, grid)
    steps = np.diff(grid)
    cum_a = np.concatenate([[0.0], np.cumsum(0.5 * steps * (a[:-1] + a[1:]))])
    return params.gamma * (1.0 - np.exp(-cum_a))


def empirical_fluctuation(
    stats: EnsembleStats,
    curve: DecayCurve,
    grid: np.ndarray | None = None,
) -> np.ndarray:
    """Rescale simulated paths: (x_0(N^{d-1} t) - N Phi(t)) / sqrt(N).

    stats must come from run_ensemble(..., keep_paths=True) observed at
    exponent q = d-1; returns one row per replication, no smoothing.
    """
    if stats.paths is None:
        raise ValueError("need an ensemble with keep_paths=True")
    if grid is not None and (
        stats.grid.shape != np.asarray(grid).shape
        or not np.allclose(stats.grid, grid, rtol=0, atol=1e-12)
    ):
        raise GridMismatch("ensemble grid differs from the requested grid")
    n = stats.n_servers
    phi = phi_of_t(curve, stats.grid)
    return (stats.paths[:, :, 0] - n * phi) / math.sqrt(n)
