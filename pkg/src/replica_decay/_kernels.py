"""Hot simulation loops, JIT-compiled under numba with a pure-Python fallback.

Each kernel is written once; :func:`replica_decay._backend.jit` decides at
import time whether to compile it. The ``*_py`` aliases always point at the
plain-Python flavor (wrapped to silence uint64 wraparound warnings) so the two
backends can be benchmarked and bit-compared in one process.

All kernels consume the xoshiro streams of :mod:`replica_decay._rng`, drawing
one exponential for the holding time and one uniform for inverse-CDF event
selection over the fixed order (losses k=1..d ascending, then duplication).
"""

import functools

import numpy as np

from ._backend import USE_NUMBA, jit
from ._rng import exp_unit, uniform01


def _dup_level(x, d):
    """Smallest level 1..d-1 holding files, 0 if the duplicator is idle."""
    for k in range(1, d):
        if x[k] > 0:
            return k
    return 0


def _loss_total(x, d, mu):
    total = 0.0
    for k in range(1, d + 1):
        total += mu * k * x[k]
    return total


def _select_and_apply(x, d, mu, dup, v):
    """Apply the event at CDF position v; v < total holds by construction."""
    acc = 0.0
    for k in range(1, d + 1):
        acc += mu * k * x[k]
        if v < acc:
            x[k] -= 1
            x[k - 1] += 1
            return k
    # beyond the loss mass: the (unique) duplication event
    x[dup] -= 1
    x[dup + 1] += 1
    return -dup


def ctmc_grid(d, lam_n, mu, x0, grid, out, state, event_cap):
    """Exact jump chain sampled right-continuously at the unscaled `grid` times.

    Fills out[i, :] with the occupancy at grid[i]; trailing grid points past
    absorption (or the event cap) repeat the final state. Returns
    (absorbed_at, events, cap_hit) with absorbed_at = -1.0 if never absorbed.
    """
    n = grid.shape[0]
    x = x0.copy()
    t = 0.0
    gi = 0
    events = 0
    absorbed_at = -1.0
    cap_hit = False
    while gi < n:
        total = _loss_total(x, d, mu)
        dup = _dup_level(x, d)
        if dup > 0:
            total += lam_n
        if total == 0.0:
            absorbed_at = t
            break
        if events >= event_cap:
            cap_hit = True
            break
        t_next = t + exp_unit(state) / total
        while gi < n and grid[gi] < t_next:
            for c in range(d + 1):
                out[gi, c] = x[c]
            gi += 1
        if gi >= n:
            break
        _select_and_apply(x, d, mu, dup, uniform01(state) * total)
        events += 1
        t = t_next
    while gi < n:
        for c in range(d + 1):
            out[gi, c] = x[c]
        gi += 1
    return absorbed_at, events, cap_hit


def ctmc_first_passage(d, lam_n, mu, x0, threshold, t_max, state, event_cap):
    """First event time with x_0 >= threshold, exact over the event sequence.

    Returns (t_pass, events, cap_hit); t_pass = -1.0 when the passage did not
    happen before t_max, absorption, or the cap.
    """
    x = x0.copy()
    t = 0.0
    events = 0
    if float(x[0]) >= threshold:
        return 0.0, events, False
    while True:
        total = _loss_total(x, d, mu)
        dup = _dup_level(x, d)
        if dup > 0:
            total += lam_n
        if total == 0.0:
            return -1.0, events, False
        if events >= event_cap:
            return -1.0, events, True
        t_next = t + exp_unit(state) / total
        if t_next > t_max:
            return -1.0, events, False
        sel = _select_and_apply(x, d, mu, dup, uniform01(state) * total)
        events += 1
        t = t_next
        if sel == 1 and float(x[0]) >= threshold:
            return t, events, False


def ctmc_occupancy(d, lam_n, mu, x0, coord, w1, w2, hist, state, event_cap):
    """Time-weighted occupancy of coordinate `coord` over the window [w1, w2).

    Adds holding durations into hist[value] (last bin absorbs any overflow).
    Returns (covered, events, cap_hit) where covered is the accumulated window
    time; covered == w2 - w1 unless the cap stopped the run early.
    """
    nbins = hist.shape[0]
    x = x0.copy()
    t = 0.0
    events = 0
    covered = 0.0
    cap_hit = False
    while t < w2:
        total = _loss_total(x, d, mu)
        dup = _dup_level(x, d)
        if dup > 0:
            total += lam_n
        if total == 0.0:
            # absorbed: the state holds forever
            lo = max(t, w1)
            if w2 > lo:
                v = x[coord]
                if v >= nbins:
                    v = nbins - 1
                hist[v] += w2 - lo
                covered += w2 - lo
            break
        if events >= event_cap:
            cap_hit = True
            break
        t_next = t + exp_unit(state) / total
        lo = max(t, w1)
        hi = min(t_next, w2)
        if hi > lo:
            v = x[coord]
            if v >= nbins:
                v = nbins - 1
            hist[v] += hi - lo
            covered += hi - lo
        if t_next >= w2:
            break
        _select_and_apply(x, d, mu, dup, uniform01(state) * total)
        events += 1
        t = t_next
    return covered, events, cap_hit


def mm1_grid(arrival, service, l0, grid, out_l, out_integral, state, event_cap):
    """Exact M/M/1 occupancy on a time grid plus the exact running integral.

    Returns (events, cap_hit). The integral at grid[i] is int_0^{grid[i]} L du,
    accumulated exactly between jumps.
    """
    n = grid.shape[0]
    level = l0
    t = 0.0
    integral = 0.0
    gi = 0
    events = 0
    cap_hit = False
    while gi < n:
        total = arrival
        if level > 0:
            total += service
        if total == 0.0:
            break
        if events >= event_cap:
            cap_hit = True
            break
        t_next = t + exp_unit(state) / total
        while gi < n and grid[gi] < t_next:
            out_l[gi] = level
            out_integral[gi] = integral + level * (grid[gi] - t)
            gi += 1
        if gi >= n:
            break
        integral += level * (t_next - t)
        if level > 0:
            if uniform01(state) * total < arrival:
                level += 1
            else:
                level -= 1
        else:
            level += 1
        events += 1
        t = t_next
    while gi < n:
        out_l[gi] = level
        out_integral[gi] = integral + level * (grid[gi] - t)
        gi += 1
    return events, cap_hit


def decay_ode_rk4(c, dmu, lam, beta, grid, out):
    """Classic RK4 on y' = c * dmu*(beta-y) / (lam - dmu*(beta-y)), y(0)=0.

    One step per grid interval; `dmu` is the product d*mu. The denominator
    stays positive in the stable regime where this is used.
    """
    n = grid.shape[0]
    y = 0.0
    out[0] = y
    for i in range(1, n):
        h = grid[i] - grid[i - 1]
        g1 = dmu * (beta - y)
        k1 = c * g1 / (lam - g1)
        g2 = dmu * (beta - (y + 0.5 * h * k1))
        k2 = c * g2 / (lam - g2)
        g3 = dmu * (beta - (y + 0.5 * h * k2))
        k3 = c * g3 / (lam - g3)
        g4 = dmu * (beta - (y + h * k3))
        k4 = c * g4 / (lam - g4)
        y += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        out[i] = y
    return y


def _pythonize(fn):
    """Plain-Python alias with uint64 wraparound warnings silenced."""

    @functools.wraps(fn)
    def wrapper(*args):
        with np.errstate(over="ignore"):
            return fn(*args)

    return wrapper


ctmc_grid_py = _pythonize(ctmc_grid)
ctmc_first_passage_py = _pythonize(ctmc_first_passage)
ctmc_occupancy_py = _pythonize(ctmc_occupancy)
mm1_grid_py = _pythonize(mm1_grid)
decay_ode_rk4_py = _pythonize(decay_ode_rk4)

if USE_NUMBA:
    _dup_level = jit(inline="always")(_dup_level)
    _loss_total = jit(inline="always")(_loss_total)
    _select_and_apply = jit(inline="always")(_select_and_apply)
    ctmc_grid = jit()(ctmc_grid)
    ctmc_first_passage = jit()(ctmc_first_passage)
    ctmc_occupancy = jit()(ctmc_occupancy)
    mm1_grid = jit()(mm1_grid)
    decay_ode_rk4 = jit()(decay_ode_rk4)
else:
    ctmc_grid = ctmc_grid_py
    ctmc_first_passage = ctmc_first_passage_py
    ctmc_occupancy = ctmc_occupancy_py
    mm1_grid = mm1_grid_py
    decay_ode_rk4 = decay_ode_rk4_py
