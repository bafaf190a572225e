"""Exact event-by-event simulation of the copy network.

Observation happens on the accelerated clock t -> t * N**q: a trajectory's
grid lives in scaled time, the underlying jump chain runs in real time. Each
replication owns an RNG stream derived from (seed, replication index), so
ensembles are reproducible bit-for-bit and independent of scheduling order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._rng import derive_stream
from .errors import EmptyWindow, EventCapExceeded, RegimeRejected, ReplicaDecayError
from .model import ModelParams, NetworkState, classify_regime, initial_state

#: stream-id offset for auxiliary processes (M/M/1 twins) so they never
#: collide with the per-replication network streams
_AUX_STREAM_OFFSET = 1 << 32

DEFAULT_EVENT_CAP = 10**9


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: explicit arg, else REPLICA_DECAY_THREADS, else cpu count."""
    if threads is None:
        env = os.environ.get("REPLICA_DECAY_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, threads)


@dataclass(frozen=True)
class SimConfig:
    """Observation window and reproducibility knobs for one experiment.

    time_scale_exponent q observes the chain at t*N**q; horizon and grid_step
    are in scaled time. event_cap bounds the jump count per replication.
    """

    horizon: float
    grid_step: float
    seed: int = 0
    replications: int = 1
    time_scale_exponent: int = 0
    event_cap: int = DEFAULT_EVENT_CAP

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError(f"horizon must be > 0, got {self.horizon}")
        if self.grid_step <= 0 or self.grid_step > self.horizon:
            raise ValueError(f"grid_step must be in (0, horizon], got {self.grid_step}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.time_scale_exponent < 0:
            raise ValueError(f"time_scale_exponent must be >= 0, got {self.time_scale_exponent}")
        if self.event_cap < 1:
            raise ValueError(f"event_cap must be >= 1, got {self.event_cap}")

    @property
    def grid(self) -> np.ndarray:
        """Scaled-time grid 0, h, 2h, ... up to the horizon (inclusive)."""
        n = int(math.floor(self.horizon / self.grid_step + 1e-9)) + 1
        return np.arange(n, dtype=np.float64) * self.grid_step

    def unscaled_grid(self, n_servers: int) -> np.ndarray:
        return self.grid * float(n_servers) ** self.time_scale_exponent

    def unscaled_horizon(self, n_servers: int) -> float:
        return self.horizon * float(n_servers) ** self.time_scale_exponent


@dataclass(frozen=True)
class Trajectory:
    """One replication sampled on the scaled grid (cadlag values).

    absorbed_at is the unscaled time the absorbing state was entered, if it
    was. event_cap_hit flags a truncated run: grid points past the cap time
    repeat the last simulated state and should not be trusted.
    """

    grid: np.ndarray
    states: np.ndarray  # (len(grid), d+1) int64
    absorbed_at: float | None
    events: int
    event_cap_hit: bool
    rep_index: int


@dataclass(frozen=True)
class EnsembleStats:
    """Per-grid-point moments of counts/N over a replication ensemble."""

    grid: np.ndarray
    mean: np.ndarray  # (n, d+1) of x_k/N
    var: np.ndarray  # (n, d+1) sample variance of x_k/N (0 when replications == 1)
    replications: int
    n_servers: int
    f_n: int
    n_cap_hits: int
    paths: np.ndarray | None = None  # (reps, n, d+1) raw counts, when kept


def _require_not_rejected(params: ModelParams) -> None:
    regime = classify_regime(params)
    if regime.is_rejected:
        raise RegimeRejected(regime.reason or "rejected parameters")


def _initial_array(params: ModelParams, initial: NetworkState | None) -> np.ndarray:
    state = initial_state(params) if initial is None else initial
    if state.d != params.d or state.total != params.f_n:
        raise ReplicaDecayError(
            f"initial state {state.counts} incompatible with d={params.d}, f_n={params.f_n}"
        )
    return state.as_array()


def simulate_path(
    params: ModelParams,
    cfg: SimConfig,
    rep_index: int = 0,
    initial: NetworkState | None = None,
) -> Trajectory:
    """Simulate one replication exactly; deterministic given (seed, rep_index)."""
    _require_not_rejected(params)
    x0 = _initial_array(params, initial)
    grid = cfg.grid
    out = np.empty((grid.shape[0], params.d + 1), dtype=np.int64)
    state = derive_stream(cfg.seed, rep_index)
    absorbed_at, events, cap_hit = _kernels.ctmc_grid(
        params.d,
        params.total_duplication_rate,
        params.mu,
        x0,
        cfg.unscaled_grid(params.n_servers),
        out,
        state,
        cfg.event_cap,
    )
    return Trajectory(
        grid=grid,
        states=out,
        absorbed_at=None if absorbed_at < 0 else absorbed_at,
        events=events,
        event_cap_hit=bool(cap_hit),
        rep_index=rep_index,
    )


def _run_reps(worker, replications: int, threads: int | None):
    """Run worker(rep) for every replication; rep 0 inline first to warm the JIT."""
    worker(0)
    nthreads = resolve_threads(threads)
    if replications > 1:
        if nthreads > 1:
            with ThreadPoolExecutor(max_workers=nthreads) as pool:
                list(pool.map(worker, range(1, replications)))
        else:
            for rep in range(1, replications):
                worker(rep)


def run_ensemble(
    params: ModelParams,
    cfg: SimConfig,
    initial: NetworkState | None = None,
    keep_paths: bool = False,
    threads: int | None = None,
) -> EnsembleStats:
    """Aggregate cfg.replications independent paths, merged in replication order."""
    _require_not_rejected(params)
    x0 = _initial_array(params, initial)
    grid = cfg.grid
    ugrid = cfg.unscaled_grid(params.n_servers)
    n, k = grid.shape[0], params.d + 1
    reps = cfg.replications
    states = np.empty((reps, n, k), dtype=np.int64)
    cap_flags = np.zeros(reps, dtype=bool)
    lam_n = params.total_duplication_rate

    def worker(rep: int) -> None:
        stream = derive_stream(cfg.seed, rep)
        _, _, cap = _kernels.ctmc_grid(
            params.d, lam_n, params.mu, x0, ugrid, states[rep], stream, cfg.event_cap
        )
        cap_flags[rep] = cap

    _run_reps(worker, reps, threads)

    scaled = states / float(params.n_servers)
    mean = scaled.mean(axis=0)
    var = scaled.var(axis=0, ddof=1) if reps > 1 else np.zeros((n, k))
    return EnsembleStats(
        grid=grid,
        mean=mean,
        var=var,
        replications=reps,
        n_servers=params.n_servers,
        f_n=params.f_n,
        n_cap_hits=int(cap_flags.sum()),
        paths=states if keep_paths else None,
    )


def first_passage_fraction(
    params: ModelParams,
    delta: float,
    cfg: SimConfig,
    threads: int | None = None,
) -> np.ndarray:
    """Per-replication samples of T_N(delta), the first unscaled time with
    x_0 >= delta*beta*N. Event-exact, never grid-quantized."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    _require_not_rejected(params)
    x0 = _initial_array(params, None)
    threshold = delta * params.beta * params.n_servers
    t_max = cfg.unscaled_horizon(params.n_servers)
    times = np.empty(cfg.replications, dtype=np.float64)
    caps = np.zeros(cfg.replications, dtype=bool)

    def worker(rep: int) -> None:
        stream = derive_stream(cfg.seed, rep)
        t, _, cap = _kernels.ctmc_first_passage(
            params.d,
            params.total_duplication_rate,
            params.mu,
            x0,
            threshold,
            t_max,
            stream,
            cfg.event_cap,
        )
        times[rep] = t
        caps[rep] = cap

    _run_reps(worker, cfg.replications, threads)

    if caps.any():
        raise EventCapExceeded(
            f"{int(caps.sum())} of {cfg.replications} replications hit the event cap "
            f"({cfg.event_cap}) before reaching x_0 >= {threshold:g}"
        )
    if (times < 0).any():
        raise ReplicaDecayError(
            f"{int((times < 0).sum())} of {cfg.replications} replications did not reach "
            f"x_0 >= {threshold:g} before the horizon; increase cfg.horizon"
        )
    return times


@dataclass(frozen=True)
class OccupancyHistogram:
    """Pooled time-weighted distribution of one coordinate over a window."""

    coordinate: int
    window: tuple[float, float]
    weights: np.ndarray  # normalized, weights[v] = fraction of window time at value v
    total_time: float
    replications: int

    def tv_distance(self, pmf: np.ndarray) -> float:
        """Total-variation distance to a reference pmf over the naturals."""
        m = max(self.weights.shape[0], pmf.shape[0])
        a = np.zeros(m)
        b = np.zeros(m)
        a[: self.weights.shape[0]] = self.weights
        b[: pmf.shape[0]] = pmf
        # mass of the reference beyond the histogram support counts fully
        return 0.5 * (np.abs(a - b).sum() + abs(1.0 - pmf.sum()))


def empirical_occupancy(
    params: ModelParams,
    cfg: SimConfig,
    coordinate: int,
    window: tuple[float, float],
    initial: NetworkState | None = None,
    bins: int = 4096,
    threads: int | None = None,
) -> OccupancyHistogram:
    """Time-weighted occupancy of x_coordinate over a scaled-time window,
    pooled across replications; weights sum to 1."""
    t1, t2 = window
    if not (0.0 <= t1 < t2 <= cfg.horizon + 1e-12):
        raise EmptyWindow(f"window {window} empty or outside [0, horizon={cfg.horizon}]")
    if not 0 <= coordinate <= params.d:
        raise ValueError(f"coordinate must be in 0..{params.d}, got {coordinate}")
    _require_not_rejected(params)
    x0 = _initial_array(params, initial)
    scale = float(params.n_servers) ** cfg.time_scale_exponent
    hists = np.zeros((cfg.replications, bins), dtype=np.float64)
    covered = np.zeros(cfg.replications)

    def worker(rep: int) -> None:
        stream = derive_stream(cfg.seed, rep)
        c, _, cap = _kernels.ctmc_occupancy(
            params.d,
            params.total_duplication_rate,
            params.mu,
            x0,
            coordinate,
            t1 * scale,
            t2 * scale,
            hists[rep],
            stream,
            cfg.event_cap,
        )
        covered[rep] = -1.0 if cap else c

    _run_reps(worker, cfg.replications, threads)

    if (covered < 0).any():
        raise EventCapExceeded("event cap hit inside the occupancy window")
    pooled = hists.sum(axis=0)
    total = pooled.sum()
    if total <= 0:
        raise EmptyWindow("no time accumulated in the occupancy window")
    top = int(np.nonzero(pooled)[0].max()) + 1
    return OccupancyHistogram(
        coordinate=coordinate,
        window=(t1, t2),
        weights=pooled[:top] / total,
        total_time=total,
        replications=cfg.replications,
    )


@dataclass(frozen=True)
class MM1Path:
    """Birth-death occupancy on a grid with its exact running time-integral."""

    grid: np.ndarray
    level: np.ndarray  # int64 occupancy, cadlag at grid times
    integral: np.ndarray  # int_0^t L(u) du at grid times

    def time_average(self) -> float:
        return self.integral[-1] / self.grid[-1]


def mm1_path(
    arrival: float,
    service: float,
    horizon: float,
    seed: int,
    grid_step: float = 1.0,
    l0: int = 0,
    stream_id: int = 0,
    event_cap: int = DEFAULT_EVENT_CAP,
) -> MM1Path:
    """Exact M/M/1 simulation; the time-average contract needs service > arrival."""
    if arrival < 0 or service <= 0:
        raise ValueError("need arrival >= 0 and service > 0")
    n = int(math.floor(horizon / grid_step + 1e-9)) + 1
    grid = np.arange(n, dtype=np.float64) * grid_step
    out_l = np.empty(n, dtype=np.int64)
    out_i = np.empty(n, dtype=np.float64)
    state = derive_stream(seed, _AUX_STREAM_OFFSET + stream_id)
    _, cap = _kernels.mm1_grid(arrival, service, l0, grid, out_l, out_i, state, event_cap)
    if cap:
        raise EventCapExceeded("M/M/1 event cap hit")
    return MM1Path(grid=grid, level=out_l, integral=out_i)


@dataclass(frozen=True)
class CouplingDiagnostic:
    """Weighted middle mass Z(t) = sum_k (d-k) x_k next to its M/M/1 dominator.

    The joint coupling of the dominance proof is not constructed; the two
    marginals are simulated independently for an empirical CDF comparison.
    z and mm1 have shape (replications, len(grid)).
    """

    grid: np.ndarray
    z: np.ndarray
    mm1: np.ndarray
    beta0: float


def coupling_diagnostic(
    params: ModelParams,
    cfg: SimConfig,
    threads: int | None = None,
) -> CouplingDiagnostic:
    """Stable regime only; beta0 = F_N/N is recorded and must satisfy
    lam > d*mu*beta0 for the dominating queue to be stable."""
    regime = classify_regime(params)
    if not regime.is_stable:
        raise RegimeRejected("coupling diagnostic requires the stable regime")
    beta0 = params.f_n / params.n_servers
    if params.lam <= params.d * params.mu * beta0:
        raise RegimeRejected(
            f"need lam > d*mu*beta0 = {params.d * params.mu * beta0:g} for the M/M/1 bound"
        )
    stats = run_ensemble(params, cfg, keep_paths=True, threads=threads)
    # Z = sum_{k=1}^{d-1} (d-k) x_k
    weights = np.arange(params.d - 1, 0, -1, dtype=np.int64)
    z = np.einsum("rnk,k->rn", stats.paths[:, :, 1 : params.d], weights)

    n = cfg.grid.shape[0]
    ugrid = cfg.unscaled_grid(params.n_servers)
    mm1 = np.empty((cfg.replications, n), dtype=np.int64)
    arrival = params.d * params.mu * beta0 * params.n_servers
    service = params.total_duplication_rate

    def worker(rep: int) -> None:
        stream = derive_stream(cfg.seed, _AUX_STREAM_OFFSET + rep)
        scratch = np.empty(n, dtype=np.float64)
        _kernels.mm1_grid(
            arrival, service, 0, ugrid, mm1[rep], scratch, stream, cfg.event_cap
        )

    _run_reps(worker, cfg.replications, threads)
    return CouplingDiagnostic(grid=cfg.grid, z=z, mm1=mm1, beta0=beta0)


# -- slow reference (event-by-event through the model API, same RNG draws) --


def reference_trajectory(
    params: ModelParams,
    cfg: SimConfig,
    rep_index: int = 0,
    initial: NetworkState | None = None,
) -> Trajectory:
    """Pure-Python stepper over model.enumerate_transitions, consuming the same
    stream as the kernel; a dual route for small cross-validation cases."""
    from . import _rng
    from .model import apply_event, enumerate_transitions

    _require_not_rejected(params)
    state = initial_state(params) if initial is None else initial
    grid = cfg.grid
    ugrid = cfg.unscaled_grid(params.n_servers)
    n = grid.shape[0]
    out = np.empty((n, params.d + 1), dtype=np.int64)
    stream = derive_stream(cfg.seed, rep_index)
    t = 0.0
    gi = 0
    events = 0
    absorbed_at = None
    cap_hit = False
    with np.errstate(over="ignore"):
        while gi < n:
            enabled = enumerate_transitions(params, state)
            total = 0.0
            for ev in enabled:
                total += ev.rate
            if total == 0.0:
                absorbed_at = t
                break
            if events >= cfg.event_cap:
                cap_hit = True
                break
            t_next = t + _rng.exp_unit(stream) / total
            while gi < n and ugrid[gi] < t_next:
                out[gi] = state.counts
                gi += 1
            if gi >= n:
                break
            v = _rng.uniform01(stream) * total
            acc = 0.0
            chosen = enabled[-1]
            for ev in enabled:
                acc += ev.rate
                if v < acc:
                    chosen = ev
                    break
            state = apply_event(state, chosen)
            events += 1
            t = t_next
    while gi < n:
        out[gi] = state.counts
        gi += 1
    return Trajectory(
        grid=grid,
        states=out,
        absorbed_at=absorbed_at,
        events=events,
        event_cap_hit=cap_hit,
        rep_index=rep_index,
    )
