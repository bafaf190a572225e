"""Model parameters, state space and transition structure of the copy network.

The network holds f_n files on n_servers unreliable servers. A file has between
0 and d copies; each copy is lost independently at rate mu, and the pooled
duplication bandwidth lam*N is always spent on the files with the fewest
copies (below d). The occupancy vector (x_0, ..., x_d) counts files per copy
level and is a continuous-time Markov chain with the transition rates exposed
by :func:`enumerate_transitions`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidEvent, InvalidState

#: relative half-width of the rejected band around the boundaries rho = k*beta
EPS_REGIME = 1e-9

LOSS = "loss"
DUPLICATION = "duplication"


@dataclass(frozen=True)
class ModelParams:
    """Immutable model parameters.

    d          maximum number of copies per file (>= 2)
    lam        duplication rate per server (total bandwidth is lam * n_servers)
    mu         loss rate per copy
    beta       files per server (f_n ~ beta*N + gamma*sqrt(N))
    gamma      second-order file-count offset (>= 0)
    n_servers  scaling parameter N
    """

    d: int
    lam: float
    mu: float
    beta: float
    gamma: float = 0.0
    n_servers: int = 1

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if self.lam <= 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if self.mu <= 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.n_servers < 1:
            raise ValueError(f"n_servers must be >= 1, got {self.n_servers}")

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    @property
    def f_n(self) -> int:
        """File count: beta*N + gamma*sqrt(N), rounded half away from zero, >= 1."""
        raw = self.beta * self.n_servers + self.gamma * math.sqrt(self.n_servers)
        return max(1, int(math.floor(raw + 0.5)))

    @property
    def total_duplication_rate(self) -> float:
        return self.lam * self.n_servers


STABLE = "stable"
OVERLOADED = "overloaded"
REJECTED = "rejected"


@dataclass(frozen=True)
class Regime:
    """Classification of parameters: stable, overloaded(p) or rejected."""

    kind: str
    p: int | None = None
    reason: str | None = None

    @property
    def is_stable(self) -> bool:
        return self.kind == STABLE

    @property
    def is_overloaded(self) -> bool:
        return self.kind == OVERLOADED

    @property
    def is_rejected(self) -> bool:
        return self.kind == REJECTED


def classify_regime(params: ModelParams) -> Regime:
    """Classify parameters; deterministic, Rejected is a value not an error.

    Boundaries rho = k*beta (1 <= k <= d) are rejected within a relative band
    EPS_REGIME because the averaging theory degenerates to null recurrence
    there; rho < 2*beta is rejected because the fluid characterization needs
    p = floor(rho/beta) >= 2.
    """
    rho, beta, d = params.rho, params.beta, params.d
    for k in range(1, d + 1):
        if abs(rho - k * beta) <= EPS_REGIME * max(rho, k * beta, 1.0):
            return Regime(
                REJECTED,
                reason=f"rho = {k}*beta boundary case (within eps_regime={EPS_REGIME:g})",
            )
    if rho > d * beta:
        return Regime(STABLE)
    if rho < 2 * beta:
        return Regime(
            REJECTED,
            reason=f"rho/beta = {rho / beta:.6g} < 2: p = floor(rho/beta) below 2 is not covered",
        )
    p = int(math.floor(rho / beta))
    return Regime(OVERLOADED, p=p)


@dataclass(frozen=True)
class NetworkState:
    """Occupancy vector (x_0, ..., x_d); x_k files have exactly k copies."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) < 3:
            raise InvalidState(f"need d+1 >= 3 entries, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise InvalidState(f"negative occupancy in {self.counts}")

    @property
    def d(self) -> int:
        return len(self.counts) - 1

    @property
    def total(self) -> int:
        return sum(self.counts)

    def s(self, k: int) -> int:
        """Cumulative count S_k = x_1 + ... + x_k of files with <= k copies (k >= 1)."""
        return sum(self.counts[1 : k + 1])

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def is_absorbing(self) -> bool:
        return self.counts[0] == self.total


@dataclass(frozen=True)
class TransitionEvent:
    """A single enabled transition: a copy loss at some level, or a duplication."""

    kind: str
    level: int
    rate: float


def initial_state(params: ModelParams) -> NetworkState:
    """All f_n files start with the maximal number d of copies."""
    return NetworkState((0,) * params.d + (params.f_n,))


def _check_state(params: ModelParams, state: NetworkState) -> None:
    if state.d != params.d:
        raise InvalidState(f"state has d={state.d}, params have d={params.d}")
    if state.total != params.f_n:
        raise InvalidState(
            f"conservation violated: sum={state.total}, expected f_n={params.f_n}"
        )


def duplication_level(state: NetworkState) -> int:
    """Smallest level 1..d-1 with files present, or 0 if duplication is idle."""
    for k in range(1, state.d):
        if state.counts[k] > 0:
            return k
    return 0


def enumerate_transitions(params: ModelParams, state: NetworkState) -> list[TransitionEvent]:
    """Enabled transitions in fixed order: losses k=1..d, then the duplication.

    Loss at level k has rate mu*k*x_k (a file drops from k to k-1 copies; for
    k=d this refills level d-1). At most one duplication is enabled, at the
    smallest nonempty level below d, with the full bandwidth lam*N.
    """
    _check_state(params, state)
    events = []
    for k in range(1, params.d + 1):
        if state.counts[k] > 0:
            events.append(TransitionEvent(LOSS, k, params.mu * k * state.counts[k]))
    dup = duplication_level(state)
    if dup > 0:
        events.append(TransitionEvent(DUPLICATION, dup, params.total_duplication_rate))
    return events


def apply_event(state: NetworkState, event: TransitionEvent) -> NetworkState:
    """Apply one transition; conservation and non-negativity are preserved."""
    counts = list(state.counts)
    k = event.level
    if event.kind == LOSS:
        if not 1 <= k <= state.d or counts[k] <= 0:
            raise InvalidEvent(f"loss at level {k} not enabled in {state.counts}")
        counts[k] -= 1
        counts[k - 1] += 1
    elif event.kind == DUPLICATION:
        if k != duplication_level(state):
            raise InvalidEvent(f"duplication at level {k} not enabled in {state.counts}")
        counts[k] -= 1
        counts[k + 1] += 1
    else:
        raise InvalidEvent(f"unknown event kind {event.kind!r}")
    return NetworkState(tuple(counts))


def total_rate(params: ModelParams, state: NetworkState) -> float:
    """Total exit rate; zero exactly at the absorbing state (f_n, 0, ..., 0).

    Summed in the fixed enumeration order so inverse-CDF event selection sees
    exactly the same partial sums as the simulation kernels.
    """
    _check_state(params, state)
    total = 0.0
    for k in range(1, params.d + 1):
        total += params.mu * k * state.counts[k]
    if duplication_level(state) > 0:
        total += params.total_duplication_rate
    return total
