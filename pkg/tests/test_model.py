"""Core model: parameters, regimes, states, transitions."""

import numpy as np
import pytest

from replica_decay.errors import InvalidEvent, InvalidState
from replica_decay.model import (
    DUPLICATION,
    LOSS,
    ModelParams,
    NetworkState,
    TransitionEvent,
    apply_event,
    classify_regime,
    duplication_level,
    enumerate_transitions,
    initial_state,
    total_rate,
)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(d=1, lam=1.0, mu=0.1, beta=1.0)
    with pytest.raises(ValueError):
        ModelParams(d=2, lam=0.0, mu=0.1, beta=1.0)
    with pytest.raises(ValueError):
        ModelParams(d=2, lam=1.0, mu=-0.1, beta=1.0)
    with pytest.raises(ValueError):
        ModelParams(d=2, lam=1.0, mu=0.1, beta=0.0)
    with pytest.raises(ValueError):
        ModelParams(d=2, lam=1.0, mu=0.1, beta=1.0, gamma=-1.0)
    with pytest.raises(ValueError):
        ModelParams(d=2, lam=1.0, mu=0.1, beta=1.0, n_servers=0)


def test_f_n_rounding_half_away_from_zero():
    # beta*N = 2.5 rounds away from zero to 3
    assert ModelParams(d=2, lam=1.0, mu=0.1, beta=0.25, n_servers=10).f_n == 3
    assert ModelParams(d=2, lam=1.0, mu=0.1, beta=0.24, n_servers=10).f_n == 2
    # floored at 1
    assert ModelParams(d=2, lam=1.0, mu=0.1, beta=0.01, n_servers=10).f_n == 1
    # gamma adds gamma*sqrt(N)
    p = ModelParams(d=2, lam=1.0, mu=0.1, beta=2.0, gamma=1.0, n_servers=100)
    assert p.f_n == 210
    assert ModelParams(d=2, lam=1.0, mu=0.1, beta=2.0, n_servers=100).rho == 10.0


def test_classify_regime_examples():
    # rho=10 > d*beta=6
    assert classify_regime(ModelParams(d=3, lam=1.0, mu=0.1, beta=2.0)).is_stable
    # 2 < rho=2.2 < 3 with d=4
    regime = classify_regime(ModelParams(d=4, lam=0.22, mu=0.1, beta=1.0))
    assert regime.is_overloaded and regime.p == 2
    # rho = 6 = d*beta boundary
    rejected = classify_regime(ModelParams(d=3, lam=0.6, mu=0.1, beta=2.0))
    assert rejected.is_rejected
    assert "eps_regime" in rejected.reason


def test_classify_regime_low_rho_rejected():
    # rho/beta in (1, 2): p = 1 not covered
    regime = classify_regime(ModelParams(d=4, lam=0.15, mu=0.1, beta=1.0))
    assert regime.is_rejected


def test_classify_regime_partition_sweep():
    rng = np.random.default_rng(1234)
    for _ in range(300):
        d = int(rng.integers(2, 7))
        lam = float(rng.uniform(0.05, 3.0))
        mu = float(rng.uniform(0.05, 1.0))
        beta = float(rng.uniform(0.2, 3.0))
        params = ModelParams(d=d, lam=lam, mu=mu, beta=beta)
        regime = classify_regime(params)
        ratio = params.rho / beta
        if regime.is_stable:
            assert ratio > d
        elif regime.is_overloaded:
            assert 2 <= regime.p <= d - 1
            assert regime.p < ratio < regime.p + 1
        else:
            near_boundary = any(
                abs(params.rho - k * beta) <= 1e-9 * max(params.rho, k * beta, 1.0)
                for k in range(1, d + 1)
            )
            assert near_boundary or ratio < 2


def test_initial_state():
    p = ModelParams(d=3, lam=1.0, mu=0.1, beta=0.5, n_servers=10)
    assert p.f_n == 5
    assert initial_state(p).counts == (0, 0, 0, 5)
    p2 = ModelParams(d=2, lam=1.0, mu=0.1, beta=0.05, n_servers=10)
    assert initial_state(p2).counts == (0, 0, 1)
    for n in (1, 7, 100):
        pn = ModelParams(d=4, lam=1.0, mu=0.1, beta=1.7, n_servers=n)
        assert initial_state(pn).total == pn.f_n


def test_enumerate_transitions_hand_example():
    p = ModelParams(d=3, lam=1.0, mu=0.5, beta=0.8, n_servers=10)
    assert p.f_n == 8
    events = enumerate_transitions(p, NetworkState((2, 1, 0, 5)))
    assert [(e.kind, e.level, e.rate) for e in events] == [
        (LOSS, 1, 0.5),
        (LOSS, 3, 7.5),
        (DUPLICATION, 1, 10.0),
    ]
    assert total_rate(p, NetworkState((2, 1, 0, 5))) == pytest.approx(18.0, abs=0)


def test_enumerate_transitions_edge_states():
    p = ModelParams(d=3, lam=1.0, mu=0.5, beta=0.8, n_servers=10)
    full = NetworkState((0, 0, 0, 8))
    events = enumerate_transitions(p, full)
    assert [(e.kind, e.level) for e in events] == [(LOSS, 3)]
    assert events[0].rate == pytest.approx(0.5 * 3 * 8)
    assert total_rate(p, full) == pytest.approx(0.5 * 3 * 8)

    absorbing = NetworkState((8, 0, 0, 0))
    assert enumerate_transitions(p, absorbing) == []
    assert total_rate(p, absorbing) == 0.0


def test_enumerate_rejects_conservation_violation():
    p = ModelParams(d=3, lam=1.0, mu=0.5, beta=0.8, n_servers=10)
    with pytest.raises(InvalidState):
        enumerate_transitions(p, NetworkState((0, 0, 0, 7)))
    with pytest.raises(InvalidState):
        total_rate(p, NetworkState((1, 1, 1, 17)))


def test_apply_event_examples():
    s = NetworkState((2, 1, 0, 5))
    assert apply_event(s, TransitionEvent(LOSS, 3, 7.5)).counts == (2, 1, 1, 4)
    assert apply_event(s, TransitionEvent(DUPLICATION, 1, 10.0)).counts == (2, 0, 1, 5)
    assert apply_event(NetworkState((0, 0, 0, 5)), TransitionEvent(LOSS, 3, 1.0)).counts == (
        0,
        0,
        1,
        4,
    )


def test_apply_event_invalid():
    s = NetworkState((2, 1, 0, 5))
    with pytest.raises(InvalidEvent):
        apply_event(s, TransitionEvent(LOSS, 2, 1.0))  # x_2 == 0
    with pytest.raises(InvalidEvent):
        apply_event(s, TransitionEvent(DUPLICATION, 2, 1.0))  # not the minimal level
    with pytest.raises(InvalidEvent):
        apply_event(NetworkState((5, 0, 0, 0)), TransitionEvent(LOSS, 1, 1.0))


def test_negative_counts_rejected():
    with pytest.raises(InvalidState):
        NetworkState((1, -1, 0, 2))


def _random_state(rng, d, f_n):
    cuts = np.sort(rng.integers(0, f_n + 1, size=d))
    counts = np.diff(np.concatenate([[0], cuts, [f_n]]))
    return NetworkState(tuple(int(c) for c in counts))


def test_transition_invariants_sweep():
    rng = np.random.default_rng(99)
    for _ in range(200):
        d = int(rng.integers(2, 6))
        n = int(rng.integers(1, 30))
        params = ModelParams(
            d=d,
            lam=float(rng.uniform(0.1, 2.0)),
            mu=float(rng.uniform(0.05, 1.0)),
            beta=float(rng.uniform(0.3, 3.0)),
            n_servers=n,
        )
        state = _random_state(rng, d, params.f_n)
        events = enumerate_transitions(params, state)
        dups = [e for e in events if e.kind == DUPLICATION]
        assert len(dups) <= 1
        if dups:
            assert dups[0].level == duplication_level(state)
            assert all(state.counts[j] == 0 for j in range(1, dups[0].level))
        bound = params.total_duplication_rate + params.mu * params.d * params.f_n
        assert total_rate(params, state) <= bound + 1e-12
        assert total_rate(params, state) == pytest.approx(sum(e.rate for e in events))
        for event in events:
            after = apply_event(state, event)
            assert after.total == params.f_n
            assert min(after.counts) >= 0
            assert after.counts[0] >= state.counts[0]  # x_0 never decreases
