"""Exact CTMC simulation: kernel-vs-reference duality, invariants, diagnostics."""

import numpy as np
import pytest

from replica_decay import _kernels
from replica_decay._rng import derive_stream, exp_unit, uniform01
from replica_decay.errors import EmptyWindow, EventCapExceeded, RegimeRejected
from replica_decay.model import (
    ModelParams,
    NetworkState,
    apply_event,
    enumerate_transitions,
    initial_state,
)
from replica_decay.simulate import (
    SimConfig,
    coupling_diagnostic,
    empirical_occupancy,
    first_passage_fraction,
    mm1_path,
    reference_trajectory,
    run_ensemble,
    simulate_path,
)


@pytest.mark.parametrize(
    "d,lam,mu,beta,n,seed",
    [
        (2, 1.0, 0.1, 2.0, 15, 0),
        (3, 1.0, 0.1, 2.0, 12, 1),
        (4, 0.22, 0.1, 1.0, 25, 2),
        (5, 0.9, 0.3, 0.4, 8, 3),
    ],
)
def test_kernel_matches_reference_stepper(d, lam, mu, beta, n, seed):
    params = ModelParams(d=d, lam=lam, mu=mu, beta=beta, n_servers=n)
    cfg = SimConfig(horizon=8.0, grid_step=0.25, seed=seed, replications=1)
    fast = simulate_path(params, cfg, 0)
    slow = reference_trajectory(params, cfg, 0)
    assert np.array_equal(fast.states, slow.states)
    assert fast.events == slow.events
    assert fast.absorbed_at == slow.absorbed_at


def test_backend_and_python_kernel_agree():
    params = ModelParams(d=3, lam=1.0, mu=0.2, beta=1.5, n_servers=10)
    grid = np.arange(0.0, 10.0, 0.5)
    x0 = initial_state(params).as_array()
    out_a = np.empty((grid.shape[0], 4), dtype=np.int64)
    out_b = np.empty_like(out_a)
    res_a = _kernels.ctmc_grid(
        3, params.total_duplication_rate, 0.2, x0, grid, out_a, derive_stream(3, 0), 10**9
    )
    res_b = _kernels.ctmc_grid_py(
        3, params.total_duplication_rate, 0.2, x0, grid, out_b, derive_stream(3, 0), 10**9
    )
    assert np.array_equal(out_a, out_b)
    assert res_a == res_b


def test_trajectory_invariants():
    params = ModelParams(d=3, lam=0.8, mu=0.15, beta=1.2, n_servers=40)
    cfg = SimConfig(horizon=12.0, grid_step=0.1, seed=11, replications=1)
    traj = simulate_path(params, cfg, 0)
    totals = traj.states.sum(axis=1)
    assert (totals == params.f_n).all()
    assert (traj.states >= 0).all()
    assert (np.diff(traj.states[:, 0]) >= 0).all()  # x_0 non-decreasing
    assert (np.diff(traj.grid) > 0).all()


def test_single_file_reachable_set():
    params = ModelParams(d=2, lam=2.0, mu=1.0, beta=0.5, n_servers=2)
    assert params.f_n == 1
    cfg = SimConfig(horizon=200.0, grid_step=0.5, seed=3, replications=1)
    traj = simulate_path(params, cfg, 0)
    seen = {tuple(row) for row in traj.states}
    assert seen <= {(0, 0, 1), (0, 1, 0), (1, 0, 0)}


def test_absorption_flag_consistency():
    # tiny network with weak duplication absorbs quickly
    params = ModelParams(d=2, lam=0.5, mu=2.0, beta=1.0, n_servers=3)
    cfg = SimConfig(horizon=500.0, grid_step=10.0, seed=8, replications=1)
    traj = simulate_path(params, cfg, 0)
    assert traj.absorbed_at is not None
    assert tuple(traj.states[-1]) == (params.f_n, 0, 0)
    # a run stopped before absorption carries no absorbed_at
    cfg_short = SimConfig(horizon=0.01, grid_step=0.01, seed=8, replications=1)
    early = simulate_path(
        ModelParams(d=2, lam=1.0, mu=0.1, beta=2.0, n_servers=50), cfg_short, 0
    )
    assert early.absorbed_at is None


def test_simulate_rejects_rejected_regime():
    params = ModelParams(d=3, lam=0.6, mu=0.1, beta=2.0)  # rho = d*beta
    with pytest.raises(RegimeRejected):
        simulate_path(params, SimConfig(horizon=1.0, grid_step=0.5), 0)


def test_event_cap_reported_not_raised():
    params = ModelParams(d=2, lam=1.0, mu=0.1, beta=2.0, n_servers=50)
    cfg = SimConfig(horizon=50.0, grid_step=1.0, seed=1, replications=1, event_cap=100)
    traj = simulate_path(params, cfg, 0)
    assert traj.event_cap_hit
    assert traj.events == 100
    stats = run_ensemble(params, cfg)
    assert stats.n_cap_hits == 1


def test_ensemble_determinism_and_moments():
    params = ModelParams(d=3, lam=1.0, mu=0.1, beta=2.0, n_servers=30)
    cfg = SimConfig(horizon=5.0, grid_step=0.5, seed=21, replications=6)
    a = run_ensemble(params, cfg, keep_paths=True)
    b = run_ensemble(params, cfg, keep_paths=True)
    assert np.array_equal(a.paths, b.paths)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.var, b.var)
    # single replication: stats equal the trajectory, variance zero
    cfg1 = SimConfig(horizon=5.0, grid_step=0.5, seed=21, replications=1)
    single = run_ensemble(params, cfg1, keep_paths=True)
    traj = simulate_path(params, cfg1, 0)
    assert np.array_equal(single.paths[0], traj.states)
    assert (single.var == 0).all()
    # conservation of the ensemble mean, exact on integer sums
    sums = a.paths.sum(axis=2)
    assert (sums == params.f_n).all()
    assert np.allclose(a.mean.sum(axis=1), params.f_n / params.n_servers, rtol=0, atol=1e-12)


def test_ensemble_thread_count_invariance():
    params = ModelParams(d=2, lam=1.0, mu=0.1, beta=2.0, n_servers=40)
    cfg = SimConfig(horizon=20.0, grid_step=1.0, seed=33, replications=8)
    serial = run_ensemble(params, cfg, keep_paths=True, threads=1)
    threaded = run_ensemble(params, cfg, keep_paths=True, threads=4)
    assert np.array_equal(serial.paths, threaded.paths)


def _reference_first_passage(params, cfg, rep, threshold):
    """Brute-force oracle: step the model API on the same stream."""
    state = initial_state(params)
    stream = derive_stream(cfg.seed, rep)
    t = 0.0
    with np.errstate(over="ignore"):
        while True:
            events = enumerate_transitions(params, state)
            total = 0.0
            for ev in events:
                total += ev.rate
            if total == 0.0:
                return None
            t += exp_unit(stream) / total
            v = uniform01(stream) * total
            acc = 0.0
            chosen = events[-1]
            for ev in events:
                acc += ev.rate
                if v < acc:
                    chosen = ev
                    break
            state = apply_event(state, chosen)
            if state.counts[0] >= threshold:
                return t


def test_first_passage_event_exact_vs_oracle():
    params = ModelParams(d=2, lam=1.0, mu=0.2, beta=1.5, n_servers=20)
    cfg = SimConfig(horizon=5000.0, grid_step=10.0, seed=17, replications=3)
    delta = 0.4
    times = first_passage_fraction(params, delta, cfg)
    threshold = delta * params.beta * params.n_servers
    for rep in range(3):
        oracle = _reference_first_passage(params, cfg, rep, threshold)
        assert times[rep] == pytest.approx(oracle, rel=0, abs=0)


def test_first_passage_monotone_in_delta():
    params = ModelParams(d=2, lam=1.0, mu=0.2, beta=1.5, n_servers=20)
    cfg = SimConfig(horizon=5000.0, grid_step=10.0, seed=29, replications=5)
    t_small = first_passage_fraction(params, 0.2, cfg)
    t_large = first_passage_fraction(params, 0.7, cfg)
    # same seed => same underlying path up to the earlier passage
    assert (t_small <= t_large).all()


def test_first_passage_tiny_delta_is_first_loss():
    params = ModelParams(d=2, lam=1.0, mu=0.2, beta=1.5, n_servers=20)
    cfg = SimConfig(horizon=5000.0, grid_step=10.0, seed=55, replications=2)
    # threshold below one file: passage happens at the first loss event
    times = first_passage_fraction(params, 1e-6, cfg)
    assert (times > 0).all()
    oracle = _reference_first_passage(params, cfg, 0, 1e-6 * params.beta * params.n_servers)
    assert times[0] == oracle


def test_first_passage_event_cap_raises():
    params = ModelParams(d=2, lam=1.0, mu=0.1, beta=2.0, n_servers=100)
    cfg = SimConfig(horizon=1e5, grid_step=1.0, seed=2, replications=1, event_cap=50)
    with pytest.raises(EventCapExceeded):
        first_passage_fraction(params, 0.5, cfg)


def test_occupancy_window_validation_and_point_mass():
    params = ModelParams(d=2, lam=0.5, mu=2.0, beta=1.0, n_servers=3)
    cfg = SimConfig(horizon=4000.0, grid_step=100.0, seed=10, replications=2)
    with pytest.raises(EmptyWindow):
        empirical_occupancy(params, cfg, 1, (5.0, 5.0))
    with pytest.raises(EmptyWindow):
        empirical_occupancy(params, cfg, 1, (0.0, 5000.0))
    # late window: the chain is absorbed, x_1 sits at 0
    hist = empirical_occupancy(params, cfg, 1, (3000.0, 4000.0))
    assert hist.weights.shape[0] == 1
    assert hist.weights[0] == pytest.approx(1.0)


def test_occupancy_matches_reference_time_weights():
    params = ModelParams(d=3, lam=1.0, mu=0.3, beta=1.0, n_servers=10)
    cfg = SimConfig(horizon=40.0, grid_step=1.0, seed=14, replications=1)
    window = (5.0, 30.0)
    hist = empirical_occupancy(params, cfg, 2, window)
    assert hist.weights.sum() == pytest.approx(1.0)

    # oracle: accumulate holding times through the model API on the same stream
    state = initial_state(params)
    stream = derive_stream(cfg.seed, 0)
    t, acc = 0.0, {}
    with np.errstate(over="ignore"):
        while t < window[1]:
            events = enumerate_transitions(params, state)
            total = sum(e.rate for e in events)
            if total == 0.0:
                lo = max(t, window[0])
                acc[state.counts[2]] = acc.get(state.counts[2], 0.0) + (window[1] - lo)
                break
            t_next = t + exp_unit(stream) / total
            lo, hi = max(t, window[0]), min(t_next, window[1])
            if hi > lo:
                acc[state.counts[2]] = acc.get(state.counts[2], 0.0) + (hi - lo)
            if t_next >= window[1]:
                break
            v = uniform01(stream) * total
            cum = 0.0
            chosen = events[-1]
            for ev in events:
                cum += ev.rate
                if v < cum:
                    chosen = ev
                    break
            state = apply_event(state, chosen)
            t = t_next
    span = window[1] - window[0]
    for value, weight in acc.items():
        assert hist.weights[value] == pytest.approx(weight / span, rel=1e-12)


def test_mm1_zero_arrival_drains_and_stays():
    path = mm1_path(0.0, 1.0, horizon=200.0, seed=4, grid_step=1.0, l0=5)
    assert path.level[0] <= 5
    assert (np.diff(path.level) <= 0).all()
    assert path.level[-1] == 0
    again = mm1_path(0.0, 1.0, horizon=200.0, seed=4, grid_step=1.0, l0=5)
    assert np.array_equal(path.level, again.level)


def test_mm1_time_average_matches_queue_formula():
    # alpha/(gamma-alpha) = 1 for arrival 1, service 2
    path = mm1_path(1.0, 2.0, horizon=1e4, seed=12, grid_step=100.0)
    assert path.time_average() == pytest.approx(1.0, rel=0.05)


def test_coupling_diagnostic_dominance():
    params = ModelParams(d=3, lam=1.0, mu=0.1, beta=2.0, n_servers=100)
    cfg = SimConfig(horizon=20.0, grid_step=0.5, seed=6, replications=100)
    diag = coupling_diagnostic(params, cfg)
    assert diag.beta0 == pytest.approx(params.f_n / params.n_servers)
    assert diag.z[:, 0].max() == 0  # Z(0) = 0 <= L(0) = 0
    # marginal stochastic-dominance proxy over the pooled samples
    z_q95 = np.quantile(diag.z[:, 1:], 0.95)
    l_q99 = np.quantile(diag.mm1[:, 1:], 0.99)
    assert z_q95 <= l_q99
    with pytest.raises(RegimeRejected):
        coupling_diagnostic(
            ModelParams(d=4, lam=0.22, mu=0.1, beta=1.0, n_servers=50), cfg
        )


def test_middle_coordinates_shrink_with_n():
    # stable d=2 on the decay scale: max x_1/sqrt(N) decreases in N
    ratios = {}
    for n in (100, 200, 400):
        params = ModelParams(d=2, lam=1.0, mu=0.1, beta=2.0, n_servers=n)
        cfg = SimConfig(
            horizon=10.0, grid_step=0.05, seed=77, replications=3, time_scale_exponent=1
        )
        stats = run_ensemble(params, cfg, keep_paths=True)
        ratios[n] = stats.paths[:, :, 1].max() / np.sqrt(n)
    assert ratios[200] <= ratios[100] * 1.1
    assert ratios[400] <= ratios[200] * 1.1
    assert ratios[400] < ratios[100]
