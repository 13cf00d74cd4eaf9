import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hrsync.analysis import (absorbing_entry_time, constants_from_measures,
                             energy_inequality_residual, fit_decay_rate, gronwall_envelope,
                             lyapunov_energy, sync_degree_estimate, sync_degree_from_distances,
                             sync_energy, sync_report, t0_bound, theorem_constants,
                             threshold_monitor)
from hrsync.discretization import (assemble_coupled_diffusion, build_mesh, default_partition,
                                   l2_norm)
from hrsync.integrator import StepConfig, Trajectory, integrate
from hrsync.model import NetworkState, NeuronField, Parameters, default_parameters
from ledger_reference import max_relative_gap, random_parameters, reference_ledger

TINY = Parameters(a=0.0, b=29.0, alpha=0.0, beta=5.0, q=0.0, r=1.0, c=0.0, J=0.0, d=0.1, p=10.0)


def test_hand_computable_case():
    mesh = build_mesh(1, 1.0, 11)
    for m in (0, 1, 3):
        c = theorem_constants(TINY, mesh, m)
        assert (c.C1, c.C2, c.rStar) == (1.0, 32.0, 0.5)
        assert c.M == 2 * (1 + m) * (32 + 1 / 32)


def test_small_r_gives_small_rstar(params):
    c = constants_from_measures(params, 2, 1.0, 9.87, 9.87)
    assert c.rStar == 0.003
    assert c.K == 200.0
    assert c.mu == 0.006


def test_classic_ledger_matches_reference(params):
    mesh = build_mesh(1, 1.0, 401)
    c = theorem_constants(params, mesh, 2)
    ref = reference_ledger(params, 2, mesh.measure, c.eta1, c.eta2)
    assert max_relative_gap(c, ref) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_ledger_two_paths_agree(seed):
    P, m, omega, e1, e2 = random_parameters(np.random.default_rng(seed))
    c = constants_from_measures(P, m, omega, e1, e2)
    assert max_relative_gap(c, reference_ledger(P, m, omega, e1, e2)) <= 1e-12


def test_t0_bound(params):
    c = constants_from_measures(params, 2, 1.0, 9.87, 9.87)
    assert t0_bound(0.01, c) == 0.0                 # log+ clamps
    assert t0_bound(1.0 / 29.0, c) == 0.0
    assert t0_bound(1.0, c) == pytest.approx(math.log(29.0) / 0.003)


def _state(rng, n, m):
    return NetworkState.from_stacked(*(rng.normal(size=(m + 1, n)) for _ in range(3)))


def test_lyapunov_energy(params, rng):
    mesh = build_mesh(1, 1.0, 21)
    c = theorem_constants(params, mesh, 0)
    zero = NetworkState(NeuronField.constant(21, 0, 0, 0))
    assert lyapunov_energy(zero, c, mesh) == 0.0
    one = NetworkState(NeuronField.constant(21, 1, 0, 0))
    assert lyapunov_energy(one, c, mesh) == pytest.approx(c.C1, rel=1e-14)
    s = _state(rng, 21, 2)
    hand = sum(c.C1 * l2_norm(g.u, mesh) ** 2 + l2_norm(g.v, mesh) ** 2 + l2_norm(g.w, mesh) ** 2
               for g in s.neurons)
    assert lyapunov_energy(s, c, mesh) == pytest.approx(hand, rel=1e-12)


def test_sync_energy(params, rng):
    mesh = build_mesh(1, 1.0, 21)
    c = theorem_constants(params, mesh, 1)
    f = NeuronField(rng.normal(size=21), rng.normal(size=21), rng.normal(size=21))
    assert sync_energy(NetworkState(f, (f,)), c, mesh) == [0.0]
    g = NeuronField(f.u - 1.0, f.v, f.w)
    assert sync_energy(NetworkState(f, (g,)), c, mesh)[0] == pytest.approx(c.K, rel=1e-12)
    s = _state(rng, 21, 3)
    hand = [c.K * l2_norm(s.central.u - nb.u, mesh) ** 2 + l2_norm(s.central.v - nb.v, mesh) ** 2
            + l2_norm(s.central.w - nb.w, mesh) ** 2 for nb in s.neighbors]
    assert np.allclose(sync_energy(s, c, mesh), hand, rtol=1e-12)
    with pytest.raises(ValueError):
        sync_energy(NetworkState(f), c, mesh)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_sync_energy_shift_invariance(seed):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(1, 1.0, 15)
    c = theorem_constants(default_parameters(), mesh, 2)
    s = _state(rng, 15, 2)
    U, V, W = s.stacked()
    shifted = NetworkState.from_stacked(U + rng.normal(size=15), V, W)
    assert np.allclose(sync_energy(s, c, mesh), sync_energy(shifted, c, mesh), rtol=1e-9, atol=1e-12)


def test_gronwall_envelope(params):
    c = constants_from_measures(params, 2, 1.0, 9.87, 9.87)
    limit = c.M * 1.0
    assert gronwall_envelope(5.0, 0.0, c) == 5.0
    assert gronwall_envelope(5.0, 1e7, c) == pytest.approx(limit, rel=1e-12)
    # the envelope solves E' = -r* E + B; compare with RK4 on that scalar ODE
    B = c.source
    E, h = 5.0, 0.5
    for _ in range(200):
        k1 = -c.rStar * E + B
        k2 = -c.rStar * (E + h / 2 * k1) + B
        k3 = -c.rStar * (E + h / 2 * k2) + B
        k4 = -c.rStar * (E + h * k3) + B
        E += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert gronwall_envelope(5.0, 100.0, c) == pytest.approx(E, rel=1e-10)
    with pytest.raises(ValueError):
        gronwall_envelope(1.0, -1.0, c)


@settings(max_examples=100, deadline=None)
@given(E0=st.floats(0, 1e18), seed=st.integers(0, 2 ** 32 - 1))
def test_envelope_monotone_toward_limit(E0, seed):
    P, m, omega, e1, e2 = random_parameters(np.random.default_rng(seed))
    c = constants_from_measures(P, m, omega, e1, e2)
    t = np.linspace(0, 50 / c.rStar, 200)
    env = gronwall_envelope(E0, t, c)
    limit = c.M * omega
    d = np.diff(env)
    if E0 > limit:
        assert np.all(d <= 1e-12 * E0)
    elif E0 < limit:
        assert np.all(d >= -1e-12 * limit)
    assert env[-1] == pytest.approx(limit, rel=1e-9, abs=1e-9 * E0)


def _traj(times, u2, m=0, diff=None, bdiff=None, params=None):
    params = params or default_parameters()
    n = len(times)
    u2 = np.asarray(u2, dtype=float).reshape(n, -1)
    k = u2.shape[1]
    z = np.zeros((n, k))
    zd = np.zeros((n, m)) if diff is None else np.asarray(diff, dtype=float).reshape(n, m)
    bd = np.zeros((n, m)) if bdiff is None else np.asarray(bdiff, dtype=float).reshape(n, m)
    return Trajectory(params, 1.0, m, np.asarray(times, dtype=float), u2, z.copy(), z.copy(),
                      z.copy(), zd, np.zeros((n, m)), np.zeros((n, m)), bd, np.zeros((n, k, k)))


def test_absorbing_entry(params):
    c = constants_from_measures(params, 0, 1.0, 9.87, 9.87)
    t = np.arange(5.0)
    inside = _traj(t, [1.0, 0.9, 0.8, 0.7, 0.6])
    assert absorbing_entry_time(inside, c).entry_time == 0.0
    out_in = _traj(t, [2 * c.Q, 0.5, 2 * c.Q, 0.5, 0.5])
    res = absorbing_entry_time(out_in, c)
    assert res.entry_time == 3.0
    never = _traj(t, [2 * c.Q] * 5)
    assert absorbing_entry_time(never, c).entry_time is None


def test_envelope_violation_measured(params):
    c = constants_from_measures(params, 0, 1.0, 9.87, 9.87)
    t = np.array([0.0, 1.0, 2.0])
    E0 = 1e20
    env = gronwall_envelope(E0, t, c)
    u2 = np.array([E0, 1.1 * env[1], env[2]]) / c.C1
    res = absorbing_entry_time(_traj(t, u2), c)
    assert res.max_envelope_violation == pytest.approx(0.1, rel=1e-9)


def test_threshold_monitor(params):
    c = constants_from_measures(params, 1, 1.0, 9.87, 9.87)
    t = np.arange(4.0)
    flat = _traj(t, np.zeros((4, 2)), m=1)
    res = threshold_monitor(flat, c)
    assert np.all(res.margins == -c.R) and res.crossing_times == [None]
    delta = 3.0
    tr = _traj(t, np.zeros((4, 2)), m=1, bdiff=[[0.0], [delta ** 2], [1e30], [0.0]])
    res = threshold_monitor(tr, c)
    assert res.margins[1, 0] == params.p * delta ** 2 - c.R * 1.0
    assert res.crossing_times == [2.0]
    assert np.array_equal(res.margins, params.p * tr.boundary_diff2 - c.R * tr.domain_measure)
    with pytest.raises(ValueError):
        threshold_monitor(tr, c, default_partition(build_mesh(1, 1.0, 5), 2))


def test_sync_degree_estimate():
    t = np.arange(10.0)
    w = np.ones(4) / 4
    x = np.random.default_rng(0).normal(size=(10, 12))
    assert sync_degree_estimate([t, t], [x, x], w) == 0.0
    delta = 0.7
    y = x.copy()
    y[:, 0] += delta * 2        # ||.|| = sqrt(w0) * 2 delta = delta
    assert sync_degree_estimate([t, t], [x, y], w) == pytest.approx(2 * delta, rel=1e-12)
    with pytest.raises(ValueError, match="mismatched"):
        sync_degree_estimate([t, t + 1], [x, y], w)
    with pytest.raises(ValueError):
        sync_degree_estimate([t], [x], w)
    with pytest.raises(ValueError):
        sync_degree_estimate([t, t], [x, y], w, tail_fraction=0.0)


def test_degree_from_recorded_distances_matches_snapshots(params, rng):
    mesh = build_mesh(1, 1.0, 21)
    op = assemble_coupled_diffusion(mesh, default_partition(mesh, 2), params.d, params.p)
    s = NetworkState.from_stacked(*(rng.normal(size=(3, 21)) for _ in range(3)))
    tr = integrate(s, op, params, StepConfig(dt=0.01, t_end=1.0, sample_every=10, snapshots=True))
    states = [np.array([np.concatenate([snap.neurons[j].u, snap.neurons[j].v, snap.neurons[j].w])
                        for snap in tr.snapshots]) for j in range(3)]
    direct = sync_degree_estimate([tr.times] * 3, states, mesh.weights, 0.3)
    recorded, sup = sync_degree_from_distances(tr.pair_dist, 0.3)
    assert recorded == pytest.approx(direct, rel=1e-9)
    assert np.allclose(sup, sup.T) and np.all(np.diag(sup) == 0)


def test_fit_decay_rate():
    t = np.linspace(0, 5, 51)
    fit = fit_decay_rate(t, np.exp(-3 * t))
    assert fit.rate == pytest.approx(3.0, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit_decay_rate(t, np.full(51, 2.0)).rate == 0.0
    clipped = fit_decay_rate(t, np.where(t > 4, 0.0, np.exp(-t)))
    assert clipped.n_clipped == 10
    with pytest.raises(ValueError):
        fit_decay_rate(t[:2], np.ones(2))
    with pytest.raises(ValueError):
        fit_decay_rate(t, np.ones(51), tail_window=0.03)   # 2 samples


@settings(max_examples=100, deadline=None)
@given(rate=st.floats(-5, 5), amp=st.floats(1e-10, 1e10), frac=st.floats(0.1, 1.0))
def test_fit_recovers_planted_rate(rate, amp, frac):
    t = np.linspace(0, 10, 200)
    fit = fit_decay_rate(t, amp * np.exp(-rate * t), frac)
    assert fit.rate == pytest.approx(rate, rel=1e-6, abs=1e-9)


def test_energy_inequality_residual(params):
    c = constants_from_measures(params, 0, 1.0, 9.87, 9.87)
    t = np.linspace(0, 1, 11)
    rest = _traj(t, np.full(11, 0.5))
    assert energy_inequality_residual(rest, c) == 0.0
    B = c.source
    slope = c.rStar * 0.0 + B * 1.25    # dE/dt + r* E exceeds B by 0.25 B (E near 0)
    E = slope * t
    tr = _traj(t, E / c.C1)
    expected = max((slope + c.rStar * E[k] - B) / B for k in range(1, 10))
    assert energy_inequality_residual(tr, c) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(ValueError):
        energy_inequality_residual(_traj(t[:2], [1.0, 1.0]), c)


def test_sync_report_fields(params, rng):
    mesh = build_mesh(1, 0.1, 21)
    op = assemble_coupled_diffusion(mesh, default_partition(mesh, 2), params.d, params.p)
    s = NetworkState.from_stacked(*(rng.normal(size=(3, 21)) for _ in range(3)))
    tr = integrate(s, op, params, StepConfig(dt=0.01, t_end=5.0, sample_every=10))
    c = theorem_constants(params, mesh, 2)
    rep = sync_report(tr, c, 0.2, 0.5)
    assert rep.deg_s_estimate >= 0
    assert all(np.isfinite(f.rate) for f in rep.decay_fits)
    assert rep.mu == c.mu
    d = rep.as_dict()
    assert set(d) >= {"deg_s_estimate", "decay_rate", "mu", "threshold_crossing_time"}
