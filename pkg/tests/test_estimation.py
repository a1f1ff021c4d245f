import numpy as np
import pytest
from hypothesis import given, strategies as st

from gossip_blocks.dynamics import simulate, uniform_initial_states
from gossip_blocks.estimation import (
    EstimatorState,
    JointEstimator,
    RunningAverage,
    accuracy,
    estimate_W_from_activations,
    exact_recovery,
    geometric_grid,
    kmeans_1d,
    recover_labels,
    recovery_frequency,
    run_algorithm1,
    run_trajectory,
    sa_step,
    spectral_cluster,
    wd_from_ws,
)
from gossip_blocks.graph_model import BlockGossipModel, GossipNetwork


# -- labels ------------------------------------------------------------------------

def test_threshold_labels():
    lab = recover_labels(np.array([0.4, 0.35, -0.2]), np.zeros(3, bool), np.zeros(0, int))
    assert lab.tolist() == [1, 1, 2]


def test_ties_go_to_community_two():
    lab = recover_labels(np.array([0.5, 0.5, 0.5]), np.zeros(3, bool), np.zeros(0, int))
    assert lab.tolist() == [2, 2, 2]


def test_stubborn_agents_copy_their_witness():
    stubborn = np.array([False, True, False, True])
    lab = recover_labels(np.array([0.9, -0.9]), stubborn, np.array([1, 0]))
    assert lab.tolist() == [1, 2, 2, 1]


# -- interaction step ----------------------------------------------------------------

def _hand_state(hand_model, ws):
    labels = hand_model.assignment.labels.copy()
    return EstimatorState(labels, ws, wd_from_ws(ws, 2, 2))


def test_step_fixed_point(hand_model):
    est = _hand_state(hand_model, 0.3)
    S = np.array([1 / 3, -1 / 3])
    out = sa_step(est, S, 10, hand_model.assignment.stubborn, hand_model.stubborn_states)
    assert out.h1 == pytest.approx(-2 / 3, abs=1e-14)
    assert out.h2 == pytest.approx(2.0, abs=1e-14)
    assert out.g == pytest.approx(-5 / 3, abs=1e-14)
    assert out.w_s_hat == pytest.approx(0.3, abs=1e-12)
    assert out.w_d_hat == pytest.approx(0.1, abs=1e-12)
    assert out.skipped == 0


def test_step_moves_toward_truth(hand_model):
    S = np.array([1 / 3, -1 / 3])
    for start in (0.2, 0.4):
        out = sa_step(_hand_state(hand_model, start), S, 1, hand_model.assignment.stubborn,
                      hand_model.stubborn_states)
        assert abs(out.w_s_hat - 0.3) < abs(start - 0.3)


def test_wd_from_ws_example():
    assert wd_from_ws(0.3, 2, 2) == pytest.approx(0.1, abs=1e-15)


@given(st.floats(0.0, 0.2), st.integers(1, 40), st.integers(1, 40))
def test_wd_inversion_keeps_unit_pair_mass(ws, n1, n2):
    wd = wd_from_ws(ws, n1, n2)
    mass = (n1 * (n1 - 1) + n2 * (n2 - 1)) * ws + 2 * n1 * n2 * wd
    assert mass == pytest.approx(2.0, abs=1e-12)


def test_zero_gradient_is_a_no_op(hand_model):
    # all averages and stubborn states at 0 give h1 = h2 = 0
    stubborn = hand_model.assignment.stubborn
    est = _hand_state(hand_model, 0.25)
    S = np.array([0.0, 0.0])
    states = np.array([0.0, 0.0])
    labels = np.array([1, 1, 2, 2])
    out = sa_step(EstimatorState(labels, 0.25, est.w_d_hat), S, 3, stubborn, states)
    assert out.g == 0.0
    assert out.w_s_hat == 0.25


def test_step_is_skipped_without_community_one(hand_model):
    stubborn = hand_model.assignment.stubborn
    est = EstimatorState(np.array([2, 2, 2, 2]), 0.2, 0.15, skipped=4)
    out = sa_step(est, np.array([0.1, 0.2]), 5, stubborn, hand_model.stubborn_states)
    assert out.skipped == 5 and out.w_s_hat == 0.2 and out.w_d_hat == 0.15


def test_step_rejects_tick_zero(hand_model):
    with pytest.raises(ValueError):
        sa_step(_hand_state(hand_model, 0.3), np.zeros(2), 0,
                hand_model.assignment.stubborn, hand_model.stubborn_states)


# -- online estimator ----------------------------------------------------------------

@given(st.lists(st.lists(st.floats(-1, 1), min_size=3, max_size=3), min_size=1, max_size=200))
def test_running_average_matches_batch_mean(rows):
    xs = np.array(rows)
    avg = RunningAverage(xs[0])
    for r in xs[1:]:
        avg.update(r)
    np.testing.assert_allclose(avg.mean, xs.mean(axis=0), atol=1e-10)
    assert avg.count == len(rows)


def test_empty_stream_gives_no_snapshots(hand_model):
    a = hand_model.assignment
    assert run_algorithm1([], a.stubborn, a.witness_positions(), hand_model.stubborn_states) == []


def test_offline_stream_matches_observer(small_model):
    net = GossipNetwork.from_model(small_model)
    a = net.assignment
    x0 = uniform_initial_states(a.n_r, -1, 1, 1)
    frames = [x0.copy()]
    obs = JointEstimator(x0, a.stubborn, a.witness_positions(), net.stubborn_states,
                         seed=3, snapshot_times=[500])
    simulate(net.W, a.stubborn, net.q, net.stubborn_states, x0, 500, 2,
             observers=[obs, lambda t, xr: frames.append(xr.copy())])
    off = run_algorithm1(frames, a.stubborn, a.witness_positions(), net.stubborn_states,
                         seed=3, snapshot_times=[500])
    assert np.array_equal(off[0].labels, obs.snapshots[0].labels)
    assert off[0].w_s_hat == obs.snapshots[0].w_s_hat


def test_compiled_loop_matches_reference(small_model):
    net = GossipNetwork.from_model(small_model)
    a = net.assignment
    x0 = uniform_initial_states(a.n_r, -1, 1, 4)
    times = [0, 1, 7, 100, 1000, 5000]
    ref = JointEstimator(x0, a.stubborn, a.witness_positions(), net.stubborn_states,
                         a=1.0, seed=11, snapshot_times=times)
    simulate(net.W, a.stubborn, net.q, net.stubborn_states, x0, 5000, 21, observers=[ref])
    fast = run_trajectory(net, x0, 5000, 21, est_seed=11, snapshot_times=times, keep_S=True)
    assert [s.t for s in fast] == times
    for r, f in zip(ref.snapshots, fast):
        assert np.array_equal(r.labels, f.labels)
        assert r.w_s_hat == pytest.approx(f.w_s_hat, rel=1e-12, abs=1e-15)
        assert r.skipped == f.skipped
        np.testing.assert_allclose(r.S, f.S, atol=1e-12)


def test_consensus_model_runs():
    m = BlockGossipModel.from_ratio([(5, 1), (5, 1)], 5.0, 0.5, [0.2, 0.2])
    net = GossipNetwork.from_model(m)
    snaps = run_trajectory(net, np.zeros(10), 20_000, 1, est_seed=2, snapshot_times=[20_000])
    assert len(snaps) == 1 and np.isfinite(snaps[0].w_s_hat)


def test_recovery_tracking_on_small_model(small_model):
    net = GossipNetwork.from_model(small_model)
    x0 = uniform_initial_states(net.assignment.n_r, -1, 1, 0)
    snaps = run_trajectory(net, x0, 50_000, 3, est_seed=1, snapshot_times=[50_000],
                           track_recovery=True)
    s = snaps[-1]
    assert exact_recovery(s.labels, small_model.assignment.labels) == 1
    assert 0 < s.last_miss < 50_000


def test_geometric_grid():
    g = geometric_grid(100, 1.5)
    assert g[0] == 1 and g[-1] == 100
    assert (np.diff(g) > 0).all()
    assert geometric_grid(0).size == 0


# -- baselines ------------------------------------------------------------------------

def test_kmeans_two_clusters():
    v = np.array([0.9, 1.0, 1.1, -1.0, -0.9])
    for init in ("forgy", "plusplus"):
        lab, centers, degen = kmeans_1d(v, 2, init, seed=0)
        assert lab.tolist() == [1, 1, 1, 2, 2]
        np.testing.assert_allclose(centers, [1.0, -0.95])
        assert not degen


def test_kmeans_identical_values_flagged():
    _, _, degen = kmeans_1d(np.full(5, 0.3), 2, "plusplus", seed=1)
    assert degen
    _, _, degen = kmeans_1d(np.full(5, 0.3), 2, "forgy", seed=1)
    assert degen


def test_kmeans_rejects_bad_input():
    with pytest.raises(ValueError):
        kmeans_1d([1.0], 2)
    with pytest.raises(ValueError):
        kmeans_1d([1.0, 2.0], 2, init="random")


def test_spectral_on_exact_block_matrix(small_model):
    W = small_model.interaction_matrix()
    labels, degen = spectral_cluster(W)
    assert accuracy(labels, small_model.assignment.labels) == 1.0
    assert not degen


def test_spectral_flags_uniform_matrix():
    n = 6
    W = (np.ones((n, n)) - np.eye(n)) * 2 / (n * (n - 1))
    _, degen = spectral_cluster(W)
    assert degen


def test_activation_estimate():
    c = np.zeros((3, 3), dtype=int)
    c[0, 1] = 6
    c[2, 1] = 2
    W = estimate_W_from_activations(c, 8)
    assert W[0, 1] == W[1, 0] == 0.75 and W[1, 2] == 0.25 and W[0, 0] == 0
    with pytest.raises(ValueError):
        estimate_W_from_activations(c, 0)


def test_spectral_baseline_recovers_with_counts(small_model):
    net = GossipNetwork.from_model(small_model)
    snaps = run_trajectory(net, np.zeros(10), 200_000, 5, est_seed=1,
                           snapshot_times=[200_000], baselines=("spectral", "kmeans", "kmeans++"),
                           kmeans_seed=2)
    truth = small_model.assignment.labels
    for name in ("spectral", "kmeans", "kmeans++"):
        assert accuracy(snaps[0].baselines[name], truth) == 1.0


# -- metrics --------------------------------------------------------------------------

def test_accuracy_is_permutation_invariant():
    assert accuracy([2, 2, 1, 1], [1, 1, 2, 2]) == 1.0
    assert accuracy([1, 1, 2, 2], [1, 2, 1, 2]) == 0.5
    with pytest.raises(ValueError):
        accuracy([1, 2], [1, 2, 1])


def test_recovery_frequency():
    truth = np.array([1, 1, 2])
    assert recovery_frequency([truth, 3 - truth, np.array([1, 2, 2])], truth) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        recovery_frequency([], truth)
