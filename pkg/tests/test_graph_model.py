import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gossip_blocks.graph_model import (
    BlockGossipModel,
    CommunityAssignment,
    InteractionMatrix,
    ModelError,
    SbmParams,
    SimpleGraph,
    build_block_interaction_matrix,
    deviation_norm,
    expected_interaction,
    graph_to_interaction,
    load_model_config,
    model_to_config,
    normalization_residual,
    sample_sbm,
    solve_interaction_probs,
    weighted_to_interaction,
)

from conftest import two_community_models


# -- assignments ---------------------------------------------------------------

def test_from_counts_layout():
    a = CommunityAssignment.from_counts([(2, 1), (3, 2)])
    assert a.labels.tolist() == [1, 1, 1, 2, 2, 2, 2, 2]
    assert a.stubborn.tolist() == [False, False, True, False, False, False, True, True]
    assert (a.n, a.n_r, a.n_s) == (8, 5, 3)
    assert a.sizes().tolist() == [3, 5]
    assert a.regular_sizes().tolist() == [2, 3]
    assert a.stubborn_sizes().tolist() == [1, 2]


def test_default_witness_is_first_regular_of_same_community():
    a = CommunityAssignment.from_counts([(2, 1), (3, 2)])
    assert a.stubborn_witness == {2: 0, 6: 3, 7: 3}
    # positions within the regular vector: agent 0 -> 0, agent 3 -> 2
    assert a.witness_positions().tolist() == [0, 2, 2]


def test_witness_must_share_community():
    with pytest.raises(ModelError):
        CommunityAssignment(np.array([1, 1, 2, 2]), np.array([False, True, False, False]),
                            {1: 2})


def test_witness_must_be_regular():
    with pytest.raises(ModelError):
        CommunityAssignment(np.array([1, 1, 1, 2]), np.array([False, True, True, False]),
                            {1: 2, 2: 0})


def test_each_community_needs_a_regular_agent():
    with pytest.raises(ModelError):
        CommunityAssignment.from_counts([(0, 2), (3, 1)])


# -- interaction probabilities ---------------------------------------------------

@pytest.mark.parametrize(
    "n1, n2, ratio, expected",
    [
        (6, 6, 5, (Fraction(5, 186), Fraction(1, 186))),
        (150, 250, 5, (Fraction(5, 249000), Fraction(1, 249000))),
        (2, 2, 3, (Fraction(3, 10), Fraction(1, 10))),
    ],
)
def test_solve_interaction_probs_known_values(n1, n2, ratio, expected):
    ws, wd = solve_interaction_probs(n1, n2, ratio)
    assert ws == pytest.approx(float(expected[0]), rel=1e-14)
    assert wd == pytest.approx(float(expected[1]), rel=1e-14)
    res, scale = normalization_residual([n1, n2], ws, wd)
    assert abs(res) <= 1e-12 * scale


def test_solve_interaction_probs_rejects_ratio_one():
    with pytest.raises(ModelError):
        solve_interaction_probs(3, 3, 1.0)


def test_solve_interaction_probs_rejects_empty_community():
    with pytest.raises(ModelError):
        solve_interaction_probs(1, 0, 2.0)


def test_solve_interaction_probs_needs_a_within_pair():
    with pytest.raises(ModelError):
        solve_interaction_probs(1, 1, 2.0)


@given(st.integers(2, 40), st.integers(1, 40),
       st.one_of(st.floats(0.01, 0.99), st.floats(1.01, 100.0)))
def test_block_matrix_roundtrip(n1, n2, ratio):
    ws, wd = solve_interaction_probs(n1, n2, ratio)
    model = BlockGossipModel(CommunityAssignment.from_counts([(n1, 0), (n2, 0)]), ws, wd, 0.5, [])
    W = build_block_interaction_matrix(model)
    assert abs(W.pair_mass() - 1.0) <= 1e-12
    assert W.entries[0, 1] == ws
    assert W.entries[0, n1] == wd


def test_block_matrix_small_example():
    a = CommunityAssignment.from_counts([(2, 0), (1, 0)])
    W = build_block_interaction_matrix(BlockGossipModel(a, 0.8, 0.1, 0.5, []))
    expected = np.array([[0, 0.8, 0.1], [0.8, 0, 0.1], [0.1, 0.1, 0]])
    np.testing.assert_array_equal(W.entries, expected)
    assert W.pair_mass() == pytest.approx(1.0, abs=1e-15)


def test_block_matrix_hand_instance(hand_model):
    W = hand_model.interaction_matrix()
    expected = np.array([[0, .3, .1, .1], [.3, 0, .1, .1], [.1, .1, 0, .3], [.1, .1, .3, 0]])
    np.testing.assert_allclose(W.entries, expected, atol=0)
    assert W.pair_mass() == pytest.approx(1.0, abs=1e-12)


def test_model_rejects_equal_probabilities():
    a = CommunityAssignment.from_counts([(2, 0), (2, 0)])
    with pytest.raises(ModelError):
        BlockGossipModel(a, 1 / 6, 1 / 6, 0.5, [])


def test_model_rejects_bad_normalization_with_residual():
    a = CommunityAssignment.from_counts([(1, 1), (1, 1)])
    with pytest.raises(ModelError, match="residual"):
        BlockGossipModel(a, 0.3, 0.11, 0.5, [1, -1])


@given(two_community_models())
def test_every_valid_model_has_unit_pair_mass(model):
    assert abs(model.interaction_matrix().pair_mass() - 1.0) <= 1e-12


def test_interaction_matrix_validation():
    with pytest.raises(ModelError):
        InteractionMatrix(np.array([[0, 1.0], [0.5, 0]]))
    with pytest.raises(ModelError):
        InteractionMatrix(np.array([[0.5, 0.5], [0.5, 0.5]]))
    with pytest.raises(ModelError):
        InteractionMatrix(np.array([[0, 0.5], [0.5, 0]]))


# -- SBM -----------------------------------------------------------------------

def test_sbm_full_probability_gives_complete_graph():
    g = sample_sbm(SbmParams(7, 3 / 7, 1.0, 1.0), 0)
    assert g.n_edges == 21


def test_sbm_tiny_probability_gives_empty_graph():
    g = sample_sbm(SbmParams(10, 0.5, 1e-12, 1e-12), 3)
    assert g.n_edges == 0
    with pytest.raises(ModelError):
        graph_to_interaction(g)


def test_sbm_seed_determinism():
    p = SbmParams(60, 0.5, 0.3, 0.05)
    a, b = sample_sbm(p, 11), sample_sbm(p, 11)
    assert np.array_equal(a.edges, b.edges)
    assert not np.array_equal(a.edges, sample_sbm(p, 12).edges)


def test_sbm_edge_count_matches_expectation():
    n = 5000
    p = SbmParams(n, 0.4, 5 * math.log(n) / n, math.log(n) / n)
    g = sample_sbm(p, 2024)
    n1, n2 = p.n1, p.n2
    within = n1 * (n1 - 1) / 2 + n2 * (n2 - 1) / 2
    var = within * p.p_s * (1 - p.p_s) + n1 * n2 * p.p_d * (1 - p.p_d)
    assert abs(g.n_edges - p.expected_edges()) < 3 * math.sqrt(var)


def test_sbm_block_densities():
    p = SbmParams(100, 0.5, 0.3, 0.1)
    labels = p.labels()
    within_pairs = 2 * 50 * 49 / 2
    across_pairs = 50 * 50
    ws, wd = [], []
    for seed in range(200):
        e = sample_sbm(p, seed).edges
        same = labels[e[:, 0]] == labels[e[:, 1]]
        ws.append(same.sum() / within_pairs)
        wd.append((~same).sum() / across_pairs)
    se_s = math.sqrt(0.3 * 0.7 / (within_pairs * 200))
    se_d = math.sqrt(0.1 * 0.9 / (across_pairs * 200))
    assert abs(np.mean(ws) - 0.3) < 4 * se_s
    assert abs(np.mean(wd) - 0.1) < 4 * se_d


def test_graph_to_interaction_examples():
    W = graph_to_interaction(SimpleGraph(3, np.array([[0, 1], [0, 2], [1, 2]])))
    np.testing.assert_allclose(W.entries, (np.ones((3, 3)) - np.eye(3)) / 3)
    W = graph_to_interaction(SimpleGraph(3, np.array([[0, 1]])))
    assert W.entries[0, 1] == 1.0 and W.entries.sum() == 2.0


def test_edge_list_roundtrip():
    g = sample_sbm(SbmParams(30, 0.5, 0.4, 0.1), 5)
    text = g.to_edge_list()
    assert text.splitlines()[0].split()[0] == str(g.edges[0, 0] + 1)
    assert np.array_equal(SimpleGraph.from_edge_list(30, text).edges, g.edges)


def test_simple_graph_rejects_self_loop():
    with pytest.raises(ModelError):
        SimpleGraph(3, np.array([[1, 1]]))


def test_expected_interaction_uniform_case():
    W = expected_interaction(SbmParams(6, 0.5, 0.4, 0.4))
    off = W.entries[~np.eye(6, dtype=bool)]
    np.testing.assert_allclose(off, 2 / 30, rtol=1e-14)


def test_expected_interaction_small_example():
    # two within pairs at 0.5 plus four cross pairs at 0.25
    p = SbmParams(4, 0.5, 0.5, 0.25)
    assert p.expected_edges() == pytest.approx(2.0, rel=1e-14)
    W = expected_interaction(p)
    assert W.entries[0, 1] == pytest.approx(0.25, rel=1e-14)
    assert W.entries[0, 2] == pytest.approx(0.125, rel=1e-14)


def test_expected_interaction_matches_block_matrix():
    p = SbmParams(10, 0.4, 0.6, 0.2)
    ea = p.expected_edges()
    a = CommunityAssignment.from_counts([(4, 0), (6, 0)])
    model = BlockGossipModel(a, p.p_s / ea, p.p_d / ea, 0.5, [])
    np.testing.assert_allclose(expected_interaction(p).entries,
                               model.interaction_matrix().entries, rtol=1e-13)


def test_deviation_norm_basics():
    p = SbmParams(20, 0.5, 1.0, 1.0)
    W = graph_to_interaction(sample_sbm(p, 0))
    assert deviation_norm(W, W) == 0.0
    assert deviation_norm(W, expected_interaction(p)) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ModelError):
        deviation_norm(W, expected_interaction(SbmParams(10, 0.5, 1.0, 1.0)))


def test_deviation_norm_shrinks_with_n():
    def median_dev(n):
        p = SbmParams(n, 0.4, min(1.0, 5 * math.log(n) / n), math.log(n) / n)
        E = expected_interaction(p)
        return np.median([deviation_norm(graph_to_interaction(sample_sbm(p, s)), E)
                          for s in range(5)])

    d200, d400, d1000 = median_dev(200), median_dev(400), median_dev(1000)
    assert d200 > d400 > d1000


def test_weighted_to_interaction_normalizes():
    w = np.array([[0, 2, 0], [2, 0, 6], [0, 6, 0]], dtype=float)
    W = weighted_to_interaction(w)
    assert W.entries[0, 1] == 0.25 and W.entries[1, 2] == 0.75


# -- config --------------------------------------------------------------------

def test_model_config_ratio_and_roundtrip():
    cfg = {"communities": [{"regular": 5, "stubborn": 1}, {"regular": 5, "stubborn": 1}],
           "ratio": 5, "q": 0.5, "stubborn_states": [1, -1]}
    m = load_model_config(cfg)
    assert m.w_s == pytest.approx(5 / 186, rel=1e-14)
    again = load_model_config(model_to_config(m))
    assert (again.w_s, again.w_d, again.q) == (m.w_s, m.w_d, m.q)
    assert np.array_equal(again.assignment.labels, m.assignment.labels)


def test_model_config_w_s_only_derives_w_d():
    cfg = {"communities": [{"regular": 1, "stubborn": 1}, {"regular": 1, "stubborn": 1}],
           "w_s": 0.3, "stubborn_states": [1, -1]}
    assert load_model_config(cfg).w_d == pytest.approx(0.1, rel=1e-14)


def test_model_config_missing_stubborn_states():
    with pytest.raises(ModelError, match="stubborn_states"):
        load_model_config({"communities": [{"regular": 1, "stubborn": 1}] * 2, "ratio": 2})
