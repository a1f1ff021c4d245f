import numpy as np
import pytest
from hypothesis import settings, strategies as st

from gossip_blocks.graph_model import BlockGossipModel, CommunityAssignment

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def hand_model():
    """n1 = n2 = 2, one stubborn agent each, (w_s, w_d) = (0.3, 0.1), q = 1/2."""
    return BlockGossipModel(CommunityAssignment.from_counts([(1, 1), (1, 1)]), 0.3, 0.1, 0.5,
                            [1.0, -1.0])


@pytest.fixture
def small_model():
    return BlockGossipModel.from_ratio([(5, 1), (5, 1)], 5.0, 0.5, [1.0, -1.0])


@st.composite
def two_community_models(draw, max_regular=15, max_stubborn=5, need_both=False):
    nr1 = draw(st.integers(1, max_regular))
    nr2 = draw(st.integers(1, max_regular))
    lo = 1 if need_both else 0
    ns1 = draw(st.integers(lo, max_stubborn))
    ns2 = draw(st.integers(lo, max_stubborn))
    if ns1 + ns2 == 0:
        ns1 = 1
    ratio = draw(st.one_of(st.floats(0.05, 0.9), st.floats(1.1, 20.0)))
    q = draw(st.floats(0.0, 0.95))
    xs = draw(st.lists(st.floats(-1.0, 1.0), min_size=ns1 + ns2, max_size=ns1 + ns2))
    return BlockGossipModel.from_ratio([(nr1, ns1), (nr2, ns2)], ratio, q, np.array(xs))
