"""Shared strategies and small builders for the test suite."""
import numpy as np
from hypothesis import strategies as st

from dpl.core_types import softmax

seeds = st.integers(0, 2**32 - 1)


def random_probs(rng, shape, sharpness=3.0):
    """ProbMap of ``shape`` (..., C) from scaled Gaussian scores."""
    return softmax(sharpness * rng.standard_normal(shape))


@st.composite
def prob_maps(draw, h=st.integers(1, 6), w=st.integers(1, 6), c=st.integers(2, 5)):
    shape = (draw(h), draw(w), draw(c))
    rng = np.random.default_rng(draw(seeds))
    return random_probs(rng, shape, draw(st.floats(0.1, 8.0)))


@st.composite
def prob_map_pairs(draw, h=st.integers(1, 6), w=st.integers(1, 6), c=st.integers(2, 5)):
    shape = (draw(h), draw(w), draw(c))
    rng = np.random.default_rng(draw(seeds))
    sharp = draw(st.floats(0.1, 8.0))
    return random_probs(rng, shape, sharp), random_probs(rng, shape, sharp)


def one_hot(labels, c):
    return np.eye(c)[labels]
