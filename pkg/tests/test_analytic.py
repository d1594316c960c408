import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moe_superlab.analytic import (
    construct_support_moe,
    smallest_superset,
    support,
    support_forward,
    support_route,
    verify_cones,
    verify_equivalence,
    verify_equivalence_exhaustive,
)
from moe_superlab.datagen import FeatureDistribution


def test_construction_shape():
    moe = construct_support_moe(6, 2, 2)
    assert moe.n_experts == math.comb(6, 2)
    assert moe.subsets == sorted(moe.subsets)
    for s, W in zip(moe.subsets, moe.W):
        # columns outside the subset are zero, inside orthonormal
        assert not np.delete(W, s, axis=1).any()
        assert np.allclose(W[:, s].T @ W[:, s], np.eye(len(s)))


@pytest.mark.parametrize("args", [(3, 2, 3), (3, 4, 2), (3, 2, 0)])
def test_invalid_construction(args):
    with pytest.raises(ValueError):
        construct_support_moe(*args)


def test_routing_examples():
    moe = construct_support_moe(4, 2, 2)
    assert support([0.0, 0.3, 0.0, 1.0]) == (1, 3)
    assert smallest_superset((), 4, 2) == (0, 1)
    assert smallest_superset((2,), 4, 2) == (0, 2)
    assert moe.subsets[support_route(moe, [0.0, 0.5, 0.0, 0.2])] == (1, 3)


def test_too_many_active_features_rejected():
    moe = construct_support_moe(4, 2, 2)
    with pytest.raises(ValueError):
        support_forward(moe, [1.0, 1.0, 1.0, 0.0])


def test_exhaustive_reconstruction_is_exact():
    report = verify_equivalence_exhaustive(construct_support_moe(6, 2, 2))
    assert report["max_error"] < 1e-12
    assert report["inputs"] == 1 + 6 * 2 + 15 * 4


def test_sampled_reconstruction():
    moe = construct_support_moe(5, 3, 2)
    report = verify_equivalence(moe, 500, FeatureDistribution(5, 0.7), seed=1)
    assert report["samples"] == 500
    assert report["max_error"] < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(0, 10_000))
def test_cones_on_random_routers(E, seed):
    R = np.random.default_rng(seed).standard_normal((E, 4))
    report = verify_cones(R, 2000, seed=seed)
    assert report["scaling_violations"] == 0
    assert report["convexity_violations"] == 0
