import json

import numpy as np
import pytest

from mavoid.ensemble import BOOSTED, FOREST, Ensemble
from mavoid.errors import ContractError
from mavoid.linear import LinearModel
from mavoid.reliance import (empirical_reliance, mcar_bound, reliance_ensemble, reliance_linear,
                             reliance_tree)
from mavoid.tree import DecisionTree, fit_tree

from oracles import trace_path


def linear(theta):
    theta = np.asarray(theta, dtype=float)
    return LinearModel(theta, 0.0, np.zeros_like(theta))


def stump(feature, thr=0.5, d=2):
    f = np.array([feature, -1, -1])
    return DecisionTree(f, np.array([thr, np.nan, np.nan]), np.array([1, -1, -1]),
                        np.array([2, -1, -1]), np.array([0.5, 0.0, 1.0]), np.ones(3), n_features=d)


def leaf(d=2):
    return DecisionTree(np.array([-1]), np.array([np.nan]), np.array([-1]), np.array([-1]),
                        np.array([0.3]), np.ones(1), n_features=d)


def test_linear_reliance():
    assert reliance_linear(linear([0.5, 0]), [1, 0], [0, 1]) == 0
    assert reliance_linear(linear([0.5, 0.1]), [1, 0], [0, 1]) == 1
    assert reliance_linear(linear([3, -2]), [1, 1], [0, 0]) == 0
    assert reliance_linear(linear([1e-13, 1]), [0, 0], [1, 0]) == 0


def test_linear_reliance_ignores_observed_values():
    m = linear([0.5, 0.1, 0.0])
    for x in ([0, 0, 0], [5, -3, 2], [1e9, 1, 1]):
        assert reliance_linear(m, x, [0, 1, 1]) == 1
        assert reliance_linear(m, x, [0, 0, 1]) == 0


def test_tree_reliance():
    assert reliance_tree(leaf(), [0, 0], [1, 1]) == 0
    assert reliance_tree(stump(0), [0, 0], [1, 0]) == 1
    assert reliance_tree(stump(0), [0, 0], [0, 1]) == 0


def test_tree_avoiding_missing_branch():
    # root on an observed score: high scores go left and never reach the imaging node
    f = np.array([0, -1, 1, -1, -1])
    t = DecisionTree(f, np.array([25.0, np.nan, 0.5, np.nan, np.nan]), np.array([2, -1, 3, -1, -1]),
                     np.array([1, -1, 4, -1, -1]), np.array([.5, .1, .5, .2, .9]), np.ones(5), n_features=2)
    assert reliance_tree(t, [28.0, 0.0], [0, 1]) == 0
    assert reliance_tree(t, [20.0, 0.0], [0, 1]) == 1


def test_ensemble_reliance():
    one = Ensemble(FOREST, [stump(0)])
    assert reliance_ensemble(one, [0, 0], [1, 0]) == reliance_tree(stump(0), [0, 0], [1, 0])
    two = Ensemble(FOREST, [stump(1), stump(0)])
    assert reliance_ensemble(two, [0, 0], [1, 0]) == 1
    assert reliance_ensemble(two, [0, 0], [0, 0]) == 0


def test_rho_hat_zero_without_missingness():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 3))
    y = (x[:, 0] > 0).astype(int)
    m = np.zeros_like(x, dtype=bool)
    for model in (fit_tree(x, y), linear([1, 1, 1]), Ensemble(BOOSTED, [fit_tree(x, y)])):
        assert empirical_reliance(model, x=x, mask=m).rho_hat == 0


def test_linear_counting_example():
    x = np.zeros((10, 2))
    m = np.zeros((10, 2), dtype=bool)
    m[:3, 0] = True
    m[:, 1] = True
    rep = empirical_reliance(linear([1.0, 0.0]), x=x, mask=m)
    assert rep.rho_hat == pytest.approx(0.3)
    np.testing.assert_array_equal(rep.per_feature_usage, [1.0, 0.0])


def test_depth_two_tree_matches_hand_trace():
    nodes = {0: (0, 0.5, 1, 4), 1: (1, 0.5, 2, 3), 2: None, 3: None, 4: (2, 0.5, 5, 6), 5: None, 6: None}
    f = np.array([nodes[u][0] if nodes[u] else -1 for u in range(7)])
    thr = np.array([nodes[u][1] if nodes[u] else np.nan for u in range(7)])
    le = np.array([nodes[u][2] if nodes[u] else -1 for u in range(7)])
    ri = np.array([nodes[u][3] if nodes[u] else -1 for u in range(7)])
    t = DecisionTree(f, thr, le, ri, np.linspace(0, 1, 7), np.ones(7), n_features=3)
    x = np.array([[0, 0, 0], [0, 1, 0], [1, 0, 0], [1, 0, 1]], dtype=float)
    m = np.array([[0, 1, 0], [0, 0, 1], [0, 1, 1], [0, 1, 0]], dtype=bool)
    expected = []
    for r, mr in zip(x, m):
        path = trace_path(nodes, r)
        expected.append(int(any(mr[nodes[u][0]] for u in path if nodes[u] is not None)))
    assert expected == [1, 0, 1, 0]
    rep = empirical_reliance(t, x=x, mask=m)
    assert rep.per_sample.tolist() == expected
    assert rep.rho_hat == 0.5
    np.testing.assert_array_equal(rep.per_feature_usage, [1.0, 0.5, 0.5])


def test_per_sample_zero_on_complete_rows():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 4))
    m = rng.random((200, 4)) < 0.3
    t = fit_tree(x, (x[:, 0] + x[:, 1] > 0).astype(int), m)
    rep = empirical_reliance(t, x=x, mask=m)
    assert not rep.per_sample[~m.any(axis=1)].any()
    assert rep.rho_hat == rep.per_sample.mean()


def test_ensemble_growth_never_lowers_reliance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(100, 3))
    m = rng.random((100, 3)) < 0.3
    trees = [stump(j % 3, thr=rng.normal(), d=3) for j in range(6)]
    prev = np.zeros(100)
    for k in range(1, 7):
        cur = empirical_reliance(Ensemble(FOREST, trees[:k]), x=x, mask=m).per_sample
        assert (cur >= prev).all()
        prev = cur


@pytest.mark.parametrize("usage,p,expected", [([1.0, 0.0], [0.3, 0.9], 0.3), ([1.0, 0.5], [0, 0], 0.0),
                                              ([0.5, 0.4], [0.2, 0.5], 0.2)])
def test_mcar_bound(usage, p, expected):
    from mavoid.reliance import RelianceReport
    rep = RelianceReport(np.zeros(4, dtype=np.int8), np.array(usage))
    assert mcar_bound(rep, p) == pytest.approx(expected)


def test_dimension_mismatch():
    with pytest.raises(ContractError):
        empirical_reliance(linear([1, 1]), x=np.zeros((3, 3)), mask=np.zeros((3, 3), bool))
    with pytest.raises(ContractError):
        empirical_reliance(linear([1, 1]), x=np.zeros((3, 2)), mask=np.zeros((3, 3), bool))


def test_report_json():
    rep = empirical_reliance(linear([1.0, 0.0]), x=np.zeros((4, 2)), mask=np.eye(4, 2, dtype=bool))
    d = json.loads(rep.to_json())
    assert d == {"rho_hat": 0.25, "per_feature_usage": [1.0, 0.0], "n": 4}
