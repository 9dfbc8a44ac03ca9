import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfimpute.forest import (
    CLASSIFICATION, REGRESSION, ForestParams, RandomForest, fit_forest, grow_tree, oob_error,
    proximity, variable_importance,
)
from rfimpute.errors import ConfigError, DataError

RTOL = 1e-11


# independent exhaustive-split CART oracle -------------------------------------

def _sse(y):
    return float(np.sum((y - y.mean()) ** 2)) if len(y) else 0.0


def _gini_sum(y, k):
    # n * gini impurity, so decreases are comparable with the variance case
    c = np.bincount(y, minlength=k).astype(float)
    n = c.sum()
    return n - (c ** 2).sum() / n if n else 0.0


def oracle_tree(X, y, min_node, task, k=0):
    """Nested-tuple CART built by enumerating every (feature, threshold) split.
    Ties keep the first split in (feature, threshold) ascending order."""
    n = len(y)
    if task == REGRESSION:
        leaf = ("leaf", float(y.mean()))
        pure = _sse(y) <= RTOL * (np.sum(y ** 2) + 1e-300)
        parent = _sse(y)
        tol = RTOL * (np.sum(y ** 2) + 1e-300)
    else:
        counts = np.bincount(y, minlength=k)
        leaf = ("leaf", int(np.argmax(counts)))
        pure = np.count_nonzero(counts) <= 1
        parent = _gini_sum(y, k)
        tol = RTOL * n
    if n < min_node or pure:
        return leaf
    best, best_gain = None, tol
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            t = 0.5 * (a + b)
            t = a if t >= b else t
            left = X[:, f] <= t
            if task == REGRESSION:
                gain = parent - _sse(y[left]) - _sse(y[~left])
            else:
                gain = parent - _gini_sum(y[left], k) - _gini_sum(y[~left], k)
            if gain > best_gain + (tol if best is not None else 0.0):
                best, best_gain = (f, t), gain
    if best is None:
        return leaf
    f, t = best
    left = X[:, f] <= t
    return ("split", f, t, oracle_tree(X[left], y[left], min_node, task, k),
            oracle_tree(X[~left], y[~left], min_node, task, k))


def oracle_predict(node, x):
    while node[0] == "split":
        node = node[3] if x[node[1]] <= node[2] else node[4]
    return node[1]


def random_instance(rng, task):
    n = int(rng.integers(2, 31))
    M = int(rng.integers(1, 4))
    grid = int(rng.integers(2, 8))
    X = rng.integers(0, grid, size=(n, M)) / grid
    if task == REGRESSION:
        y = rng.integers(0, 5, size=n).astype(float) + (X[:, 0] if rng.random() < 0.5 else 0)
    else:
        y = rng.integers(0, int(rng.integers(2, 4)), size=n)
    return X, y, int(rng.integers(1, 6))


@pytest.mark.parametrize("task", [REGRESSION, CLASSIFICATION])
def test_tree_matches_exhaustive_cart_oracle(task):
    rng = np.random.default_rng(42)
    for _ in range(50):
        X, y, min_node = random_instance(rng, task)
        k = int(y.max()) + 1 if task == CLASSIFICATION else 0
        tree = grow_tree(X, y, X.shape[1], min_node, seed=int(rng.integers(1 << 30)), task=task,
                         n_classes=k or None)
        ref = oracle_tree(X, y, min_node, task, k)
        probe = np.vstack([X, rng.random((20, X.shape[1]))])
        got = tree.predict(probe)
        want = np.array([oracle_predict(ref, x) for x in probe])
        if task == REGRESSION:
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)
        else:
            assert np.array_equal(got, want)


# single trees ------------------------------------------------------------------

def test_constant_target_gives_single_leaf():
    X = np.random.default_rng(0).random((20, 3))
    t = grow_tree(X, np.full(20, 4.2), 3, 1, seed=0)
    assert t.n_nodes == 1 and t.predict(X[:1])[0] == pytest.approx(4.2, rel=1e-15)


def test_perfect_split_reproduces_targets():
    X = np.arange(10, dtype=float).reshape(-1, 1)
    t = grow_tree(X, X[:, 0], 1, 1, seed=0)
    np.testing.assert_array_equal(t.predict(X), X[:, 0])


def test_min_node_stops_growth():
    rng = np.random.default_rng(1)
    X = rng.random((40, 2))
    t = grow_tree(X, rng.random(40), 2, 7, seed=1)
    internal = t.feature >= 0
    assert np.all(t.node_size[internal] >= 7)


def test_grow_tree_errors():
    with pytest.raises(DataError):
        grow_tree(np.zeros((0, 2)), np.zeros(0), 1, 1, 0)
    with pytest.raises(ConfigError):
        grow_tree(np.zeros((3, 2)), np.zeros(3), 3, 1, 0)


# forests -----------------------------------------------------------------------

def regression_data(n=300, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 4))
    y = 3 * X[:, 0] + np.sin(4 * X[:, 1]) + 0.1 * rng.standard_normal(n)
    return X, y


def test_params_and_m_rule():
    p = ForestParams()
    assert (p.n_trees, p.min_node, p.m) == (70, 7, 3)
    X, y = regression_data(50)
    with pytest.raises(ConfigError):
        fit_forest(X, y, ForestParams(n_trees=2, m=4))
    fit_forest(X, y, ForestParams(n_trees=1, m=4, bootstrap=False))
    assert ForestParams(m=3).for_features(2).m == 1


def test_degenerate_forest_equals_grow_tree():
    X, y = regression_data(80)
    f = fit_forest(X, y, ForestParams(n_trees=1, m=4, min_node=3, bootstrap=False), seed=5)
    from rfimpute.seeding import derive_seed
    t = grow_tree(X, y, 4, 3, derive_seed(f.tree_seeds[0], "features"))
    np.testing.assert_array_equal(f.predict(X), t.predict(X))


def test_determinism_and_threads():
    X, y = regression_data()
    a = fit_forest(X, y, ForestParams(n_trees=12), seed=3)
    b = fit_forest(X, y, ForestParams(n_trees=12), seed=3, threads=4)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
    assert a.to_dict() == b.to_dict()


def test_oob_fraction():
    fracs = []
    for seed in range(10):
        f = fit_forest(np.zeros((5000, 2)) + np.arange(5000)[:, None], np.zeros(5000),
                       ForestParams(n_trees=5, m=1), seed=seed)
        fracs.append(np.mean([len(r) / 5000 for r in f.oob_membership()]))
    assert 0.33 <= np.mean(fracs) <= 0.41


def test_single_tree_oob_set_is_complement_of_bootstrap():
    from rfimpute.forest import bootstrap_sample
    X, y = regression_data(60)
    f = fit_forest(X, y, ForestParams(n_trees=1, m=2), seed=2)
    boot = set(bootstrap_sample(f.tree_seeds[0], 60).tolist())
    assert set(f.oob_membership()[0].tolist()) == set(range(60)) - boot


def test_oob_error_near_zero_on_noiseless_target():
    rng = np.random.default_rng(0)
    X = rng.integers(0, 2, size=(1000, 3)).astype(float)
    y = X[:, 0].astype(int)
    f = fit_forest(X, y, ForestParams(n_trees=20, m=2), seed=1, task=CLASSIFICATION)
    assert oob_error(f, X, y).error < 0.05


def test_regression_prediction_within_target_range():
    X, y = regression_data()
    f = fit_forest(X, y, ForestParams(n_trees=10), seed=0)
    p = f.predict(np.random.default_rng(9).random((200, 4)) * 3 - 1)
    assert p.min() >= y.min() and p.max() <= y.max()


def test_vote_ties_and_unanimity():
    X = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    trees = []
    # one tree per class: leaf counts favour class 0 in the first, class 1 in the second
    for c in (0, 1):
        t = grow_tree(np.zeros((1, 1)), np.array([c]), 1, 1, 0, CLASSIFICATION, n_classes=2)
        trees.append(t)
    f = RandomForest(ForestParams(n_trees=2, m=1), CLASSIFICATION, tuple(trees), (0, 1), 2, 1, 0,
                     np.array([0, 1]))
    assert f.predict(X).tolist() == [0, 0]
    f1 = RandomForest(ForestParams(n_trees=2, m=1), CLASSIFICATION, (trees[1], trees[1]), (0, 1),
                      2, 1, 0, np.array([0, 1]))
    assert f1.predict(X).tolist() == [1, 1]


def test_regression_mean_of_trees():
    a = grow_tree(np.zeros((1, 1)), np.array([0.2]), 1, 1, 0)
    b = grow_tree(np.zeros((1, 1)), np.array([0.4]), 1, 1, 0)
    f = RandomForest(ForestParams(n_trees=2, m=1), REGRESSION, (a, b), (0, 1), 1, 1, 0)
    assert f.predict(np.zeros((1, 1)))[0] == pytest.approx(0.3)
    f2 = RandomForest(ForestParams(n_trees=2, m=1), REGRESSION, (a, a), (0, 1), 1, 1, 0)
    assert f2.predict(np.zeros((1, 1)))[0] == a.predict(np.zeros((1, 1)))[0]


def test_predict_arity_mismatch():
    X, y = regression_data(50)
    f = fit_forest(X, y, ForestParams(n_trees=2), seed=0)
    with pytest.raises(DataError):
        f.predict(np.zeros((1, 3)))


def test_serialization_roundtrip():
    X, y = regression_data()
    f = fit_forest(X, y, ForestParams(n_trees=5), seed=1)
    g = RandomForest.from_dict(f.to_dict())
    np.testing.assert_array_equal(f.predict(X), g.predict(X))


def test_unused_feature_has_zero_importance():
    rng = np.random.default_rng(3)
    X = rng.random((400, 3))
    X[:, 2] = 0.5  # constant, never split on
    y = X[:, 0] * 2 + X[:, 1]
    f = fit_forest(X, y, ForestParams(n_trees=20, m=2), seed=0)
    rep = variable_importance(f, X, y, seed=0)
    assert abs(rep.importance[2]) < 0.01
    assert rep.top(1) == [0]
    assert np.all(rep.clipped >= 0)


def test_proximity_against_leaf_id_oracle():
    X, y = regression_data(20)
    f = fit_forest(X, y, ForestParams(n_trees=6, min_node=3), seed=4)
    P = proximity(f, X)
    ref = np.zeros((20, 20), dtype=int)
    for t in f.trees:
        leaves = t.apply(X)
        for i in range(20):
            for j in range(20):
                ref[i, j] += leaves[i] == leaves[j]
    assert np.array_equal(P, ref)
    assert np.array_equal(P, P.T) and np.all(np.diag(P) == 6)
    Pn = proximity(f, X, normalize=True)
    assert Pn.min() >= 0 and Pn.max() <= 1


def test_duplicate_rows_have_full_proximity():
    X, y = regression_data(30)
    X = np.vstack([X, X[:1]])
    y = np.append(y, y[0])
    f = fit_forest(X, y, ForestParams(n_trees=8), seed=2)
    assert proximity(f, X)[0, -1] == 8


@given(st.integers(0, 2**31), st.integers(5, 40))
def test_tree_partition_property(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3))
    y = rng.random(n)
    t = grow_tree(X, y, 2, 2, seed)
    internal = np.flatnonzero(t.feature >= 0)
    assert np.all(t.left[internal] > 0) and np.all(t.right[internal] > 0)
    leaves = t.apply(X)
    assert np.all(t.feature[leaves] < 0)
    # each leaf value is the mean of the training targets reaching it
    for leaf in np.unique(leaves):
        assert t.value[leaf] == pytest.approx(y[leaves == leaf].mean())
