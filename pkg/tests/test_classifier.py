import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cuspad.classifier import (
    LEAF,
    DecisionTree,
    accuracy,
    ci95,
    compact,
    confusion,
    evaluate_repeated,
    format_table,
    gini,
    predict,
    summarize,
    train_cart,
)
from cuspad.features import FeatureVector


def test_gini_values():
    assert gini([5, 5]) == pytest.approx(0.5)
    assert gini([10, 0]) == 0.0
    assert gini([1, 3]) == pytest.approx(1 - (0.25**2 + 0.75**2))
    assert gini([0, 0]) == 0.0


def test_separable_1d():
    X = np.array([[-3.0], [-2.0], [-0.5], [0.4], [1.0], [7.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    tree = train_cart(X, y, max_depth=5)
    assert tree.depth == 1
    assert accuracy(tree, X, y) == 100.0
    assert tree.threshold[0] == pytest.approx(-0.05)


def test_pure_input_single_leaf():
    tree = train_cart(np.random.default_rng(0).normal(size=(20, 3)), np.ones(20, dtype=int))
    assert tree.n_nodes == 1 and tree.feature[0] == LEAF
    assert predict(tree, np.array([100.0, -5.0, 0.0])) == 1


def test_xor_depth_two():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] * 3)
    y = np.array([0, 1, 1, 0] * 3)
    tree = train_cart(X, y, max_depth=2)
    assert accuracy(tree, X, y) == 100.0
    assert tree.depth == 2


def test_boundary_goes_left():
    tree = train_cart(np.array([[0.0], [2.0]]), np.array([0, 1]))
    thr = tree.threshold[0]
    assert predict(tree, np.array([thr])) == 0
    assert predict(tree, np.array([np.nextafter(thr, np.inf)])) == 1


def test_memorizes_distinct_rows():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 4))
    y = rng.integers(0, 2, 40)
    tree = train_cart(X, y, max_depth=40)
    np.testing.assert_array_equal(predict(tree, X), y)


def test_feature_vector_and_dimension_check():
    tree = train_cart(np.array([[0.0, 1.0], [2.0, 1.0]]), np.array([0, 1]))
    fv = FeatureVector("CUSPAD", ((1, 2), (1, 3)), np.array([3.0, 0.0]), 30)
    assert predict(tree, fv) == 1
    with pytest.raises(ValueError):
        predict(tree, np.zeros(3))


def test_json_roundtrip():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(60, 3)), rng.integers(0, 2, 60)
    tree = train_cart(X, y, max_depth=4, feature_names=["a", "b", "c"])
    back = DecisionTree.from_dict(json.loads(tree.to_json()))
    np.testing.assert_array_equal(predict(back, X), predict(tree, X))
    assert back.feature_names == ("a", "b", "c")
    assert back.to_json() == tree.to_json()


def test_compact_equivalent():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(80, 10)), rng.integers(0, 2, 80)
    tree = train_cart(X, y, max_depth=3)
    small, cols = compact(tree)
    np.testing.assert_array_equal(predict(small, X[:, cols]), predict(tree, X))


def test_min_leaf_respected():
    rng = np.random.default_rng(7)
    X, y = rng.normal(size=(50, 2)), rng.integers(0, 2, 50)
    tree = train_cart(X, y, max_depth=6, min_leaf=5)
    leaves = tree.feature == LEAF
    assert tree.counts[leaves].sum(axis=1).min() >= 5


def test_ci_and_zero_variance():
    assert ci95([90.0, 90.0, 90.0]) == (90.0, 0.0)
    mean, half = ci95([1.0, 2.0, 3.0, 4.0])
    assert mean == 2.5
    assert half == pytest.approx(1.96 * np.std([1, 2, 3, 4], ddof=1) / 2)


def test_evaluate_repeated_deterministic():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    tree = train_cart(X, y)
    rep = evaluate_repeated(tree, lambda k: (X, y, 0), trials=5)
    assert rep.mean_accuracy == 100.0 and rep.ci95_halfwidth == 0.0 and rep.trials == 5
    with pytest.raises(ValueError):
        evaluate_repeated(tree, lambda k: (X, y, 0), trials=0)


def test_confusion_and_table():
    assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == {"tp": 1, "tn": 1, "fp": 1, "fn": 1}
    tree = train_cart(np.array([[0.0], [1.0]]), np.array([0, 1]))
    rep = summarize(tree, [(np.array([0, 1]), np.array([0, 1]), 0)] * 3)
    text = format_table([("0", rep, rep)])
    assert text.splitlines()[0].startswith("| Error")
    assert "100.00 ± 0.00" in text


@given(
    arrays(np.float64, st.tuples(st.integers(4, 40), st.integers(1, 4)), elements=st.floats(-5, 5)),
    st.integers(0, 2**16),
)
def test_deeper_never_worse_on_training(X, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(X))
    accs = [accuracy(train_cart(X, y, max_depth=d), X, y) for d in (1, 2, 3, 5)]
    assert all(a <= b + 1e-12 for a, b in zip(accs, accs[1:]))


@given(
    arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 3)), elements=st.floats(-5, 5)),
    st.integers(0, 2**16),
)
def test_tree_structure_invariants(X, seed):
    y = np.random.default_rng(seed).integers(0, 2, len(X))
    tree = train_cart(X, y, max_depth=3)
    assert tree.depth <= 3
    inner = tree.feature != LEAF
    # child counts add up to the parent
    for i in np.flatnonzero(inner):
        np.testing.assert_array_equal(tree.counts[tree.left[i]] + tree.counts[tree.right[i]], tree.counts[i])
    assert tree.counts[0].sum() == len(X)
    assert set(np.unique(predict(tree, X))) <= {0, 1}
