import numpy as np
import pytest
from scipy.special import expit
from sklearn.linear_model import LogisticRegression

from fairshap.model import (
    BOOSTED_STUMPS,
    BOOSTED_TREES,
    LOGISTIC,
    BoostedTrees,
    FunctionPredictor,
    LogisticModel,
    TrainConfig,
    dumps_model,
    load_model,
    loads_model,
    logistic_loss_and_grad,
    predict_label,
    save_model,
    train,
)


@pytest.fixture
def data(rng):
    X = rng.normal(size=(200, 4))
    A = rng.integers(0, 2, 200)
    z = X @ [1.0, -2.0, 0.5, 0.0] + 0.8 * A
    y = (rng.random(200) < expit(z)).astype(int)
    return X, A, y


def test_logistic_gradient_matches_finite_differences(rng):
    Z = rng.normal(size=(30, 3))
    y = rng.integers(0, 2, 30).astype(float)
    params = rng.normal(size=4)
    _, g = logistic_loss_and_grad(params, Z, y, 0.1)
    h = 1e-6
    num = np.empty(4)
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        num[k] = (logistic_loss_and_grad(params + e, Z, y, 0.1)[0] - logistic_loss_and_grad(params - e, Z, y, 0.1)[0]) / (2 * h)
    np.testing.assert_allclose(g, num, atol=1e-7)


def test_logistic_matches_sklearn_optimum(data):
    X, A, y = data
    l2 = 1e-2
    m = train(X, A, y, TrainConfig(model_kind=LOGISTIC, learning_rate=1.0, iterations=20000, l2_penalty=l2, tol=1e-10))
    ref = LogisticRegression(C=1.0 / (l2 * len(y)), tol=1e-12, max_iter=10000)
    ref.fit(np.column_stack([X, A]), y)
    np.testing.assert_allclose(m.weights, ref.coef_.ravel(), atol=1e-5)
    assert abs(m.bias - ref.intercept_[0]) < 1e-5


def test_logistic_deterministic(data):
    X, A, y = data
    a = train(X, A, y, TrainConfig(iterations=50))
    b = train(X, A, y, TrainConfig(iterations=50))
    np.testing.assert_array_equal(a.weights, b.weights)


def test_single_class_rejected(data):
    X, A, _ = data
    with pytest.raises(ValueError, match="both classes"):
        train(X, A, np.ones(len(X)), TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(model_kind="forest")
    with pytest.raises(ValueError):
        TrainConfig(model_kind=BOOSTED_STUMPS, max_depth=3)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)


def _walk(model, Z):
    """Pure-python traversal of the heap-ordered trees."""
    out = np.full(len(Z), model.base_score)
    n_int = 2**model.depth - 1
    for t in range(model.n_trees):
        for i, z in enumerate(Z):
            node = 0
            for _ in range(model.depth):
                node = 2 * node + (2 if z[model.features[t, node]] > model.thresholds[t, node] else 1)
            out[i] += model.leaves[t, node - n_int]
    return out


def test_tree_kernel_matches_python_walk(data):
    X, A, y = data
    m = train(X, A, y, TrainConfig(model_kind=BOOSTED_TREES, max_depth=3, tree_count=15, learning_rate=0.3))
    np.testing.assert_allclose(m.decision_function(X, A), _walk(m, np.column_stack([X, A])), rtol=0, atol=1e-12)


def test_boosting_loss_nonincreasing(data):
    X, A, y = data
    m = train(X, A, y, TrainConfig(model_kind=BOOSTED_TREES, max_depth=4, tree_count=40, learning_rate=1.0))
    assert np.all(np.diff(m.loss_history) <= 1e-15)
    assert m.loss_history[-1] < m.loss_history[0]


def test_single_stump_newton_leaves():
    # one feature, clean split at 0.5; with lambda=0 and lr=1 the leaves are -G/H per side
    X = np.array([[0.0], [0.1], [0.2], [0.8], [0.9], [1.0]])
    A = np.zeros(6)
    y = np.array([0, 0, 1, 1, 1, 1])
    m = train(X, A, y, TrainConfig(model_kind=BOOSTED_STUMPS, tree_count=1, learning_rate=1.0, reg_lambda=0.0,
                                   min_child_weight=0.0))
    p = y.mean()
    g, h = p - y, np.full(6, p * (1 - p))
    assert m.features[0, 0] == 0
    thr = m.thresholds[0, 0]
    left = X[:, 0] <= thr
    expected = np.where(left, -g[left].sum() / h[left].sum(), -g[~left].sum() / h[~left].sum())
    np.testing.assert_allclose(m.decision_function(X, A) - m.base_score, expected)
    assert m.base_score == pytest.approx(np.log(p / (1 - p)))


def test_trees_use_sensitive_column():
    # label depends only on A, so the model must split on the last input column
    X = np.zeros((40, 2))
    A = np.r_[np.zeros(20), np.ones(20)]
    y = A.astype(int)
    m = train(X, A, y, TrainConfig(model_kind=BOOSTED_TREES, max_depth=2, tree_count=5, learning_rate=0.5))
    assert m.predict_probability(np.zeros(2), 1) > 0.5 > m.predict_probability(np.zeros(2), 0)


@pytest.mark.parametrize("kind", [LOGISTIC, BOOSTED_STUMPS, BOOSTED_TREES])
def test_persistence_round_trip(tmp_path, data, kind):
    X, A, y = data
    cfg = TrainConfig(model_kind=kind, iterations=30, tree_count=8, max_depth=1 if kind != BOOSTED_TREES else 3)
    m = train(X, A, y, cfg)
    path = tmp_path / "m.txt"
    save_model(m, path)
    back = load_model(path)
    assert back.config == m.config
    np.testing.assert_array_equal(back.predict_proba(X, A), m.predict_proba(X, A))
    assert dumps_model(loads_model(dumps_model(m))) == dumps_model(m)


def test_predict_label_threshold_rule():
    f = FunctionPredictor(lambda X, A: X[:, 0])
    X = np.array([[0.49], [0.5], [0.51]])
    np.testing.assert_array_equal(predict_label(f, X, 0), [0, 1, 1])
    with pytest.raises(ValueError):
        predict_label(f, X, 0, threshold=1.0)


def test_function_predictor_clips():
    f = FunctionPredictor(lambda X, A: X[:, 0] * 3 - 1)
    np.testing.assert_array_equal(f.predict_proba(np.array([[0.0], [1.0]]), 0), [0.0, 1.0])


def test_logistic_model_sensitive_weight_is_last():
    m = LogisticModel([0.0, 2.0], 0.0)
    assert m.predict_probability([0.0], 1) == pytest.approx(expit(2.0))


def test_empty_ensemble_predicts_base():
    m = BoostedTrees(0.3, 2, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)))
    np.testing.assert_allclose(m.decision_function(np.zeros((2, 1)), 0), 0.3)
