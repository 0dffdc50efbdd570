import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from fairshap import fairness as fm
from fairshap.model import FunctionPredictor, TrainConfig, train

from oracles import w1_lp


def const(p):
    return FunctionPredictor(lambda X, A: np.full(len(X), float(p)))


def by_column(col=0):
    """Predict the value stored in column ``col`` (0 or 1), ignoring A."""
    return FunctionPredictor(lambda X, A: X[:, col].astype(float))


def test_dr_instance_cases():
    assert fm.dr_instance(const(0.3), [1.0, 2.0]) == 0.0
    f = FunctionPredictor(lambda X, A: 0.2 + 0.5 * np.asarray(A, float) * np.ones(len(X)))
    assert fm.dr_instance(f, [0.0]) == pytest.approx(0.5)
    assert fm.dr_instance(f, [0.0], fm.LABEL) == 1.0


def test_dr_dataset_matches_loop(rng):
    X = rng.normal(size=(10, 3))
    f = FunctionPredictor(lambda X, A: 1 / (1 + np.exp(-(X[:, 0] + 2 * A * X[:, 1]))))
    loop = sum(abs(f.predict_proba(x[None], 0)[0] - f.predict_proba(x[None], 1)[0]) for x in X) / 10
    assert fm.dr_dataset(f, X) == pytest.approx(loop, abs=1e-15)
    same = np.repeat(X[:1], 5, axis=0)
    assert fm.dr_dataset(f, same) == pytest.approx(fm.dr_instance(f, X[0]), abs=1e-15)
    with pytest.raises(ValueError):
        fm.dr_dataset(f, np.zeros((0, 3)))


def test_boosted_dr_equals_direct_calls(rng):
    X = rng.normal(size=(80, 3))
    A = rng.integers(0, 2, 80)
    y = (X[:, 0] + A > 0.5).astype(int)
    m = train(X, A, y, TrainConfig(model_kind="boosted_stumps", tree_count=20))
    x = X[3]
    direct = abs(m.predict_proba(x[None], 0)[0] - m.predict_proba(x[None], 1)[0])
    assert fm.dr_instance(m, x) == direct


def test_group_metric_extremes():
    X = np.zeros((4, 1))
    A = np.array([0, 0, 1, 1])
    y = np.array([1, 0, 1, 0])
    assert fm.demographic_parity(const(1.0), X, A) == 0
    f = FunctionPredictor(lambda X, A: 1.0 - np.asarray(A, float))
    assert fm.demographic_parity(f, X, A) == 1
    perfect = FunctionPredictor(lambda X, A: y.astype(float))
    assert fm.equality_of_opportunity(perfect, X, A, y) == 0
    assert fm.predictive_quality_parity(perfect, X, A, y) == 0
    assert fm.accuracy(perfect, X, A, y) == 1
    assert fm.accuracy(FunctionPredictor(lambda X, A: 1.0 - y), X, A, y) == 0


def test_eo_and_pqp_forced_values():
    # group 0: 5 positives, 4 predicted 1 (TPR 0.8); group 1: 4 positives, 2 predicted 1 (TPR 0.5)
    yhat = np.r_[1, 1, 1, 1, 0, 1, 1, 0, 0]
    y = np.r_[1, 1, 1, 1, 1, 1, 1, 1, 1]
    A = np.r_[0, 0, 0, 0, 0, 1, 1, 1, 1]
    X = yhat[:, None].astype(float)
    assert fm.equality_of_opportunity(by_column(), X, A, y) == pytest.approx(0.3)
    # precision 1.0 in group 0 vs 0.5 in group 1
    y2 = np.r_[1, 1, 0, 1, 0, 0]
    yhat2 = np.r_[1, 1, 0, 1, 1, 0]
    A2 = np.r_[0, 0, 0, 1, 1, 1]
    assert fm.predictive_quality_parity(by_column(), yhat2[:, None].astype(float), A2, y2) == pytest.approx(0.5)


def test_hand_tallied_20_rows():
    yhat = np.array([1, 1, 0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0, 1, 0, 0])
    y = np.array([1, 0, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 0])
    A = np.array([0] * 10 + [1] * 10)
    X = yhat[:, None].astype(float)
    # group 0: predicted positive 6/10, TPR 5/6, precision 5/6
    # group 1: predicted positive 3/10, TPR 2/5, precision 2/3
    assert fm.demographic_parity(by_column(), X, A) == pytest.approx(0.3)
    assert fm.equality_of_opportunity(by_column(), X, A, y) == pytest.approx(5 / 6 - 2 / 5)
    assert fm.predictive_quality_parity(by_column(), X, A, y) == pytest.approx(5 / 6 - 2 / 3)
    assert fm.accuracy(by_column(), X, A, y) == pytest.approx(14 / 20)


def test_group_metric_errors():
    X = np.zeros((3, 1))
    with pytest.raises(fm.MetricUndefined):
        fm.demographic_parity(const(1), X, [0, 0, 0])
    with pytest.raises(fm.MetricUndefined, match="A=1"):
        fm.equality_of_opportunity(const(1), X, [0, 1, 1], [1, 0, 0])
    with pytest.raises(fm.MetricUndefined, match="A=0"):
        fm.predictive_quality_parity(by_column(), np.array([[0.0], [1], [1]]), [0, 1, 1], [1, 1, 0])
    rep = fm.evaluate(by_column(), np.array([[0.0], [1], [1]]), [0, 1, 1], [1, 1, 0])
    assert rep.pqp is None and rep.eo is not None


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_group_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = 30
    X = rng.normal(size=(n, 2))
    A = np.r_[0, 1, rng.integers(0, 2, n - 2)]
    y = np.r_[1, 1, rng.integers(0, 2, n - 2)]
    f = FunctionPredictor(lambda X, A: 1 / (1 + np.exp(-(X[:, 0] + 0.8 * A))))
    perm = rng.permutation(n)
    a = fm.evaluate(f, X, A, y)
    b = fm.evaluate(f, X[perm], A[perm], y[perm])
    for k in ("accuracy", "dr", "dp", "eo", "pqp"):
        va, vb = getattr(a, k), getattr(b, k)
        assert (va is None and vb is None) or va == pytest.approx(vb, abs=1e-12)


def test_wasserstein_cases(rng):
    a = rng.normal(size=20)
    assert fm.wasserstein_1d(a, a) == 0
    assert fm.wasserstein_1d(a, a + 2.5) == pytest.approx(2.5)
    assert fm.wasserstein_1d([0, 1], [0, 0, 3]) == pytest.approx(w1_lp([0, 1], [0, 0, 3]))
    assert fm.wasserstein_1d([0, 1], [0, 0, 3]) == pytest.approx(5 / 6)
    with pytest.raises(ValueError):
        fm.wasserstein_1d([], [1.0])


def test_wasserstein_matches_lp():
    rng = np.random.default_rng(1)
    for _ in range(30):
        a = rng.normal(size=rng.integers(1, 9))
        b = rng.normal(size=rng.integers(1, 9))
        assert fm.wasserstein_1d(a, b) == pytest.approx(w1_lp(a, b), abs=1e-9)


samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=15)


@settings(max_examples=100, deadline=None)
@given(samples, samples, samples)
def test_wasserstein_metric_axioms(a, b, c):
    ab, bc, ac = fm.wasserstein_1d(a, b), fm.wasserstein_1d(b, c), fm.wasserstein_1d(a, c)
    assert ac <= ab + bc + 1e-9 * (1 + ab + bc)
    assert ab == pytest.approx(fm.wasserstein_1d(b, a), abs=1e-9)
    assert ab >= 0


def test_data_fidelity(rng):
    X = rng.normal(size=(15, 4))
    assert fm.data_fidelity(X, X) == 0
    Y = X.copy()
    Y[:, 2] += 1
    assert fm.data_fidelity(X, Y) == pytest.approx(0.25)
    Y = X.copy()
    Y[[1, 4], [0, 3]] = [5.0, -2.0]
    loop = np.mean([wasserstein_distance(X[:, j], Y[:, j]) for j in range(4)])
    assert fm.data_fidelity(X, Y) == pytest.approx(loop, abs=1e-12)
    with pytest.raises(ValueError):
        fm.data_fidelity(X, X[:, :3])


def test_training_adjustment_rate():
    X = np.zeros((10, 6))
    slices = [[0], [1], [2], [3], [4, 5]]
    assert fm.training_adjustment_rate(X, X, slices) == 0
    assert fm.training_adjustment_rate(X, X + 1, slices) == 1
    Y = X.copy()
    Y[3, [4, 5]] = [1, 1]  # one one-hot block counts once
    assert fm.training_adjustment_rate(X, Y, slices) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        fm.training_adjustment_rate(X, X[:5])


def test_tv_distance():
    a = np.array([[0], [1], [2], [2]])
    assert fm.tv_distance_discrete(a, a[::-1]) == 0
    assert fm.tv_distance_discrete(a, a + 10) == 1
    # counts (2, 1, 1)/4 vs (1, 1, 3)/5
    b = np.array([[0], [1], [2], [2], [2]])
    c = np.array([[0], [0], [1], [2]])
    expect = 0.5 * (abs(2 / 4 - 1 / 5) + abs(1 / 4 - 1 / 5) + abs(1 / 4 - 3 / 5))
    assert fm.tv_distance_discrete(c, b) == pytest.approx(expect)


def test_tv_with_bins():
    D0 = np.array([[0.1], [0.2], [0.9]])
    D1 = np.array([[0.15], [0.85], [0.95]])
    bins = fm.fixed_width_bins([np.r_[D0[:, 0], D1[:, 0]]], 2)
    assert fm.tv_distance_discrete(D0, D1, bins) == pytest.approx(1 / 3)


def test_report_flags_and_finiteness():
    rep = fm.FairnessReport(accuracy=0.9, dr=0.01, dp=0.2, eo=None, pqp=0.0, epsilon=0.05)
    assert rep.flags() == {"dr": True, "dp": False, "eo": False, "pqp": True}
    with pytest.raises(ValueError):
        fm.FairnessReport(accuracy=float("nan"), dr=0, dp=0, eo=0, pqp=0).as_dict()
