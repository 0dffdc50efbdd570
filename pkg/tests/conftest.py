import numpy as np
import pytest

from fairshap.dataset import from_arrays
from fairshap.model import FunctionPredictor


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def make_predictor(w, u, c=0.0, inter=0.0):
    """Nonlinear f(x, A) = sigmoid(x.w + (x.u) A + c A + inter * x0 * x1 * A)."""
    w, u = np.asarray(w, float), np.asarray(u, float)

    def fn(X, A):
        return sigmoid(X @ w + (X @ u) * A + c * A + inter * X[:, 0] * X[:, 1] * A)

    return FunctionPredictor(fn)


@pytest.fixture
def toy_dataset(rng):
    n = 60
    A = np.r_[np.zeros(30, int), np.ones(30, int)]
    age = rng.normal(40, 10, n)
    amount = rng.gamma(2.0, 1000.0, n)
    color = rng.choice(["red", "green", "blue"], n)
    y = (age + 5 * A + rng.normal(0, 5, n) > 42).astype(int)
    y[:2] = [0, 1]
    y[30:32] = [0, 1]
    return from_arrays({"age": age, "amount": amount, "color": color}, y, A)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
