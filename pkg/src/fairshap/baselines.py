"""Comparison preprocessors and the two random-replacement ablations.

The preprocessors return a fitted transform that must also be applied to
test rows; the ablations edit training data only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .matching import build_reference, nearest_neighbor_match
from .model import Predictor
from .shapley import _as_groups

NONE = "none"
FAIRSHAP = "fairshap"
CORRELATION_REMOVER = "correlation_remover"
DISPARATE_IMPACT_REMOVER = "disparate_impact_remover"
ABLATION_RANDOM = "ablation_random"
ABLATION_MATCH_RANDOM = "ablation_match_random"
METHODS = (NONE, FAIRSHAP, CORRELATION_REMOVER, DISPARATE_IMPACT_REMOVER, ABLATION_RANDOM, ABLATION_MATCH_RANDOM)

# whether the method's transform must be applied to test rows
TEST_ADJUSTMENT = {
    NONE: False,
    FAIRSHAP: False,
    CORRELATION_REMOVER: True,
    DISPARATE_IMPACT_REMOVER: True,
    ABLATION_RANDOM: False,
    ABLATION_MATCH_RANDOM: False,
}


@dataclass(frozen=True)
class BaselineConfig:
    method: str = NONE
    alpha: float = 1.0
    repair_level: float = 1.0
    n_modifications: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.repair_level <= 1.0:
            raise ValueError("repair_level must lie in [0, 1]")
        if self.n_modifications < 0:
            raise ValueError("n_modifications must be >= 0")


def _binary(A):
    A = np.asarray(A).astype(int).ravel()
    if not (np.any(A == 0) and np.any(A == 1)):
        raise ValueError("both sensitive groups must be present")
    return A


class Transform:
    """Fitted feature transform; ``sensitive`` maps the model's A input."""

    def transform(self, X, A) -> np.ndarray:
        raise NotImplementedError

    def sensitive(self, A):
        return A


@dataclass
class CorrelationRemoverTransform(Transform):
    coef: np.ndarray
    a_mean: float
    alpha: float

    def transform(self, X, A) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.broadcast_to(np.asarray(A, dtype=float), (len(X),))
        return X - self.alpha * (a - self.a_mean)[:, None] * self.coef[None, :]

    def sensitive(self, A):
        # the model's own A column is residualized as well; at alpha=1 it is constant
        return (1.0 - self.alpha) * np.asarray(A, dtype=float) + self.alpha * self.a_mean


def correlation_remover(X, A, alpha: float = 1.0):
    """Remove the linear dependence of every encoded column on ``A``.

    Returns the transformed training matrix and the fitted transform.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = _binary(A).astype(float)
    ac = A - A.mean()
    coef = ac @ (X - X.mean(axis=0)) / (ac @ ac)
    t = CorrelationRemoverTransform(coef, float(A.mean()), float(alpha))
    return t.transform(X, A), t


@dataclass
class DisparateImpactTransform(Transform):
    columns: np.ndarray
    sorted_by_group: list  # per column: (sorted values A=0, sorted values A=1)
    repair_level: float

    @staticmethod
    def _quantile(sorted_vals, q):
        n = len(sorted_vals)
        return sorted_vals[np.minimum((q * n).astype(int), n - 1)]

    def transform(self, X, A) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = np.broadcast_to(np.asarray(A).astype(int), (len(X),))
        out = X.copy()
        if self.repair_level == 0:
            return out
        for c, (s0, s1) in zip(self.columns, self.sorted_by_group):
            for a, s in ((0, s0), (1, s1)):
                rows = A == a
                if not rows.any():
                    continue
                x = X[rows, c]
                # mid-rank quantile of x within its own group
                q = (np.searchsorted(s, x, "left") + np.searchsorted(s, x, "right")) / (2.0 * len(s))
                target = np.median(np.vstack([self._quantile(s0, q), self._quantile(s1, q)]), axis=0)
                out[rows, c] = (1 - self.repair_level) * x + self.repair_level * target
        return out


def disparate_impact_remover(X, A, repair_level: float = 1.0, numeric_columns: Optional[Sequence[int]] = None):
    """Quantile repair of numeric columns toward the median of the group quantile functions.

    Parameters
    ----------
    numeric_columns : sequence of int, optional
        Encoded columns to repair; all columns when omitted.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = _binary(A)
    cols = np.arange(X.shape[1]) if numeric_columns is None else np.asarray(list(numeric_columns), dtype=int)
    sorted_by_group = [(np.sort(X[A == 0, c]), np.sort(X[A == 1, c])) for c in cols]
    t = DisparateImpactTransform(cols, sorted_by_group, float(repair_level))
    return t.transform(X, A), t


class SensitiveMappedPredictor(Predictor):
    """A model trained on transformed rows, with its A input passed through the transform.

    Feature rows must already be transformed (once, with each row's own A)
    before they reach this predictor; only the model's sensitive input is
    mapped here, so flipping A for DR does not re-transform the features.
    """

    def __init__(self, base: Predictor, transform: Transform):
        self.base = base
        self.transform = transform

    def predict_proba(self, X, A):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = np.broadcast_to(np.asarray(A, dtype=float), (len(X),))
        return self.base.predict_proba(X, self.transform.sensitive(A))


def _draw_cells(n_rows, n_features, n, rng):
    total = n_rows * n_features
    if n > total:
        raise ValueError(f"cannot draw {n} distinct cells from {total}")
    flat = rng.choice(total, size=n, replace=False)
    return flat // n_features, flat % n_features


def ablation_random(X, n_modifications: int, seed: int = 0, groups=None) -> np.ndarray:
    """Replace random cells with the same feature's value from another random row."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    groups = _as_groups(groups, X.shape[1])
    rng = np.random.default_rng(seed)
    out = X.copy()
    n = len(X)
    if n_modifications == 0:
        return out
    rows, feats = _draw_cells(n, len(groups), n_modifications, rng)
    for i, k in zip(rows, feats):
        donor = rng.integers(n - 1) if n > 1 else 0
        donor += donor >= i and n > 1
        out[i, groups[k]] = X[donor, groups[k]]
    return out


def ablation_match_random(X, A, n_modifications: int, seed: int = 0, groups=None) -> np.ndarray:
    """Replace random cells with the value from the row's nearest cross-group match."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = _binary(A)
    groups = _as_groups(groups, X.shape[1])
    ref = np.empty_like(X)
    for a in (0, 1):
        tgt, oth = np.flatnonzero(A == a), np.flatnonzero(A != a)
        ref[tgt] = build_reference(nearest_neighbor_match(X[tgt], X[oth]), X[oth]).rows
    rng = np.random.default_rng(seed)
    out = X.copy()
    if n_modifications == 0:
        return out
    rows, feats = _draw_cells(len(X), len(groups), n_modifications, rng)
    for i, k in zip(rows, feats):
        out[i, groups[k]] = ref[i, groups[k]]
    return out
