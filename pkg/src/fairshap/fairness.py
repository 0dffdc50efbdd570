"""Individual and group fairness metrics, data fidelity and adjustment rates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import wasserstein_distance

PROBABILITY = "probability"
LABEL = "label"


class MetricUndefined(ValueError):
    """A metric whose denominator is empty for some group."""


def dr_values(f, X, mode: str = PROBABILITY) -> np.ndarray:
    """Per-row discriminative risk |f(x, A=0) - f(x, A=1)|.

    ``mode="label"`` compares thresholded predictions instead of probabilities.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p0 = f.predict_proba(X, 0)
    p1 = f.predict_proba(X, 1)
    if mode == LABEL:
        p0, p1 = (p0 >= 0.5).astype(float), (p1 >= 0.5).astype(float)
    elif mode != PROBABILITY:
        raise ValueError(f"unknown DR mode {mode!r}")
    return np.abs(p0 - p1)


def dr_instance(f, x, mode: str = PROBABILITY) -> float:
    return float(dr_values(f, np.asarray(x, dtype=float)[None, :], mode)[0])


def dr_dataset(f, X, mode: str = PROBABILITY) -> float:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("dr_dataset needs a non-empty 2-D matrix")
    return float(np.mean(dr_values(f, X, mode)))


def _predictions(f, X, A, threshold=0.5):
    A = np.asarray(A).astype(int)
    return (f.predict_proba(X, A) >= threshold).astype(int), A


def _groups(A):
    g0, g1 = A == 0, A == 1
    if not g0.any() or not g1.any():
        raise MetricUndefined(f"group A={0 if not g0.any() else 1} is empty")
    return g0, g1


def demographic_parity(f, X, A, threshold: float = 0.5) -> float:
    """|P(yhat=1 | A=0) - P(yhat=1 | A=1)|, each row scored with its own A."""
    yhat, A = _predictions(f, X, A, threshold)
    g0, g1 = _groups(A)
    return float(abs(yhat[g0].mean() - yhat[g1].mean()))


def equality_of_opportunity(f, X, A, y, threshold: float = 0.5) -> float:
    """Absolute gap in true positive rates."""
    yhat, A = _predictions(f, X, A, threshold)
    y = np.asarray(y).astype(int)
    rates = []
    for a in (0, 1):
        pos = (A == a) & (y == 1)
        if not pos.any():
            raise MetricUndefined(f"group A={a} has no positive labels; TPR undefined")
        rates.append(yhat[pos].mean())
    return float(abs(rates[0] - rates[1]))


def predictive_quality_parity(f, X, A, y, threshold: float = 0.5) -> float:
    """Absolute gap in precision."""
    yhat, A = _predictions(f, X, A, threshold)
    y = np.asarray(y).astype(int)
    prec = []
    for a in (0, 1):
        pp = (A == a) & (yhat == 1)
        if not pp.any():
            raise MetricUndefined(f"group A={a} has no predicted positives; precision undefined")
        prec.append(y[pp].mean())
    return float(abs(prec[0] - prec[1]))


def accuracy(f, X, A, y, threshold: float = 0.5) -> float:
    yhat, _ = _predictions(f, X, A, threshold)
    y = np.asarray(y).astype(int)
    if len(y) == 0:
        raise ValueError("accuracy of an empty set")
    return float(np.mean(yhat == y))


def wasserstein_1d(a, b) -> float:
    """Exact W1 between two empirical distributions on the line (sizes may differ)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs non-empty samples")
    return float(wasserstein_distance(a, b))


def data_fidelity(X_orig, X_mod) -> float:
    """Mean over encoded columns of the 1-D Wasserstein distance."""
    A = getattr(X_orig, "values", X_orig)
    B = getattr(X_mod, "values", X_mod)
    A, B = np.asarray(A, dtype=float), np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    if A.shape[1] == 0:
        return 0.0
    return float(np.mean([wasserstein_1d(A[:, j], B[:, j]) for j in range(A.shape[1])]))


def changed_cells(X_orig, X_mod, feature_slices: Optional[Sequence] = None) -> np.ndarray:
    """Boolean (rows x raw features) matrix of raw cells whose value differs.

    Without ``feature_slices`` every encoded column is its own raw feature.
    """
    A = np.asarray(getattr(X_orig, "values", X_orig))
    B = np.asarray(getattr(X_mod, "values", X_mod))
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    if feature_slices is None:
        feature_slices = getattr(X_orig, "feature_slices", None)
    diff = A != B
    if feature_slices is None:
        return diff
    return np.column_stack([diff[:, np.asarray(s)].any(axis=1) for s in feature_slices])


def training_adjustment_rate(X_orig, X_mod, feature_slices: Optional[Sequence] = None) -> float:
    """Fraction of raw training cells changed; a one-hot block counts once."""
    cells = changed_cells(X_orig, X_mod, feature_slices)
    return float(cells.mean()) if cells.size else 0.0


def fixed_width_bins(columns, n_bins: int = 10):
    """Interior edges of ``n_bins`` equal-width bins spanning the pooled range of each column."""
    edges = []
    for col in columns:
        lo, hi = float(np.min(col)), float(np.max(col))
        edges.append(np.linspace(lo, hi, n_bins + 1)[1:-1] if hi > lo else np.array([]))
    return edges


def tv_distance_discrete(D0, D1, bins: Optional[Sequence] = None) -> float:
    """Half the L1 distance between the joint empirical histograms of two samples.

    Columns without bin edges are compared by exact value, so fully
    discrete data gives the exact empirical total variation.
    """
    D0 = np.atleast_2d(np.asarray(D0, dtype=float))
    D1 = np.atleast_2d(np.asarray(D1, dtype=float))
    if len(D0) == 0 or len(D1) == 0:
        raise ValueError("tv_distance_discrete needs non-empty samples")
    if bins is None:
        c0, c1 = D0, D1
    else:
        c0 = np.column_stack([D0[:, j] if e is None else np.digitize(D0[:, j], e) for j, e in enumerate(bins)])
        c1 = np.column_stack([D1[:, j] if e is None else np.digitize(D1[:, j], e) for j, e in enumerate(bins)])
    cells, inv = np.unique(np.vstack([c0, c1]), axis=0, return_inverse=True)
    inv = np.asarray(inv).ravel()
    p0 = np.bincount(inv[: len(c0)], minlength=len(cells)) / len(c0)
    p1 = np.bincount(inv[len(c0):], minlength=len(cells)) / len(c1)
    return float(0.5 * np.abs(p0 - p1).sum())


@dataclass
class FairnessReport:
    accuracy: float
    dr: float
    dp: float
    eo: Optional[float]
    pqp: Optional[float]
    train_dr: Optional[float] = None
    data_fidelity: Optional[float] = None
    training_adjustment_rate: Optional[float] = None
    test_adjustment_necessity: bool = False
    n_modifications: Optional[int] = None
    dr_mode: str = PROBABILITY
    epsilon: Optional[float] = None

    def flags(self):
        """Per-metric ``metric <= epsilon`` pass flags (empty when no epsilon)."""
        if self.epsilon is None:
            return {}
        return {k: (v is not None and v <= self.epsilon) for k, v in
                (("dr", self.dr), ("dp", self.dp), ("eo", self.eo), ("pqp", self.pqp))}

    def as_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise ValueError(f"metric {k} is not finite")
        return d


def evaluate(f, X, A, y, mode: str = PROBABILITY, **extra) -> FairnessReport:
    """Compute the test-side metrics; EO/PQP are ``None`` when undefined on this split."""
    def safe(fn, *args):
        try:
            return fn(*args)
        except MetricUndefined:
            return None

    return FairnessReport(
        accuracy=accuracy(f, X, A, y),
        dr=dr_dataset(f, X, mode),
        dp=demographic_parity(f, X, A),
        eo=safe(equality_of_opportunity, f, X, A, y),
        pqp=safe(predictive_quality_parity, f, X, A, y),
        dr_mode=mode,
        **extra,
    )
