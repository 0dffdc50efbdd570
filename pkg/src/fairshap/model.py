"""Predictors taking (encoded features, sensitive value) to a probability.

The sensitive value ``A`` is appended to the encoded block as one raw 0/1
input column, so every predictor can be queried with either value of ``A``
for the same non-sensitive features.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional

import numba
import numpy as np
from scipy.special import expit

LOGISTIC = "logistic"
BOOSTED_STUMPS = "boosted_stumps"
BOOSTED_TREES = "boosted_trees"
MODEL_KINDS = (LOGISTIC, BOOSTED_STUMPS, BOOSTED_TREES)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = LOGISTIC
    learning_rate: float = 0.5
    iterations: int = 3000
    l2_penalty: float = 1e-3
    tree_count: int = 100
    max_depth: int = 1
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    max_bin: int = 256
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.tree_count < 0:
            raise ValueError("tree_count must be >= 0")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be nonnegative")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.model_kind == BOOSTED_STUMPS and self.max_depth != 1:
            raise ValueError("boosted_stumps requires max_depth=1")
        if self.max_bin < 2:
            raise ValueError("max_bin must be >= 2")


def _with_sensitive(X, A):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.broadcast_to(np.asarray(A, dtype=float), (X.shape[0],))
    return np.column_stack([X, A])


class Predictor:
    """f(x, A) -> probability in [0, 1]."""

    kind = "abstract"
    seed: Optional[int] = None

    def predict_proba(self, X, A) -> np.ndarray:
        raise NotImplementedError

    def predict_probability(self, x, a) -> float:
        return float(self.predict_proba(np.asarray(x, dtype=float)[None, :], a)[0])

    def predict_label(self, X, A, threshold: float = 0.5) -> np.ndarray:
        return predict_label(self, X, A, threshold)


def predict_label(p: Predictor, X, A, threshold: float = 0.5) -> np.ndarray:
    """Hard labels: 1 iff the predicted probability is >= ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return (p.predict_proba(X, A) >= threshold).astype(int)


class FunctionPredictor(Predictor):
    """Wraps ``fn(X, A) -> probabilities``; handy for constructed test models."""

    kind = "function"

    def __init__(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        self.fn = fn

    def predict_proba(self, X, A):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = np.broadcast_to(np.asarray(A, dtype=float), (X.shape[0],))
        return np.clip(np.asarray(self.fn(X, A), dtype=float), 0.0, 1.0)


class LogisticModel(Predictor):
    kind = LOGISTIC

    def __init__(self, weights, bias: float, seed: int = 0, config: Optional[TrainConfig] = None):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = float(bias)
        self.seed = seed
        self.config = config or TrainConfig(seed=seed)

    def decision_function(self, X, A):
        return _with_sensitive(X, A) @ self.weights + self.bias

    def predict_proba(self, X, A):
        return expit(self.decision_function(X, A))

    def __repr__(self):
        return f"LogisticModel(d={len(self.weights) - 1}, w_A={self.weights[-1]:.4f})"


def logistic_loss_and_grad(params, Z, y, l2):
    """Mean log-loss plus ``l2/2 * ||w||^2`` (bias unpenalized) and its gradient.

    ``params`` is the weight vector followed by the bias.
    """
    w, b = params[:-1], params[-1]
    s = Z @ w + b
    # log(1 + exp(s)) - y*s, stably
    loss = np.mean(np.logaddexp(0.0, s) - y * s) + 0.5 * l2 * (w @ w)
    r = expit(s) - y
    gw = Z.T @ r / len(y) + l2 * w
    gb = np.mean(r)
    return loss, np.append(gw, gb)


def _check_xy(X, y):
    y = np.asarray(y)
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)} entries")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ValueError("both classes present is required for training")
    return y.astype(float)


def train_logistic(X, A, y, cfg: Optional[TrainConfig] = None) -> LogisticModel:
    """Full-batch gradient descent on L2-regularized log-loss.

    Starts from zero weights, so the fit is a deterministic function of the
    data and config; stops once the gradient norm drops below ``cfg.tol``.
    """
    cfg = cfg or TrainConfig()
    Z = _with_sensitive(X, A)
    y = _check_xy(Z, y)
    params = np.zeros(Z.shape[1] + 1)
    for it in range(cfg.iterations):
        loss, g = logistic_loss_and_grad(params, Z, y, cfg.l2_penalty)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        if np.linalg.norm(g) < cfg.tol:
            break
        params -= cfg.learning_rate * g
    return LogisticModel(params[:-1], params[-1], seed=cfg.seed, config=cfg)


class BoostedTrees(Predictor):
    """Additive ensemble of depth-limited regression trees on the log-odds scale.

    Trees are stored as complete binary trees in heap order: internal node
    ``t`` sends ``x`` left when ``x[feature] <= threshold`` and an internal
    node that did not split has threshold ``+inf``. Leaves (the last
    ``2**depth`` slots) hold already-shrunken scores.
    """

    kind = BOOSTED_TREES

    def __init__(self, base_score, depth, features, thresholds, leaves, seed=0, config=None, loss_history=None):
        self.base_score = float(base_score)
        self.depth = int(depth)
        n_int = 2**self.depth - 1
        self.features = np.asarray(features, dtype=int).reshape(-1, n_int)
        self.thresholds = np.asarray(thresholds, dtype=float).reshape(-1, n_int)
        self.leaves = np.asarray(leaves, dtype=float).reshape(-1, 2**self.depth)
        self.seed = seed
        self.config = config or TrainConfig(model_kind=BOOSTED_TREES, max_depth=self.depth, seed=seed)
        self.kind = self.config.model_kind
        self.loss_history = list(loss_history or [])

    @property
    def n_trees(self):
        return len(self.leaves)

    def decision_function(self, X, A):
        Z = np.ascontiguousarray(_with_sensitive(X, A))
        return _tree_scores(Z, self.features, self.thresholds, self.leaves, self.depth, self.base_score)

    def predict_proba(self, X, A):
        return expit(self.decision_function(X, A))

    def __repr__(self):
        return f"BoostedTrees(n_trees={self.n_trees}, depth={self.depth})"


BoostedStumps = BoostedTrees

if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "workqueue"


@numba.njit(cache=True, parallel=True)
def _tree_scores(Z, features, thresholds, leaves, depth, base):
    n = Z.shape[0]
    out = np.full(n, base)
    n_int = 2**depth - 1
    for i in numba.prange(n):
        acc = base
        for t in range(features.shape[0]):
            node = 0
            for _ in range(depth):
                if Z[i, features[t, node]] > thresholds[t, node]:
                    node = 2 * node + 2
                else:
                    node = 2 * node + 1
            acc += leaves[t, node - n_int]
        out[i] = acc
    return out


def _mean_logloss(F, y):
    return float(np.mean(np.logaddexp(0.0, F) - y * F))


def _bin_features(Z, max_bin):
    """Per-column split candidates and bin codes, ``x <= cuts[b]`` iff ``code <= b``."""
    cuts, codes = [], np.empty(Z.shape, dtype=np.int64)
    for j in range(Z.shape[1]):
        u = np.unique(Z[:, j])
        if len(u) <= max_bin:
            c = 0.5 * (u[:-1] + u[1:])
        else:
            c = np.unique(np.quantile(Z[:, j], np.linspace(0, 1, max_bin + 1)[1:-1]))
        cuts.append(c)
        codes[:, j] = np.searchsorted(c, Z[:, j], side="left")
    return cuts, codes


def _grow_tree(codes, cuts, offsets, n_bins, grad, hess, depth, lam, min_child_weight):
    """Level-wise exact-on-bins tree growth; returns heap-ordered arrays and leaf index per row."""
    n, d = codes.shape
    n_int = 2**depth - 1
    feat = np.zeros(n_int, dtype=np.int64)
    thr = np.full(n_int, np.inf)
    cutbin = np.full(n_int, np.iinfo(np.int64).max)
    node = np.zeros(n, dtype=np.int64)
    flat = codes + offsets[None, :]
    seg_start = np.repeat(offsets, n_bins)
    last_in_seg = np.zeros(offsets[-1] + n_bins[-1], dtype=bool)
    last_in_seg[offsets + n_bins - 1] = True
    feat_of_bin = np.repeat(np.arange(d), n_bins)
    total = len(last_in_seg)
    for level in range(depth):
        first = 2**level - 1
        width = 2**level
        local = node - first
        key = (local[:, None] * total + flat).ravel()
        Hg = np.bincount(key, weights=np.repeat(grad, d), minlength=width * total).reshape(width, total)
        Hh = np.bincount(key, weights=np.repeat(hess, d), minlength=width * total).reshape(width, total)
        Gn = np.bincount(local, weights=grad, minlength=width)
        Hn = np.bincount(local, weights=hess, minlength=width)
        cg, ch = np.cumsum(Hg, axis=1), np.cumsum(Hh, axis=1)
        base_g = np.where(seg_start > 0, cg[:, np.maximum(seg_start - 1, 0)], 0.0)
        base_h = np.where(seg_start > 0, ch[:, np.maximum(seg_start - 1, 0)], 0.0)
        GL, HL = cg - base_g, ch - base_h
        GR, HR = Gn[:, None] - GL, Hn[:, None] - HL
        with np.errstate(divide="ignore", invalid="ignore"):  # empty bins with lambda=0; masked below
            gain = GL**2 / (HL + lam) + GR**2 / (HR + lam) - (Gn**2 / (Hn + lam))[:, None]
        ok = (~last_in_seg)[None, :] & (HL >= min_child_weight) & (HR >= min_child_weight) & (gain > 1e-12)
        gain = np.where(ok, gain, -np.inf)
        best = np.argmax(gain, axis=1)
        for w in range(width):
            b = best[w]
            if np.isfinite(gain[w, b]):
                f = feat_of_bin[b]
                feat[first + w] = f
                cutbin[first + w] = b - offsets[f]
                thr[first + w] = cuts[f][b - offsets[f]]
        node = 2 * node + 1 + (codes[np.arange(n), feat[node]] > cutbin[node])
    leaf = node - n_int
    return feat, thr, leaf


def train_boosted_trees(X, A, y, cfg: Optional[TrainConfig] = None) -> BoostedTrees:
    """Second-order gradient boosting of depth-limited trees on log-loss.

    Split search runs on per-column bins (at most ``cfg.max_bin`` per
    column; exact when a column has fewer distinct values). Leaf values are
    Newton steps ``-G / (H + lambda)`` shrunk by the learning rate. A round
    that would raise the training loss has its step halved until it does
    not, keeping the loss sequence nonincreasing.
    """
    cfg = cfg or TrainConfig(model_kind=BOOSTED_STUMPS)
    Z = _with_sensitive(X, A)
    y = _check_xy(Z, y)
    depth = cfg.max_depth
    lam = cfg.reg_lambda
    p0 = y.mean()
    base = float(np.log(p0 / (1 - p0)))
    F = np.full(len(y), base)
    cuts, codes = _bin_features(Z, cfg.max_bin)
    n_bins = np.array([len(c) + 1 for c in cuts])
    offsets = np.concatenate([[0], np.cumsum(n_bins)[:-1]])
    feats, thrs, leaves = [], [], []
    history = [_mean_logloss(F, y)]
    for it in range(cfg.tree_count):
        p = expit(F)
        grad, hess = p - y, p * (1 - p)
        feat, thr, leaf = _grow_tree(codes, cuts, offsets, n_bins, grad, hess, depth, lam, cfg.min_child_weight)
        G = np.bincount(leaf, weights=grad, minlength=2**depth)
        H = np.bincount(leaf, weights=hess, minlength=2**depth)
        values = -G / (H + lam)
        step = cfg.learning_rate
        while True:
            loss = _mean_logloss(F + step * values[leaf], y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at iteration {it}")
            if loss <= history[-1] or step < 1e-8:
                break
            step *= 0.5
        if loss > history[-1]:
            break
        F = F + step * values[leaf]
        history.append(loss)
        feats.append(feat)
        thrs.append(thr)
        leaves.append(step * values)
    return BoostedTrees(base, depth, np.array(feats, dtype=int), np.array(thrs), np.array(leaves),
                        seed=cfg.seed, config=cfg, loss_history=history)


def train_boosted_stumps(X, A, y, cfg: Optional[TrainConfig] = None) -> BoostedTrees:
    """Boosting with depth-1 trees (stumps)."""
    cfg = cfg or TrainConfig(model_kind=BOOSTED_STUMPS)
    if cfg.model_kind != BOOSTED_STUMPS or cfg.max_depth != 1:
        cfg = replace(cfg, model_kind=BOOSTED_STUMPS, max_depth=1)
    return train_boosted_trees(X, A, y, cfg)


def train(X, A, y, cfg: Optional[TrainConfig] = None) -> Predictor:
    cfg = cfg or TrainConfig()
    if cfg.model_kind == LOGISTIC:
        return train_logistic(X, A, y, cfg)
    if cfg.model_kind == BOOSTED_STUMPS:
        return train_boosted_stumps(X, A, y, cfg)
    return train_boosted_trees(X, A, y, cfg)


# ---------------------------------------------------------------------------
# persistence: flat "key = value" lines, floats written with repr (round-trips exactly)


def _fmt(v) -> str:
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(x)) if v.dtype.kind == "f" else str(int(x)) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dumps_model(model: Predictor) -> str:
    cfg = asdict(model.config)
    lines = [f"kind = {model.kind}"] + [f"config.{k} = {_fmt(v)}" for k, v in cfg.items()]
    if isinstance(model, LogisticModel):
        lines += [f"bias = {_fmt(model.bias)}", f"weights = {_fmt(model.weights)}"]
    elif isinstance(model, BoostedTrees):
        lines += [
            f"base_score = {_fmt(model.base_score)}",
            f"depth = {model.depth}",
            f"features = {_fmt(model.features.ravel())}",
            f"thresholds = {_fmt(model.thresholds.ravel())}",
            f"leaves = {_fmt(model.leaves.ravel())}",
        ]
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> Predictor:
    kv = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            kv[k.strip()] = v.strip()
    cfg_fields = {}
    for name, f in TrainConfig.__dataclass_fields__.items():
        raw = kv[f"config.{name}"]
        cfg_fields[name] = raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw))
    cfg = TrainConfig(**cfg_fields)

    def arr(key, dtype=float):
        return np.array(kv[key].split(), dtype=dtype) if kv[key] else np.array([], dtype=dtype)

    if kv["kind"] == LOGISTIC:
        return LogisticModel(arr("weights"), float(kv["bias"]), seed=cfg.seed, config=cfg)
    if kv["kind"] in (BOOSTED_STUMPS, BOOSTED_TREES):
        return BoostedTrees(float(kv["base_score"]), int(kv["depth"]), arr("features", int),
                            arr("thresholds"), arr("leaves"), seed=cfg.seed, config=cfg)
    raise ValueError(f"unknown model kind {kv['kind']!r}")


def save_model(model: Predictor, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> Predictor:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())
