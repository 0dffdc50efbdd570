"""Cross-group instance matching.

Both matchers return a joint probability matrix ``P`` (n x m, total mass 1)
over pairs (row of the target group, row of the other group). Distances are
squared Euclidean on the encoded non-sensitive features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

NEAREST_NEIGHBOUR = "NearestNeighbour"
OPTIMAL_TRANSPORT = "OptimalTransport"


class MatchingError(ValueError):
    pass


@dataclass
class MatchingPlan:
    plan: np.ndarray
    method: str
    metric: str = "sqeuclidean"
    n_iter: int = 0
    marginal_error: float = 0.0
    converged: bool = True
    objective_history: List[float] = field(default_factory=list)

    @property
    def shape(self):
        return self.plan.shape

    def row_marginal(self):
        return self.plan.sum(axis=1)

    def column_marginal(self):
        return self.plan.sum(axis=0)

    def to_csv(self, path, tol: float = 0.0) -> None:
        """Write (i, j, mass) triplets for entries with mass > ``tol``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "mass"])
            for i, j in zip(*np.nonzero(self.plan > tol)):
                w.writerow([int(i), int(j), repr(float(self.plan[i, j]))])


def _check_groups(G, G_other):
    G = np.atleast_2d(np.asarray(G, dtype=float))
    H = np.atleast_2d(np.asarray(G_other, dtype=float))
    if G.shape[0] < 1 or H.shape[0] < 1:
        raise MatchingError("both groups need at least one row")
    if G.shape[1] != H.shape[1]:
        raise MatchingError(f"feature dimension mismatch: {G.shape[1]} vs {H.shape[1]}")
    if not (np.isfinite(G).all() and np.isfinite(H).all()):
        raise MatchingError("non-finite feature values")
    return G, H


def cost_matrix(G, G_other) -> np.ndarray:
    G, H = _check_groups(G, G_other)
    return cdist(G, H, metric="sqeuclidean")


def nearest_neighbor_match(G, G_other) -> MatchingPlan:
    """Each target row puts mass 1/n on its nearest other-group row (lowest index on ties)."""
    C = cost_matrix(G, G_other)
    n = C.shape[0]
    j = np.argmin(C, axis=1)
    P = np.zeros_like(C)
    P[np.arange(n), j] = 1.0 / n
    return MatchingPlan(P, NEAREST_NEIGHBOUR)


# Sinkhorn sweeps before switching to Newton steps on the same dual
NEWTON_AFTER = 200
MAX_LOG_STEP = 10.0


def _dual(u, v, K, a, b):
    """Entropic dual in units of the regularization, and the plan's log-density."""
    logP = K + u[:, None] + v[None, :]
    return a @ u + b @ v - np.exp(logsumexp(logP)), logP


def _newton_step(u, v, K, a, b):
    """One damped Newton ascent step on the entropic dual.

    The negated Hessian is positive semidefinite and nearly singular when the
    plan splits into weakly connected blocks; a small ridge keeps the step an
    ascent direction, and backtracking keeps the dual nondecreasing.
    """
    n, m = len(u), len(v)
    val, logP = _dual(u, v, K, a, b)
    P = np.exp(logP)
    r, c = P.sum(axis=1), P.sum(axis=0)
    grad = np.concatenate([a - r, b - c])
    M = np.zeros((n + m, n + m))
    M[:n, :n] = np.diag(r)
    M[n:, n:] = np.diag(c)
    M[:n, n:] = P
    M[n:, :n] = P.T
    M[np.diag_indices(n + m)] += 1e-10 * max(r.max(), c.max())
    d = np.linalg.solve(M, grad)
    slope = grad @ d
    # a nearly disconnected plan makes the Hessian nearly singular; cap the step in log space
    t = min(1.0, MAX_LOG_STEP / max(np.max(np.abs(d)), 1e-300))
    for _ in range(60):
        nu, nv = u + t * d[:n], v + t * d[n:]
        with np.errstate(over="ignore"):
            new_val, _ = _dual(nu, nv, K, a, b)
        if np.isfinite(new_val) and new_val >= val + 1e-4 * t * slope:
            return nu, nv
        t *= 0.5
    return u, v


def sinkhorn_ot_match(G, G_other, epsilon: float = 0.05, max_iters: int = 10000, tol: float = 1e-6,
                      relative: bool = True) -> MatchingPlan:
    """Entropic OT with uniform marginals, solved in the log domain.

    Parameters
    ----------
    epsilon : float
        Entropic regularization. With ``relative=True`` it is multiplied by
        the mean of the cost matrix.
    tol : float
        Stop once the L-inf violation of both marginals is below ``tol``.

    The first ``NEWTON_AFTER`` iterations are Sinkhorn sweeps. Sinkhorn
    converges only linearly and crawls when the plan is close to sparse,
    so any remaining iterations are damped Newton steps on the same dual,
    which converge quadratically to the same plan. Both are ascent steps,
    so ``objective_history`` (the negated dual after each iteration) is
    nonincreasing.
    """
    if not epsilon > 0:
        raise MatchingError("epsilon must be positive")
    C = cost_matrix(G, G_other)
    n, m = C.shape
    scale = C.mean() if relative and C.mean() > 0 else 1.0
    reg = epsilon * scale
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    log_a, log_b = np.log(a), np.log(b)
    K = -C / reg
    u = np.zeros(n)
    v = np.zeros(m)
    history = []
    best = (np.inf, u, v)
    it = 0
    row_lse = logsumexp(K, axis=1)
    for it in range(1, max_iters + 1):
        if it <= NEWTON_AFTER:
            u = log_a - row_lse
            v = log_b - logsumexp(K + u[:, None], axis=0)
            row_lse = logsumexp(K + v[None, :], axis=1)
            # columns are exact after the v update, so the plan has unit mass
            history.append(-reg * (a @ u + b @ v - 1.0))
            err = np.max(np.abs(np.exp(u + row_lse) - a))
        else:
            u, v = _newton_step(u, v, K, a, b)
            val, logP = _dual(u, v, K, a, b)
            history.append(-reg * val)
            err = max(np.max(np.abs(np.exp(logsumexp(logP, axis=1)) - a)),
                      np.max(np.abs(np.exp(logsumexp(logP, axis=0)) - b)))
        if err < best[0]:
            best = (err, u.copy(), v.copy())
        if err <= tol:
            break
    err, u, v = best
    P = np.exp(K + u[:, None] + v[None, :])
    if not np.isfinite(P).all() or np.any(P.sum(axis=1) <= 0):
        raise MatchingError("Sinkhorn plan underflowed; increase epsilon")
    return MatchingPlan(P, OPTIMAL_TRANSPORT, n_iter=it, marginal_error=float(err),
                        converged=bool(err <= tol), objective_history=history)


def match(G, G_other, method: str = NEAREST_NEIGHBOUR, **kwargs) -> MatchingPlan:
    if method == NEAREST_NEIGHBOUR:
        return nearest_neighbor_match(G, G_other)
    if method == OPTIMAL_TRANSPORT:
        return sinkhorn_ot_match(G, G_other, **kwargs)
    raise MatchingError(f"unknown matching method {method!r}")


@dataclass
class ReferenceSet:
    rows: np.ndarray
    source_index: np.ndarray


def build_reference(plan: MatchingPlan, other_group) -> ReferenceSet:
    """Row i of the reference is the other-group row with the largest plan mass (first on ties)."""
    H = np.asarray(other_group)
    P = plan.plan if isinstance(plan, MatchingPlan) else np.asarray(plan)
    if P.shape[1] != H.shape[0]:
        raise MatchingError(f"plan has {P.shape[1]} columns for {H.shape[0]} reference rows")
    j = np.argmax(P, axis=1)
    return ReferenceSet(H[j].copy(), j)


def conditional_row(plan: MatchingPlan, i: int) -> np.ndarray:
    P = plan.plan if isinstance(plan, MatchingPlan) else np.asarray(plan)
    row = P[i]
    s = row.sum()
    if not s > 0:
        raise MatchingError(f"row {i} of the plan has no mass")
    return row / s
