"""Independent reference implementations used by the tests."""

import itertools
import math

import numpy as np
from scipy.optimize import linprog


def brute_force_nn(G, H):
    """Index of the nearest row of H for every row of G, scanning pairs in order."""
    out = []
    for g in G:
        best, arg = math.inf, -1
        for j, h in enumerate(H):
            dist = sum((x - y) ** 2 for x, y in zip(g, h))
            if dist < best:
                best, arg = dist, j
        out.append(arg)
    return np.array(out)


def exact_ot_cost(C):
    """Optimal transport cost with uniform marginals, solved as an LP."""
    n, m = C.shape
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1
    for j in range(m):
        A_eq[n + j, j::m] = 1
    b = np.r_[np.full(n, 1 / n), np.full(m, 1 / m)]
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b, bounds=(0, None), method="highs")
    return res.fun


def w1_lp(a, b):
    """1-D W1 between two empirical samples via the transport LP."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return exact_ot_cost(np.abs(a[:, None] - b[None, :]))


def permutation_shapley(value, p):
    """Shapley values by averaging marginal contributions over all p! orderings."""
    phi = np.zeros(p)
    count = 0
    for order in itertools.permutations(range(p)):
        S = set()
        prev = value(frozenset(S))
        for k in order:
            S.add(k)
            cur = value(frozenset(S))
            phi[k] += cur - prev
            prev = cur
        count += 1
    return phi / count
