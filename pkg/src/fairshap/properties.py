"""Batch property checks over seeded synthetic instances.

Each suite returns a plain dict with ``passed``, counts and any failing
instances written out in full so they can be replayed.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import fairness as fm
from .augment import ABSOLUTE, FairshapConfig, fairshap_augment, theorem_c2_diagnostic
from .model import FunctionPredictor
from .shapley import EXACT, EstimatorConfig, dr_game, exact_shapley

SUITES = ("shapley_axioms", "theorem_d1", "theorem_d2", "theorem_c2_diagnostic")
TOL = 1e-9


def _result(suite, seed, n_cases, failures, **extra):
    return {"suite": suite, "seed": seed, "n_cases": n_cases, "n_failed": len(failures),
            "passed": not failures, "counterexamples": failures, **extra}


def _random_dr_instance(rng, d):
    """A nonlinear predictor with one dummy feature and one symmetric pair.

    Features ``d-2`` and ``d-1`` enter only through their sum and product and
    take equal values in every row, so they are interchangeable players.
    Feature 0 is never read.
    """
    w = rng.normal(size=d)
    u = rng.normal(size=d)
    w[0] = u[0] = 0.0
    w[-1] = w[-2]
    u[-1] = u[-2]
    c = rng.normal()
    inter = rng.normal()

    def fn(X, A):
        z = X @ w + (X @ u) * A + c * A + inter * X[:, -1] * X[:, -2] * (1 + A)
        return 1.0 / (1.0 + np.exp(-z))

    n, m = rng.integers(1, 6), rng.integers(1, 6)
    G = rng.normal(size=(n, d))
    H = rng.normal(size=(m, d))
    G[:, -1] = G[:, -2]
    H[:, -1] = H[:, -2]
    P = rng.random((n, m)) * (rng.random((n, m)) < 0.7)
    P[np.arange(n), rng.integers(m, size=n)] += 0.1
    return FunctionPredictor(fn), G, H, P / P.sum()


def shapley_axioms(seed: int = 0, n_games: int = 100, max_d: int = 8,
                   perturb: Optional[Callable] = None) -> dict:
    """Efficiency, dummy and symmetry of exact Shapley on random DR games.

    ``perturb(phi, phi0) -> (phi, phi0)`` corrupts the attribution before the
    checks; it exists so tests can confirm that violations are reported.
    """
    rng = np.random.default_rng(seed)
    failures = []
    worst = {"efficiency": 0.0, "dummy": 0.0, "symmetry": 0.0}
    for case in range(n_games):
        d = int(rng.integers(3, max_d + 1))
        f, G, H, P = _random_dr_instance(rng, d)
        i = int(rng.integers(len(G)))
        game = dr_game(f, G, H, P, i)
        phi, v0 = exact_shapley(game)
        phi0 = v0 + game.offset
        if perturb is not None:
            phi, phi0 = perturb(phi, phi0)
        dr = fm.dr_instance(f, G[i])
        errs = {"efficiency": abs(phi0 + phi.sum() - dr), "dummy": abs(phi[0]), "symmetry": abs(phi[-1] - phi[-2])}
        for k, v in errs.items():
            worst[k] = max(worst[k], float(v))
        bad = {k: float(v) for k, v in errs.items() if not v <= TOL}
        if bad:
            failures.append({"case": case, "d": d, "row": i, "violations": bad, "x": G[i].tolist(),
                             "other_group": H.tolist(), "plan": P.tolist(), "phi": phi.tolist(),
                             "phi0": float(phi0), "dr": float(dr)})
    return _result("shapley_axioms", seed, n_games, failures, worst=worst)


def _table_predictor(table):
    """Indicator predictor looking up ``table[code, a]`` where the code is the row's first column."""
    return FunctionPredictor(lambda X, A: table[X[:, 0].astype(int), A.astype(int)].astype(float))


def _exact_dp_dr(table, codes0, codes1):
    """DP and pooled DR as exact fractions."""
    p0 = Fraction(int(table[codes0, 0].sum()), len(codes0))
    p1 = Fraction(int(table[codes1, 1].sum()), len(codes1))
    pooled = np.concatenate([codes0, codes1])
    dr = Fraction(int(np.abs(table[pooled, 0] - table[pooled, 1]).sum()), len(pooled))
    return abs(p0 - p1), dr


def _exact_tv(codes0, codes1, n_codes):
    c0 = np.bincount(codes0, minlength=n_codes)
    c1 = np.bincount(codes1, minlength=n_codes)
    return sum((abs(Fraction(int(a), len(codes0)) - Fraction(int(b), len(codes1))) for a, b in zip(c0, c1)),
               Fraction(0)) / 2


def theorem_d1(seed: int = 0, n_cases: int = 50) -> dict:
    """DP <= DR when both groups carry the same non-sensitive sample."""
    rng = np.random.default_rng(seed)
    failures = []
    for case in range(n_cases):
        n_codes = int(rng.integers(2, 12))
        table = rng.integers(0, 2, size=(n_codes, 2))
        codes = rng.integers(n_codes, size=int(rng.integers(1, 40)))
        dp, dr = _exact_dp_dr(table, codes, codes)
        f = _table_predictor(table)
        X = np.concatenate([codes, codes])[:, None].astype(float)
        A = np.r_[np.zeros(len(codes), int), np.ones(len(codes), int)]
        dp_f, dr_f = fm.demographic_parity(f, X, A), fm.dr_dataset(f, X)
        agree = abs(dp_f - float(dp)) <= 1e-12 and abs(dr_f - float(dr)) <= 1e-12
        if not (dp <= dr and agree):
            failures.append({"case": case, "table": table.tolist(), "codes": codes.tolist(),
                             "dp": str(dp), "dr": str(dr), "dp_float": dp_f, "dr_float": dr_f})
    return _result("theorem_d1", seed, n_cases, failures)


def theorem_d2(seed: int = 0, n_cases: int = 50) -> dict:
    """DP <= DR + TV for arbitrary discrete group samples."""
    rng = np.random.default_rng(seed)
    failures = []
    for case in range(n_cases):
        n_codes = int(rng.integers(2, 12))
        table = rng.integers(0, 2, size=(n_codes, 2))
        c0 = rng.integers(n_codes, size=int(rng.integers(1, 40)))
        c1 = rng.integers(n_codes, size=int(rng.integers(1, 40)))
        dp, dr = _exact_dp_dr(table, c0, c1)
        tv = _exact_tv(c0, c1, n_codes)
        f = _table_predictor(table)
        X = np.concatenate([c0, c1])[:, None].astype(float)
        A = np.r_[np.zeros(len(c0), int), np.ones(len(c1), int)]
        tv_f = fm.tv_distance_discrete(c0[:, None], c1[:, None])
        agree = (abs(fm.demographic_parity(f, X, A) - float(dp)) <= 1e-12
                 and abs(fm.dr_dataset(f, X) - float(dr)) <= 1e-12 and abs(tv_f - float(tv)) <= 1e-12)
        if not (dp <= dr + tv and agree):
            failures.append({"case": case, "table": table.tolist(), "codes0": c0.tolist(), "codes1": c1.tolist(),
                             "dp": str(dp), "dr": str(dr), "tv": str(tv)})
    return _result("theorem_d2", seed, n_cases, failures)


def theorem_c2_suite(seed: int = 0, n_cases: int = 20, threshold: float = 0.05) -> dict:
    """Partial-replacement gap statistics (reported, never failing) plus the
    grand-coalition identity, which must hold to 1e-9 under exact Shapley."""
    rng = np.random.default_rng(seed)
    failures, gaps = [], []
    cfg = FairshapConfig(threshold=threshold, threshold_mode=ABSOLUTE, estimator=EstimatorConfig(estimator=EXACT))
    for case in range(n_cases):
        d = int(rng.integers(3, 7))
        f, G, H, _ = _random_dr_instance(rng, d)
        X = np.vstack([G, H])
        A = np.r_[np.zeros(len(G), int), np.ones(len(H), int)]
        _, log = fairshap_augment(X, A, f, cfg)
        diag = theorem_c2_diagnostic(f, X, A, log, None, cfg)
        if diag["gap"]["n"]:
            gaps.append(diag["gap"]["mean"])
        errs = [diag["grand_identity_error"], diag["grand_swap_error"] or 0.0]
        if not max(errs) <= TOL:
            failures.append({"case": case, "X": X.tolist(), "A": A.tolist(), "diagnostic": diag})
    return _result("theorem_c2_diagnostic", seed, n_cases, failures,
                   gap_mean_over_cases=float(np.mean(gaps)) if gaps else None, cases_with_edits=len(gaps))


def run_property_suite(suite: str, seed: int = 0, **kwargs) -> dict:
    if suite == "shapley_axioms":
        return shapley_axioms(seed, **kwargs)
    if suite == "theorem_d1":
        return theorem_d1(seed, **kwargs)
    if suite == "theorem_d2":
        return theorem_d2(seed, **kwargs)
    if suite == "theorem_c2_diagnostic":
        return theorem_c2_suite(seed, **kwargs)
    raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
