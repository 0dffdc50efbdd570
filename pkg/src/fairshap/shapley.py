"""Shapley attribution over feature coalitions.

Players are raw features. A categorical feature owns its whole one-hot
block, so a coalition swaps the block in or out atomically. The sensitive
attribute is never a player.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fairness import PROBABILITY, dr_values
from .matching import MatchingPlan, conditional_row

D_MAX_EXACT = 14
EXACT = "exact"
PERMUTATION = "permutation"
AUTO = "auto"


class ShapleyError(ValueError):
    pass


def _as_groups(groups, d):
    if groups is None:
        return tuple(np.array([k]) for k in range(d))
    return tuple(np.asarray(g, dtype=int) for g in groups)


def _expand(masks, groups, n_cols):
    """Player masks (B x p) -> encoded-column masks (B x n_cols)."""
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    out = np.zeros((masks.shape[0], n_cols), dtype=bool)
    for k, g in enumerate(groups):
        out[:, g] = masks[:, [k]]
    return out


class CoalitionGame:
    """v(S) for S given as boolean player masks; subclasses implement :meth:`values`."""

    kind = "abstract"
    n_players: int

    def values(self, masks) -> np.ndarray:
        raise NotImplementedError

    def value(self, S) -> float:
        S = np.asarray(S)
        if S.dtype != bool:
            mask = np.zeros(self.n_players, dtype=bool)
            mask[S.astype(int)] = True
            S = mask
        return float(self.values(S[None, :])[0])


class TableGame(CoalitionGame):
    """Game given by a value table indexed by coalition bitmask (bit k = player k)."""

    kind = "table"

    def __init__(self, table, n_players):
        self.table = np.asarray(table, dtype=float)
        self.n_players = n_players
        if len(self.table) != 2**n_players:
            raise ShapleyError("table must have 2**n_players entries")
        self._bits = 1 << np.arange(n_players)

    def values(self, masks):
        masks = np.atleast_2d(np.asarray(masks, dtype=bool))
        return self.table[masks.astype(np.int64) @ self._bits]


class BaselineGame(CoalitionGame):
    """v(S) = f(x_S; r_rest) - f(r), both evaluated at the instance's own A."""

    kind = "baseline"

    def __init__(self, f, x, r, a, groups=None):
        self.f, self.x, self.r, self.a = f, np.asarray(x, float), np.asarray(r, float), a
        if self.x.shape != self.r.shape:
            raise ShapleyError("instance and reference differ in dimension")
        self.groups = _as_groups(groups, len(self.x))
        self.n_players = len(self.groups)
        self._base = float(f.predict_proba(self.r[None, :], a)[0])

    def values(self, masks):
        m = _expand(masks, self.groups, len(self.x))
        Z = np.where(m, self.x, self.r)
        return self.f.predict_proba(Z, self.a) - self._base


class RandomBaselineGame(CoalitionGame):
    """v(S) = E_{x'~D}[f(x_S; x'_rest)] - E_{x'~D}[f(x')] over a reference sample."""

    kind = "random_baseline"

    def __init__(self, f, x, reference, a, groups=None, sample_cap: int = 100, seed: int = 0):
        R = np.atleast_2d(np.asarray(reference, float))
        if len(R) == 0:
            raise ShapleyError("reference sample is empty")
        if len(R) > sample_cap:
            R = R[np.sort(np.random.default_rng(seed).choice(len(R), sample_cap, replace=False))]
        self.f, self.x, self.R, self.a = f, np.asarray(x, float), R, a
        self.groups = _as_groups(groups, len(self.x))
        self.n_players = len(self.groups)
        self._base = float(np.mean(f.predict_proba(R, a)))

    def values(self, masks):
        m = _expand(masks, self.groups, len(self.x))
        B, k = m.shape[0], len(self.R)
        Z = np.where(m[:, None, :], self.x[None, None, :], self.R[None, :, :]).reshape(B * k, -1)
        return self.f.predict_proba(Z, self.a).reshape(B, k).mean(axis=1) - self._base


class DRGame(CoalitionGame):
    """Discriminative-risk game of one target row against its matched references.

    v(S) = sum_j w_j DR(x_S; ref_j,rest) - offset, where ``w`` is the target
    row's conditional matching distribution and ``offset`` is the DR of the
    other group averaged under the plan's column marginal.
    """

    kind = "dr_game"

    def __init__(self, f, x, atoms, weights, offset: float = 0.0, groups=None, mode: str = PROBABILITY):
        self.f = f
        self.x = np.asarray(x, float)
        self.atoms = np.atleast_2d(np.asarray(atoms, float))
        self.weights = np.asarray(weights, float)
        self.offset = float(offset)
        self.mode = mode
        self.groups = _as_groups(groups, len(self.x))
        self.n_players = len(self.groups)

    def values(self, masks):
        m = _expand(masks, self.groups, len(self.x))
        B, k = m.shape[0], len(self.atoms)
        Z = np.where(m[:, None, :], self.x[None, None, :], self.atoms[None, :, :]).reshape(B * k, -1)
        dr = dr_values(self.f, Z, self.mode).reshape(B, k)
        return dr @ self.weights - self.offset


def _all_masks(p):
    codes = np.arange(2**p, dtype=np.int64)
    return ((codes[:, None] >> np.arange(p)) & 1).astype(bool)


def exact_shapley(game: CoalitionGame, max_players: int = D_MAX_EXACT):
    """Exact Shapley values by the subset-weighted sum over all 2^p coalitions.

    Returns ``(phi, phi0)`` with ``phi0 = v(empty set)``.
    """
    p = game.n_players
    if p > max_players:
        raise ShapleyError(f"{p} players exceed the exact limit of {max_players}; use sampled_shapley")
    masks = _all_masks(p)
    v = np.asarray(game.values(masks), dtype=float)
    sizes = masks.sum(axis=1)
    w = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])
    codes = np.arange(2**p, dtype=np.int64)
    phi = np.empty(p)
    for k in range(p):
        without = codes[(codes >> k) & 1 == 0]
        phi[k] = np.sum(w[sizes[without]] * (v[without | (1 << k)] - v[without]))
    return phi, float(v[0])


def sampled_shapley(game: CoalitionGame, n_permutations: int = 200, seed=0):
    """Permutation-sampling Shapley estimate.

    Returns ``(phi, phi0, stderr)``; ``stderr`` is the Monte Carlo standard
    error of each feature's mean marginal contribution (zero when only one
    permutation is drawn).
    """
    if n_permutations < 1:
        raise ShapleyError("n_permutations must be >= 1")
    p = game.n_players
    rng = np.random.default_rng(seed)
    perms = np.array([rng.permutation(p) for _ in range(n_permutations)]).reshape(n_permutations, p)
    # prefix masks: row t of permutation r holds the first t players
    rank = np.empty_like(perms)
    rank[np.arange(n_permutations)[:, None], perms] = np.arange(p)[None, :]
    masks = rank[:, None, :] < np.arange(p + 1)[None, :, None]
    v = np.asarray(game.values(masks.reshape(-1, p)), dtype=float).reshape(n_permutations, p + 1)
    steps = np.diff(v, axis=1)
    contrib = np.empty((n_permutations, p))
    contrib[np.arange(n_permutations)[:, None], perms] = steps
    phi = contrib.mean(axis=0)
    if n_permutations > 1:
        stderr = contrib.std(axis=0, ddof=1) / np.sqrt(n_permutations)
    else:
        stderr = np.zeros(p)
    return phi, float(v[0, 0]), stderr


@dataclass(frozen=True)
class EstimatorConfig:
    estimator: str = AUTO
    n_permutations: int = 200
    seed: int = 0
    max_exact: int = D_MAX_EXACT
    max_atoms: Optional[int] = None

    def resolve(self, n_players: int) -> str:
        if self.estimator == AUTO:
            return EXACT if n_players <= self.max_exact else PERMUTATION
        if self.estimator not in (EXACT, PERMUTATION):
            raise ShapleyError(f"unknown estimator {self.estimator!r}")
        return self.estimator


@dataclass
class ShapleyAttribution:
    """Per-row, per-raw-feature attributions of the DR game.

    ``phi0`` is the expected DR of the matched reference rows, so that
    ``phi0 + phi.sum(1)`` equals each target row's own DR. The game's
    ``v(empty set)`` is ``phi0 - offset``.
    """

    phi: np.ndarray
    phi0: np.ndarray
    estimator: str
    n_permutations: int
    seed: int
    offset: float = 0.0
    stderr: Optional[np.ndarray] = None
    feature_names: Sequence[str] = field(default_factory=tuple)

    def broadcast(self, groups, n_cols: int) -> np.ndarray:
        """Copy each raw feature's value onto all of its encoded columns."""
        out = np.zeros((self.phi.shape[0], n_cols))
        for k, g in enumerate(groups):
            out[:, np.asarray(g)] = self.phi[:, [k]]
        return out

    def to_csv(self, path, row_ids=None) -> None:
        names = list(self.feature_names) or [f"f{k}" for k in range(self.phi.shape[1])]
        ids = np.arange(len(self.phi)) if row_ids is None else np.asarray(row_ids)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "raw_feature", "phi"])
            for i, rid in enumerate(ids):
                for k, name in enumerate(names):
                    w.writerow([int(rid), name, repr(float(self.phi[i, k]))])


def dr_offset(f, G_other, plan: MatchingPlan, mode: str = PROBABILITY) -> float:
    """Second term of the DR game: reference DR under the plan's column marginal."""
    P = plan.plan if isinstance(plan, MatchingPlan) else np.asarray(plan)
    return float(P.sum(axis=0) @ dr_values(f, G_other, mode))


def dr_game(f, G, G_other, plan: MatchingPlan, i: int, groups=None, mode: str = PROBABILITY,
            offset: Optional[float] = None, max_atoms: Optional[int] = None) -> DRGame:
    """Build the DR game for target row ``i``."""
    G_other = np.asarray(G_other, float)
    w = conditional_row(plan, i)
    idx = np.flatnonzero(w > 0)
    if max_atoms is not None and len(idx) > max_atoms:
        idx = idx[np.argsort(-w[idx], kind="stable")[:max_atoms]]
        idx.sort()
    wi = w[idx] / w[idx].sum()
    if offset is None:
        offset = dr_offset(f, G_other, plan, mode)
    return DRGame(f, np.asarray(G, float)[i], G_other[idx], wi, offset, groups, mode)


def value_baseline(f, x, r, S, a=0, groups=None) -> float:
    return BaselineGame(f, x, r, a, groups).value(S)


def value_random_baseline(f, x, reference, S, a=0, groups=None, sample_cap=100, seed=0) -> float:
    return RandomBaselineGame(f, x, reference, a, groups, sample_cap, seed).value(S)


def value_dr_game(f, i, S, plan, G, G_other, groups=None, mode: str = PROBABILITY) -> float:
    return dr_game(f, G, G_other, plan, i, groups, mode).value(S)


def shapley_matrix(f, G, G_other, plan: MatchingPlan, groups=None, config: Optional[EstimatorConfig] = None,
                   mode: str = PROBABILITY, feature_names: Sequence[str] = ()) -> ShapleyAttribution:
    """DR-game attribution for every row of the target group ``G``.

    Row ``i`` uses a seed derived from ``(config.seed, i)``, so results do
    not depend on evaluation order.
    """
    config = config or EstimatorConfig()
    G = np.atleast_2d(np.asarray(G, float))
    G_other = np.atleast_2d(np.asarray(G_other, float))
    P = plan.plan if isinstance(plan, MatchingPlan) else np.asarray(plan)
    if P.shape != (len(G), len(G_other)):
        raise ShapleyError(f"plan shape {P.shape} does not match groups ({len(G)}, {len(G_other)})")
    groups = _as_groups(groups, G.shape[1])
    p = len(groups)
    how = config.resolve(p)
    offset = dr_offset(f, G_other, plan, mode)
    phi = np.zeros((len(G), p))
    phi0 = np.zeros(len(G))
    stderr = np.zeros((len(G), p)) if how == PERMUTATION else None
    for i in range(len(G)):
        game = dr_game(f, G, G_other, plan, i, groups, mode, offset, config.max_atoms)
        if how == EXACT:
            phi[i], v0 = exact_shapley(game, config.max_exact)
        else:
            phi[i], v0, stderr[i] = sampled_shapley(game, config.n_permutations, [config.seed, i])
        phi0[i] = v0 + offset
    return ShapleyAttribution(phi, phi0, how, config.n_permutations if how == PERMUTATION else 0,
                              config.seed, offset, stderr, tuple(feature_names))
