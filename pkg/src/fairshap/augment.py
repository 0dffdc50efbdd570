"""FairSHAP data editing.

For a target group, every raw feature cell whose DR-game Shapley value
passes the threshold is overwritten with the value of the target row's
matched counterpart from the other group. Running this in both directions
and reassembling the rows gives the augmented training set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import fairness as fm
from .matching import NEAREST_NEIGHBOUR, OPTIMAL_TRANSPORT, build_reference, match
from .model import TrainConfig, train
from .shapley import EstimatorConfig, ShapleyAttribution, _as_groups, shapley_matrix

SIGNED = "signed"
ABSOLUTE = "absolute"


@dataclass(frozen=True)
class FairshapConfig:
    threshold: float = 0.05
    matcher: str = NEAREST_NEIGHBOUR
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    threshold_mode: str = SIGNED
    dr_mode: str = fm.PROBABILITY
    ot_epsilon: float = 0.05
    ot_max_iters: int = 10000
    ot_tol: float = 1e-6

    def __post_init__(self):
        if math.isnan(self.threshold) or self.threshold == -math.inf:
            raise ValueError("threshold must be a number above -inf; use modification_sweep to apply everything")
        if self.threshold_mode not in (SIGNED, ABSOLUTE):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.matcher not in (NEAREST_NEIGHBOUR, OPTIMAL_TRANSPORT):
            raise ValueError(f"unknown matcher {self.matcher!r}")
        if self.estimator.n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")

    def selects(self, phi):
        phi = np.asarray(phi)
        return phi >= self.threshold if self.threshold_mode == SIGNED else np.abs(phi) >= self.threshold


@dataclass(frozen=True)
class Modification:
    row: int
    feature: int
    feature_name: str
    old: tuple
    new: tuple
    phi: float
    group: int

    @property
    def changed(self) -> bool:
        return self.old != self.new


@dataclass
class ModificationLog:
    """Selected cells, ordered by descending Shapley value.

    Every cell that passed the threshold is logged, including replacements
    whose new value happens to equal the old one (``changed`` is False).
    ``details`` keeps, per target group, the attribution, plan and reference
    used to build the log.
    """

    entries: List[Modification] = field(default_factory=list)
    details: Dict[int, dict] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def sort(self):
        self.entries.sort(key=lambda e: (-e.phi, e.group, e.row, e.feature))
        return self

    @property
    def n_changed(self) -> int:
        return sum(e.changed for e in self.entries)

    def totals(self) -> Dict[int, int]:
        out = {0: 0, 1: 0}
        for e in self.entries:
            out[e.group] += 1
        return out

    def cells(self):
        return {(e.row, e.feature) for e in self.entries}

    def apply(self, X, groups, n: Optional[int] = None) -> np.ndarray:
        """Return a copy of ``X`` with the first ``n`` logged replacements applied."""
        out = np.array(X, dtype=float, copy=True)
        for e in self.entries[: len(self.entries) if n is None else n]:
            out[e.row, groups[e.feature]] = e.new
        return out

    def merged(self, other: "ModificationLog") -> "ModificationLog":
        log = ModificationLog(self.entries + other.entries, {**self.details, **other.details})
        return log.sort()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "group", "raw_feature", "old", "new", "phi", "changed"])
            for e in self.entries:
                w.writerow([e.row, e.group, e.feature_name, " ".join(map(repr, e.old)),
                            " ".join(map(repr, e.new)), repr(e.phi), int(e.changed)])


def fairshap_modify(G, G_other, f, cfg: Optional[FairshapConfig] = None, groups=None,
                    feature_names: Sequence[str] = (), group_label: int = 0, row_ids=None):
    """Edit the target group ``G`` using the other group ``G_other`` as reference.

    Parameters
    ----------
    G, G_other : ndarray
        Encoded non-sensitive features of the target and non-target groups.
    f : Predictor
        Model used for the DR game; trained on the unmodified data.
    groups : sequence of index arrays, optional
        Encoded columns of each raw feature (one column per feature if omitted).
    group_label : int
        Sensitive value of the target group, recorded in the log.
    row_ids : array, optional
        Row identifiers written to the log (defaults to positions in ``G``).

    Returns
    -------
    G_new : ndarray
    log : ModificationLog
    """
    cfg = cfg or FairshapConfig()
    G = np.atleast_2d(np.asarray(G, dtype=float))
    G_other = np.atleast_2d(np.asarray(G_other, dtype=float))
    groups = _as_groups(groups, G.shape[1])
    names = list(feature_names) or [f"f{k}" for k in range(len(groups))]
    ids = np.arange(len(G)) if row_ids is None else np.asarray(row_ids)

    if cfg.matcher == OPTIMAL_TRANSPORT:
        plan = match(G, G_other, cfg.matcher, epsilon=cfg.ot_epsilon, max_iters=cfg.ot_max_iters, tol=cfg.ot_tol)
    else:
        plan = match(G, G_other, cfg.matcher)
    att = shapley_matrix(f, G, G_other, plan, groups, cfg.estimator, cfg.dr_mode, names)
    ref = build_reference(plan, G_other)

    G_new = G.copy()
    entries = []
    sel = cfg.selects(att.phi)
    for i, k in zip(*np.nonzero(sel)):
        cols = groups[k]
        old, new = tuple(G[i, cols].tolist()), tuple(ref.rows[i, cols].tolist())
        G_new[i, cols] = ref.rows[i, cols]
        entries.append(Modification(int(ids[i]), int(k), names[k], old, new, float(att.phi[i, k]), group_label))
    log = ModificationLog(entries, {group_label: {"attribution": att, "plan": plan, "reference": ref,
                                                  "row_ids": ids}})
    return G_new, log.sort()


def fairshap_augment(X, A, f, cfg: Optional[FairshapConfig] = None, groups=None,
                     feature_names: Sequence[str] = ()):
    """Run the editing in both directions and reassemble rows in their original order.

    Log row indices refer to rows of ``X``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = np.asarray(A).astype(int)
    i0, i1 = np.flatnonzero(A == 0), np.flatnonzero(A == 1)
    if len(i0) == 0 or len(i1) == 0:
        raise ValueError("both sensitive groups must be non-empty")
    G0, log0 = fairshap_modify(X[i0], X[i1], f, cfg, groups, feature_names, 0, i0)
    G1, log1 = fairshap_modify(X[i1], X[i0], f, cfg, groups, feature_names, 1, i1)
    X_new = X.copy()
    X_new[i0] = G0
    X_new[i1] = G1
    return X_new, log0.merged(log1)


def theorem_c2_diagnostic(f, X, A, log: ModificationLog, groups, cfg: Optional[FairshapConfig] = None) -> dict:
    """Compare the DR change of each edited target row with the attributed sum.

    For every target row, ``gap = |(DR(before) - DR(after)) - sum of phi over
    the replaced features|``. ``grand_identity_error`` checks, for every
    row, ``phi0 + sum(phi) == DR(row)``; with a nearest-neighbour plan it
    also checks that replacing every feature yields DR(before) - sum(phi).
    """
    mode = cfg.dr_mode if cfg else fm.PROBABILITY
    X = np.asarray(X, dtype=float)
    groups = _as_groups(groups, X.shape[1])
    gaps, grand_eff, grand_swap = [], [], []
    X_after = log.apply(X, groups)
    by_row = {}
    for e in log.entries:
        by_row.setdefault(e.row, []).append(e.phi)
    for a, det in log.details.items():
        att: ShapleyAttribution = det["attribution"]
        ids = det["row_ids"]
        ref = det["reference"]
        dr_before = fm.dr_values(f, X[ids], mode)
        grand_eff.append(np.abs(att.phi0 + att.phi.sum(axis=1) - dr_before))
        if det["plan"].method == NEAREST_NEIGHBOUR:
            dr_ref = fm.dr_values(f, ref.rows, mode)
            grand_swap.append(np.abs(dr_ref - (dr_before - att.phi.sum(axis=1))))
        edited = [j for j, r in enumerate(ids) if r in by_row]
        if edited:
            rows = ids[edited]
            dr_after = fm.dr_values(f, X_after[rows], mode)
            attributed = np.array([sum(by_row[r]) for r in rows])
            gaps.append(np.abs((dr_before[edited] - dr_after) - attributed))
    gaps = np.concatenate(gaps) if gaps else np.zeros(0)
    eff = np.concatenate(grand_eff) if grand_eff else np.zeros(0)
    swap = np.concatenate(grand_swap) if grand_swap else np.zeros(0)

    def stats(v):
        if v.size == 0:
            return {"n": 0, "mean": None, "median": None, "max": None}
        return {"n": int(v.size), "mean": float(v.mean()), "median": float(np.median(v)), "max": float(v.max())}

    return {
        "gap": stats(gaps),
        "grand_identity_error": float(eff.max()) if eff.size else 0.0,
        "grand_swap_error": float(swap.max()) if swap.size else None,
    }


def sweep_points(total: int, n_points: int) -> List[int]:
    """``n_points`` prefix sizes evenly spaced over [0, total]; repeats are kept
    so that sweeps of different lengths stay aligned point by point."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    return [int(round(v)) for v in np.linspace(0, total, n_points)]


def modification_sweep(X_train, A_train, y_train, X_test, A_test, y_test, f, train_cfg: TrainConfig,
                       cfg: Optional[FairshapConfig] = None, n_points: int = 10, groups=None,
                       feature_names: Sequence[str] = (), log: Optional[ModificationLog] = None,
                       trainer: Callable = train) -> List[dict]:
    """Retrain on growing prefixes of the descending-phi modification log.

    Each point records test-set metrics of a model retrained from scratch
    (same config and seed) on the partially edited training set, plus the
    DR reduction relative to point 0, which is the unedited data.
    """
    cfg = cfg or FairshapConfig()
    X_train = np.asarray(X_train, dtype=float)
    groups = _as_groups(groups, X_train.shape[1])
    if log is None:
        _, log = fairshap_augment(X_train, A_train, f, cfg, groups, feature_names)
    rows = []
    dr0 = None
    cache = {}
    for n in sweep_points(len(log), n_points):
        if n not in cache:
            model = trainer(log.apply(X_train, groups, n), A_train, y_train, train_cfg)
            cache[n] = (fm.evaluate(model, X_test, A_test, y_test, cfg.dr_mode),
                        fm.dr_dataset(model, X_train, cfg.dr_mode))
        rep, train_dr = cache[n]
        if dr0 is None:
            dr0 = rep.dr
        rows.append({
            "n_modifications": n,
            "accuracy": rep.accuracy,
            "dr": rep.dr,
            "dp": rep.dp,
            "eo": rep.eo,
            "pqp": rep.pqp,
            "train_dr": train_dr,
            "dr_reduction_pct": 100.0 * (dr0 - rep.dr) / dr0 if dr0 > 0 else 0.0,
        })
    return rows
