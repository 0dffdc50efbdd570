import csv
import math

import numpy as np
import pytest

from fairshap import fairness as fm
from fairshap.augment import (
    ABSOLUTE,
    FairshapConfig,
    ModificationLog,
    fairshap_augment,
    fairshap_modify,
    modification_sweep,
    sweep_points,
    theorem_c2_diagnostic,
)
from fairshap.matching import OPTIMAL_TRANSPORT
from fairshap.model import FunctionPredictor, TrainConfig, train
from fairshap.shapley import EXACT, EstimatorConfig

from conftest import make_predictor

EXACT_CFG = EstimatorConfig(EXACT)


@pytest.fixture
def toy(rng):
    """Two groups on 4 features; column 3 is a 2-column one-hot block."""
    n0, n1 = 12, 9
    X = rng.normal(size=(n0 + n1, 5))
    X[:, 3] = rng.integers(0, 2, n0 + n1)
    X[:, 4] = 1 - X[:, 3]
    A = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    groups = [[0], [1], [2], [3, 4]]
    f = make_predictor([0.5, -0.4, 0.3, 0.8, -0.2], [1.2, 0.6, -0.9, 0.7, 0.0], c=0.4, inter=1.5)
    return X, A, groups, f


def test_infinite_threshold_is_noop(toy):
    X, A, groups, f = toy
    G_new, log = fairshap_modify(X[A == 0], X[A == 1], f, FairshapConfig(threshold=math.inf), groups)
    np.testing.assert_array_equal(G_new, X[A == 0])
    assert len(log) == 0


def test_rejects_minus_inf_and_nan():
    with pytest.raises(ValueError):
        FairshapConfig(threshold=-math.inf)
    with pytest.raises(ValueError):
        FairshapConfig(threshold=math.nan)
    with pytest.raises(ValueError):
        FairshapConfig(matcher="Hungarian")


def test_predictor_ignoring_A_changes_nothing(toy):
    X, A, groups, _ = toy
    f = FunctionPredictor(lambda X, A: 1 / (1 + np.exp(-X[:, 0])))
    X_new, log = fairshap_augment(X, A, f, FairshapConfig(threshold=1e-12), groups)
    np.testing.assert_array_equal(X_new, X)
    assert len(log) == 0


def test_log_matches_exported_phi(toy, tmp_path):
    X, A, _, _ = toy
    G, H = X[A == 0][:, :2], X[A == 1][:, :2]
    cfg = FairshapConfig(threshold=0.05, estimator=EXACT_CFG)
    f = make_predictor([1.0, -0.5], [1.5, 1.0], c=0.3, inter=1.0)
    G_new, log = fairshap_modify(G, H, f, cfg)
    det = log.details[0]
    path = tmp_path / "phi.csv"
    det["attribution"].to_csv(path)
    with open(path) as fh:
        selected = {(int(r["row"]), int(r["raw_feature"][1:])) for r in csv.DictReader(fh)
                    if float(r["phi"]) >= 0.05}
    assert selected and log.cells() == selected
    changed = {(i, k) for i, k in zip(*np.nonzero(G_new != G))}
    assert changed == {(e.row, e.feature) for e in log if e.changed}
    # logged entries are sorted by descending phi
    phis = [e.phi for e in log]
    assert phis == sorted(phis, reverse=True)


def test_only_selected_cells_change_with_provenance(toy):
    X, A, groups, f = toy
    for matcher in ("NearestNeighbour", OPTIMAL_TRANSPORT):
        cfg = FairshapConfig(threshold=0.01, matcher=matcher, estimator=EXACT_CFG)
        X_new, log = fairshap_augment(X, A, f, cfg, groups)
        assert len(log) > 0
        cells = log.cells()
        for i in range(len(X)):
            for k, g in enumerate(groups):
                if (i, k) not in cells:
                    np.testing.assert_array_equal(X_new[i, g], X[i, g])
                else:
                    other = X[A != A[i]][:, g]
                    assert any(np.array_equal(X_new[i, g], r) for r in other)
        np.testing.assert_array_equal(X_new[:, 3] + X_new[:, 4], 1)
        for e in log:
            phi = log.details[e.group]["attribution"].phi
            pos = np.flatnonzero(log.details[e.group]["row_ids"] == e.row)[0]
            assert phi[pos, e.feature] == e.phi >= 0.01


def test_absolute_mode_selects_negative_phi(toy):
    X, A, groups, f = toy
    signed = fairshap_augment(X, A, f, FairshapConfig(threshold=0.01, estimator=EXACT_CFG), groups)[1]
    absolute = fairshap_augment(X, A, f, FairshapConfig(threshold=0.01, threshold_mode=ABSOLUTE,
                                                         estimator=EXACT_CFG), groups)[1]
    assert signed.cells() < absolute.cells()
    assert any(e.phi < 0 for e in absolute)


def test_directional_logs_are_disjoint(toy):
    X, A, groups, f = toy
    cfg = FairshapConfig(threshold=0.01, estimator=EXACT_CFG)
    _, log = fairshap_augment(X, A, f, cfg, groups)
    rows0 = {e.row for e in log if e.group == 0}
    rows1 = {e.row for e in log if e.group == 1}
    assert rows0 <= set(np.flatnonzero(A == 0)) and rows1 <= set(np.flatnonzero(A == 1))
    i0, i1 = np.flatnonzero(A == 0), np.flatnonzero(A == 1)
    _, l0 = fairshap_modify(X[i0], X[i1], f, cfg, groups, group_label=0, row_ids=i0)
    _, l1 = fairshap_modify(X[i1], X[i0], f, cfg, groups, group_label=1, row_ids=i1)
    assert log.cells() == l0.cells() | l1.cells()
    assert not l0.cells() & l1.cells()
    assert log.totals() == {0: len(l0), 1: len(l1)}


def test_singleton_group(toy):
    X, A, groups, f = toy
    A = np.zeros(len(X), int)
    A[5] = 1
    X_new, log = fairshap_augment(X, A, f, FairshapConfig(threshold=0.0, estimator=EXACT_CFG), groups)
    for e in log:
        if e.group == 0:
            np.testing.assert_array_equal(e.new, X[5, groups[e.feature]])
    with pytest.raises(ValueError):
        fairshap_augment(X, np.zeros(len(X), int), f)


def test_grand_coalition_identity(toy):
    X, A, groups, f = toy
    cfg = FairshapConfig(threshold=0.02, estimator=EXACT_CFG)
    _, log = fairshap_augment(X, A, f, cfg, groups)
    for a, det in log.details.items():
        att = det["attribution"]
        np.testing.assert_allclose(att.phi0 + att.phi.sum(axis=1), fm.dr_values(f, X[det["row_ids"]]), atol=1e-9)
    diag = theorem_c2_diagnostic(f, X, A, log, groups, cfg)
    assert diag["grand_identity_error"] <= 1e-9
    assert diag["grand_swap_error"] <= 1e-9
    assert diag["gap"]["n"] == len({e.row for e in log})


def test_deterministic(toy):
    X, A, groups, f = toy
    cfg = FairshapConfig(threshold=0.01)
    a, la = fairshap_augment(X, A, f, cfg, groups)
    b, lb = fairshap_augment(X, A, f, cfg, groups)
    np.testing.assert_array_equal(a, b)
    assert la.entries == lb.entries


def test_log_apply_and_csv(toy, tmp_path):
    X, A, groups, f = toy
    X_new, log = fairshap_augment(X, A, f, FairshapConfig(threshold=0.01), groups, ["a", "b", "c", "d"])
    np.testing.assert_array_equal(log.apply(X, groups), X_new)
    np.testing.assert_array_equal(log.apply(X, groups, 0), X)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(log)
    assert set(rows[0]) == {"row", "group", "raw_feature", "old", "new", "phi", "changed"}
    assert ModificationLog().n_changed == 0


def test_sweep_points():
    assert sweep_points(10, 3) == [0, 5, 10]
    assert sweep_points(2, 5) == [0, 0, 1, 2, 2]
    with pytest.raises(ValueError):
        sweep_points(10, 1)


@pytest.fixture
def trained_toy():
    rng = np.random.default_rng(3)
    n = 120
    A = rng.integers(0, 2, n)
    X = rng.normal(size=(n, 3)) + 0.5 * A[:, None]
    y = (X[:, 0] + 0.8 * A + rng.normal(0, 0.5, n) > 0.5).astype(int)
    cfg = TrainConfig(model_kind="boosted_trees", max_depth=2, tree_count=20, learning_rate=0.3)
    tr, te = np.arange(90), np.arange(90, n)
    f = train(X[tr], A[tr], y[tr], cfg)
    return X, A, y, tr, te, cfg, f


def test_sweep_endpoints_and_external_replication(trained_toy):
    X, A, y, tr, te, tcfg, f = trained_toy
    cfg = FairshapConfig(threshold=0.01)
    rows = modification_sweep(X[tr], A[tr], y[tr], X[te], A[te], y[te], f, tcfg, cfg, n_points=5)
    assert len(rows) == 5
    base = fm.evaluate(f, X[te], A[te], y[te])
    assert rows[0]["n_modifications"] == 0 and rows[0]["dr"] == base.dr and rows[0]["accuracy"] == base.accuracy
    assert rows[0]["dr_reduction_pct"] == 0
    X_full, log = fairshap_augment(X[tr], A[tr], f, cfg)
    assert rows[-1]["n_modifications"] == len(log)
    full = train(X_full, A[tr], y[tr], tcfg)
    assert rows[-1]["dr"] == fm.dr_dataset(full, X[te])
    # replicate every point outside the sweep code
    order = sorted(log.entries, key=lambda e: -e.phi)
    for row in rows:
        Xp = X[tr].copy()
        for e in order[: row["n_modifications"]]:
            Xp[e.row, e.feature] = e.new[0]
        m = train(Xp, A[tr], y[tr], tcfg)
        assert row["dr"] == fm.dr_dataset(m, X[te])
        assert row["dr_reduction_pct"] == pytest.approx(100 * (rows[0]["dr"] - row["dr"]) / rows[0]["dr"])


def test_sweep_of_empty_log_is_flat(trained_toy):
    X, A, y, tr, te, tcfg, f = trained_toy
    rows = modification_sweep(X[tr], A[tr], y[tr], X[te], A[te], y[te], f, tcfg,
                              FairshapConfig(threshold=math.inf), n_points=4)
    assert [r["dr_reduction_pct"] for r in rows] == [0.0] * 4
    assert len({r["dr"] for r in rows}) == 1
