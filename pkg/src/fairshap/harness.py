"""Cross-validated experiments, modification sweeps and report rendering.

Configs are INI files with the sections ``[dataset]``, ``[model]``,
``[fairshap]``, ``[experiment]`` and ``[sweep]``. Reports are JSON documents
that embed the fully resolved config, so any run can be replayed from its
own report.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import os
import platform
import time
import traceback
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from . import baselines as bl
from . import fairness as fm
from .augment import FairshapConfig, fairshap_augment, modification_sweep, theorem_c2_diagnostic
from .dataset import (
    CATEGORICAL,
    NUMERIC,
    FeatureSchema,
    encode,
    german_credit_path,
    german_credit_schema,
    kfold_split,
    load_csv,
)
from .matching import OPTIMAL_TRANSPORT, match
from .model import TrainConfig, train
from .shapley import EstimatorConfig, shapley_matrix

logger = logging.getLogger(__name__)

BUILTIN_GERMAN = "builtin:german_credit"
METRICS = ("accuracy", "dr", "dp", "eo", "pqp", "train_dr", "data_fidelity",
           "training_adjustment_rate", "n_modifications")
SWEEP_COLUMNS = ("n_modifications", "accuracy", "dr", "dp", "eo", "pqp", "train_dr", "dr_reduction_pct")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    path: str = BUILTIN_GERMAN
    features: Tuple[str, ...] = ()
    categorical: Tuple[str, ...] = ()
    label: str = ""
    label_positive: Tuple[str, ...] = ("1",)
    sensitive: str = ""
    sensitive_positive: Tuple[str, ...] = ("1",)
    max_rows: Optional[int] = None

    def resolved_path(self) -> str:
        return german_credit_path() if self.path == BUILTIN_GERMAN else self.path

    def schema(self) -> FeatureSchema:
        if self.path == BUILTIN_GERMAN:
            return german_credit_schema()
        if not (self.features and self.label and self.sensitive):
            raise ConfigError("[dataset] needs features, label and sensitive for a CSV path")
        kinds = tuple(CATEGORICAL if f in self.categorical else NUMERIC for f in self.features)
        return FeatureSchema(self.features, kinds, self.label, self.sensitive,
                             frozenset(self.sensitive_positive), frozenset(self.label_positive))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: TrainConfig = field(default_factory=TrainConfig)
    fairshap: FairshapConfig = field(default_factory=FairshapConfig)
    methods: Tuple[str, ...] = (bl.NONE, bl.FAIRSHAP)
    folds: int = 5
    seed: int = 0
    out: str = "results"
    alpha: float = 1.0
    repair_level: float = 1.0
    c2_diagnostic: bool = True
    sweep_enabled: bool = False
    sweep_points: int = 10

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("methods list is empty")
        for m in self.methods:
            if m not in bl.METHODS:
                raise ConfigError(f"unknown method {m!r}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if self.sweep_points < 2:
            raise ConfigError("sweep n_points must be >= 2")


# ---------------------------------------------------------------------------
# config parsing


def _split_list(s: str) -> Tuple[str, ...]:
    return tuple(p.strip() for p in s.replace("\n", ",").split(",") if p.strip())


def _parse_value(raw: str, typ: str, key: str):
    try:
        if typ in ("int", "Optional[int]"):
            return None if raw.strip().lower() in ("", "none") else int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            v = raw.strip().lower()
            if v not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return v in ("true", "yes", "1")
        if typ.startswith("Tuple"):
            return _split_list(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _build(cls, section: Dict[str, str], name: str, **extra):
    known = {f.name: f.type for f in fields(cls)}
    kwargs = dict(extra)
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        kwargs[key] = _parse_value(raw, known[key], f"[{name}] {key}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(f"[{name}] {e}") from None


_ESTIMATOR_KEYS = {"estimator": "estimator", "n_permutations": "n_permutations", "max_exact": "max_exact",
                   "max_atoms": "max_atoms"}


def config_from_sections(sections: Dict[str, Dict[str, str]], seed: Optional[int] = None,
                         out: Optional[str] = None) -> ExperimentConfig:
    """Build a config from ``{section: {key: string}}``; ``seed``/``out`` override the file."""
    allowed = {"dataset", "model", "fairshap", "experiment", "sweep"}
    extra = set(sections) - allowed
    if extra:
        raise ConfigError(f"unknown section(s) {sorted(extra)}")
    exp = dict(sections.get("experiment", {}))
    if seed is not None:
        exp["seed"] = str(seed)
    if out is not None:
        exp["out"] = out
    g_seed = _parse_value(exp.get("seed", "0"), "int", "[experiment] seed")

    ds = _build(DatasetConfig, sections.get("dataset", {}), "dataset")
    model = _build(TrainConfig, sections.get("model", {}), "model", seed=g_seed)

    fs = dict(sections.get("fairshap", {}))
    est = {k: fs.pop(k) for k in list(fs) if k in _ESTIMATOR_KEYS}
    estimator = _build(EstimatorConfig, est, "fairshap", seed=g_seed)
    fair = _build(FairshapConfig, fs, "fairshap", estimator=estimator)

    sw = sections.get("sweep", {})
    unknown = set(sw) - {"enabled", "n_points"}
    if unknown:
        raise ConfigError(f"unknown key(s) in [sweep]: {sorted(unknown)}")
    exp_kwargs = {
        "sweep_enabled": _parse_value(sw.get("enabled", "false"), "bool", "[sweep] enabled"),
        "sweep_points": _parse_value(sw.get("n_points", "10"), "int", "[sweep] n_points"),
    }
    return _build(ExperimentConfig, exp, "experiment", dataset=ds, model=model, fairshap=fair, **exp_kwargs)


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    sections = {s: dict(cp.items(s)) for s in cp.sections()}
    return config_from_sections(sections, seed, out)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list, frozenset)):
        return ", ".join(map(str, v))
    return str(v)


def config_to_sections(cfg: ExperimentConfig) -> Dict[str, Dict[str, str]]:
    """Inverse of :func:`config_from_sections`; every field is written out."""
    est = cfg.fairshap.estimator
    fs = {f.name: _fmt(getattr(cfg.fairshap, f.name)) for f in fields(FairshapConfig) if f.name != "estimator"}
    fs.update({k: _fmt(getattr(est, k)) for k in _ESTIMATOR_KEYS})
    return {
        "dataset": {f.name: _fmt(getattr(cfg.dataset, f.name)) for f in fields(DatasetConfig)},
        "model": {f.name: _fmt(getattr(cfg.model, f.name)) for f in fields(TrainConfig) if f.name != "seed"},
        "fairshap": fs,
        "experiment": {k: _fmt(getattr(cfg, k)) for k in
                       ("methods", "folds", "seed", "out", "alpha", "repair_level", "c2_diagnostic")},
        "sweep": {"enabled": _fmt(cfg.sweep_enabled), "n_points": _fmt(cfg.sweep_points)},
    }


def write_config(cfg: ExperimentConfig, path) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(config_to_sections(cfg))
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


# ---------------------------------------------------------------------------
# experiment


def load_dataset(cfg: ExperimentConfig):
    path = cfg.dataset.resolved_path()
    if not os.path.isfile(path):
        raise ConfigError(f"dataset not found: {path}")
    return load_csv(path, cfg.dataset.schema(), cfg.dataset.max_rows, cfg.seed)


def _checksum(X) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=float).tobytes()).hexdigest()


def _versions() -> Dict[str, str]:
    import numba
    import scipy
    import sklearn

    return {"fairshap": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "scikit-learn": sklearn.__version__, "numba": numba.__version__, "python": platform.python_version()}


@dataclass
class FoldContext:
    """Everything one fold's methods share: encoded split and baseline model."""

    index: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    X_train: np.ndarray
    X_test: np.ndarray
    A_train: np.ndarray
    A_test: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray
    groups: tuple
    feature_names: tuple
    numeric_columns: list
    baseline: object


def prepare_fold(cfg: ExperimentConfig, ds, fold: int, plan=None) -> FoldContext:
    plan = plan or kfold_split(ds, cfg.folds, cfg.seed)
    tr, te = plan[fold]
    enc = encode(ds, tr)
    X = enc.values
    A = np.asarray(ds.sensitive).astype(int)
    y = np.asarray(ds.labels).astype(int)
    numeric = [int(s[0]) for s, cat in zip(enc.feature_slices, enc.is_categorical) if not cat]
    base = train(X[tr], A[tr], y[tr], cfg.model)
    return FoldContext(fold, tr, te, X[tr], X[te], A[tr], A[te], y[tr], y[te], enc.feature_slices,
                       enc.feature_names, numeric, base)


def _method_record(cfg, ctx: FoldContext, method: str, fair_result, timing: dict) -> dict:
    t0 = time.perf_counter()
    mode = cfg.fairshap.dr_mode
    testan = bl.TEST_ADJUSTMENT[method]
    X_mod = ctx.X_train
    extra = {}
    seed = cfg.seed + 1000 * ctx.index
    if method == bl.NONE:
        model = ctx.baseline
        n_mod = 0
    elif method == bl.FAIRSHAP:
        X_mod, log = fair_result
        n_mod = len(log)
        extra["n_changed_cells"] = log.n_changed
        extra["modifications_per_group"] = {str(k): v for k, v in log.totals().items()}
        model = train(X_mod, ctx.A_train, ctx.y_train, cfg.model)
    elif method in (bl.ABLATION_RANDOM, bl.ABLATION_MATCH_RANDOM):
        n_mod = int(fm.changed_cells(ctx.X_train, fair_result[0], ctx.groups).sum())
        if method == bl.ABLATION_RANDOM:
            X_mod = bl.ablation_random(ctx.X_train, n_mod, seed, ctx.groups)
        else:
            X_mod = bl.ablation_match_random(ctx.X_train, ctx.A_train, n_mod, seed, ctx.groups)
        model = train(X_mod, ctx.A_train, ctx.y_train, cfg.model)
    else:
        if method == bl.CORRELATION_REMOVER:
            X_mod, tf = bl.correlation_remover(ctx.X_train, ctx.A_train, cfg.alpha)
            extra["alpha"] = cfg.alpha
        else:
            X_mod, tf = bl.disparate_impact_remover(ctx.X_train, ctx.A_train, cfg.repair_level,
                                                    ctx.numeric_columns)
            extra["repair_level"] = cfg.repair_level
        inner = train(X_mod, tf.sensitive(ctx.A_train), ctx.y_train, cfg.model)
        model = bl.SensitiveMappedPredictor(inner, tf)
        n_mod = None

    before = _checksum(ctx.X_test)
    if testan:
        X_eval, X_train_eval = tf.transform(ctx.X_test, ctx.A_test), X_mod
    else:
        X_eval, X_train_eval = ctx.X_test, ctx.X_train
    rep = fm.evaluate(model, X_eval, ctx.A_test, ctx.y_test, mode)
    rep.train_dr = fm.dr_dataset(model, X_train_eval, mode)
    rep.data_fidelity = fm.data_fidelity(ctx.X_train, X_mod)
    rep.training_adjustment_rate = fm.training_adjustment_rate(ctx.X_train, X_mod, ctx.groups)
    rep.test_adjustment_necessity = testan
    rep.n_modifications = n_mod
    out = rep.as_dict()
    out.update(extra)
    out["test_fold_checksum"] = before
    out["test_fold_unchanged"] = _checksum(ctx.X_test) == before
    out["test_rows_transformed"] = bool(testan and _checksum(X_eval) != before)
    timing[method] = time.perf_counter() - t0
    return out


def run_fold(cfg: ExperimentConfig, ds, fold: int, plan=None) -> Tuple[dict, dict]:
    """Run every configured method on one fold; returns (record, timing)."""
    timing = {}
    t0 = time.perf_counter()
    ctx = prepare_fold(cfg, ds, fold, plan)
    timing["baseline_train"] = time.perf_counter() - t0
    record = {"fold": fold, "n_train": int(len(ctx.train_idx)), "n_test": int(len(ctx.test_idx)), "methods": {}}
    needs_fairshap = any(m in (bl.FAIRSHAP, bl.ABLATION_RANDOM, bl.ABLATION_MATCH_RANDOM) for m in cfg.methods)
    fair_result = None
    if needs_fairshap:
        t1 = time.perf_counter()
        fair_result = fairshap_augment(ctx.X_train, ctx.A_train, ctx.baseline, cfg.fairshap, ctx.groups,
                                       ctx.feature_names)
        timing["fairshap_augment"] = time.perf_counter() - t1
        if cfg.c2_diagnostic:
            record["theorem_c2_diagnostic"] = theorem_c2_diagnostic(
                ctx.baseline, ctx.X_train, ctx.A_train, fair_result[1], ctx.groups, cfg.fairshap)
    for m in cfg.methods:
        try:
            record["methods"][m] = _method_record(cfg, ctx, m, fair_result, timing)
        except Exception as e:  # a failing method must not sink the other methods
            logger.error("fold %d method %s failed: %s", fold, m, e)
            record["methods"][m] = {"failed": f"{type(e).__name__}: {e}"}
    return record, timing


def aggregate(values: Sequence[Optional[float]]) -> dict:
    """Mean and sample standard deviation over the non-missing fold values."""
    present = [float(v) for v in values if v is not None]
    n = len(present)
    mean = float(np.mean(present)) if n else None
    sd = float(np.std(present, ddof=1)) if n > 1 else None
    return {"mean": mean, "sd": sd, "n": n, "missing": len(values) - n}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Cross-validate every configured method; see the module docstring for the layout."""
    t0 = time.perf_counter()
    ds = load_dataset(cfg)
    plan = kfold_split(ds, cfg.folds, cfg.seed)
    folds, timing, failures = [], {"folds": []}, []
    for k in range(cfg.folds):
        try:
            rec, tm = run_fold(cfg, ds, k, plan)
        except Exception as e:
            logger.error("fold %d failed: %s", k, e)
            rec, tm = {"fold": k, "failed": f"{type(e).__name__}: {e}",
                       "traceback": traceback.format_exc(limit=3)}, {}
        folds.append(rec)
        timing["folds"].append(tm)
        for m, r in rec.get("methods", {}).items():
            if "failed" in r:
                failures.append({"fold": k, "method": m, "reason": r["failed"]})
        if "failed" in rec:
            failures.append({"fold": k, "method": None, "reason": rec["failed"]})

    methods = {}
    for m in cfg.methods:
        per_fold = [f.get("methods", {}).get(m) for f in folds]
        ok = [r for r in per_fold if r is not None and "failed" not in r]
        methods[m] = {
            "test_adjustment_necessity": bl.TEST_ADJUSTMENT[m],
            "aggregate": {k: aggregate([r.get(k) for r in ok]) for k in METRICS},
            "folds_ok": len(ok),
        }
    timing["total_seconds"] = time.perf_counter() - t0
    return {
        "config": config_to_sections(cfg),
        "versions": _versions(),
        "dataset": {"path": cfg.dataset.path, "n_rows": ds.n_rows, "n_raw_features": len(ds.schema.feature_names),
                    "stratified_on": plan.stratified_on},
        "notes": {"sweep_order": "descending phi", "train_dr_rows": "original training rows; transformed rows for methods that adjust test data"},
        "folds": folds,
        "methods": methods,
        "failures": failures,
        "status": "ok" if not failures else "partial",
        "timing": timing,
    }


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


def dump_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# sweep


def run_sweep(cfg: ExperimentConfig) -> dict:
    """Descending-phi modification sweep on every fold, plus the fold average.

    Folds stop at different totals, so points are aligned by index: point
    ``p`` of every fold sits at fraction ``p / (n_points - 1)`` of that
    fold's full log.
    """
    t0 = time.perf_counter()
    ds = load_dataset(cfg)
    plan = kfold_split(ds, cfg.folds, cfg.seed)
    per_fold = []
    for k in range(cfg.folds):
        ctx = prepare_fold(cfg, ds, k, plan)
        _, log = fairshap_augment(ctx.X_train, ctx.A_train, ctx.baseline, cfg.fairshap, ctx.groups,
                                  ctx.feature_names)
        rows = modification_sweep(ctx.X_train, ctx.A_train, ctx.y_train, ctx.X_test, ctx.A_test, ctx.y_test,
                                  ctx.baseline, cfg.model, cfg.fairshap, cfg.sweep_points, ctx.groups,
                                  ctx.feature_names, log)
        for p, r in enumerate(rows):
            r["fold"] = k
            r["point"] = p
            r["fraction"] = p / (cfg.sweep_points - 1)
        per_fold.append(rows)
    mean_rows = []
    for p in range(cfg.sweep_points):
        pts = [rows[p] for rows in per_fold]
        row = {"point": p, "fraction": p / (cfg.sweep_points - 1)}
        for c in SWEEP_COLUMNS:
            agg = aggregate([r[c] for r in pts])
            row[c] = agg["mean"]
            row[c + "_sd"] = agg["sd"]
        mean_rows.append(row)
    return {
        "config": config_to_sections(cfg),
        "versions": _versions(),
        "folds": per_fold,
        "mean": mean_rows,
        "timing": {"total_seconds": time.perf_counter() - t0},
    }


def write_csv(rows: List[dict], columns: Sequence[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in columns])


def write_sweep_tables(sweep: dict, out_dir) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    p1 = os.path.join(out_dir, "sweep_folds.csv")
    p2 = os.path.join(out_dir, "sweep_mean.csv")
    write_csv([r for rows in sweep["folds"] for r in rows], ("fold", "point", "fraction") + SWEEP_COLUMNS, p1)
    cols = ["point", "fraction"]
    for c in SWEEP_COLUMNS:
        cols += [c, c + "_sd"]
    write_csv(sweep["mean"], cols, p2)
    return [p1, p2]


# ---------------------------------------------------------------------------
# report rendering


def report_tables(report: dict) -> Tuple[List[dict], List[dict]]:
    """(summary rows, per-fold rows) flattened from a stored run report."""
    summary, per_fold = [], []
    for m, body in report["methods"].items():
        for metric, agg in body["aggregate"].items():
            summary.append({"method": m, "metric": metric, **agg})
    for f in report["folds"]:
        for m, r in f.get("methods", {}).items():
            row = {"fold": f["fold"], "method": m, "failed": r.get("failed", "")}
            row.update({k: r.get(k) for k in METRICS})
            row["test_adjustment_necessity"] = r.get("test_adjustment_necessity")
            per_fold.append(row)
    return summary, per_fold


def write_report_tables(report: dict, out_dir) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    summary, per_fold = report_tables(report)
    p1 = os.path.join(out_dir, "summary.csv")
    p2 = os.path.join(out_dir, "folds.csv")
    write_csv(summary, ("method", "metric", "mean", "sd", "n", "missing"), p1)
    write_csv(per_fold, ("fold", "method", "failed") + METRICS + ("test_adjustment_necessity",), p2)
    return [p1, p2]


# ---------------------------------------------------------------------------
# single-fold exports


def export_plan(cfg: ExperimentConfig, fold: int, group: int, path) -> dict:
    ds = load_dataset(cfg)
    ctx = prepare_fold(cfg, ds, fold)
    tgt, oth = ctx.A_train == group, ctx.A_train != group
    kw = {}
    if cfg.fairshap.matcher == OPTIMAL_TRANSPORT:
        kw = {"epsilon": cfg.fairshap.ot_epsilon, "max_iters": cfg.fairshap.ot_max_iters, "tol": cfg.fairshap.ot_tol}
    plan = match(ctx.X_train[tgt], ctx.X_train[oth], cfg.fairshap.matcher, **kw)
    plan.to_csv(path)
    return {"method": plan.method, "shape": list(plan.shape), "n_iter": plan.n_iter,
            "marginal_error": plan.marginal_error, "converged": plan.converged}


def export_attribution(cfg: ExperimentConfig, fold: int, path) -> dict:
    """phi for both target groups of one training fold; rows are dataset row indices."""
    ds = load_dataset(cfg)
    ctx = prepare_fold(cfg, ds, fold)
    fc = cfg.fairshap
    kw = {}
    if fc.matcher == OPTIMAL_TRANSPORT:
        kw = {"epsilon": fc.ot_epsilon, "max_iters": fc.ot_max_iters, "tol": fc.ot_tol}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "raw_feature", "phi"])
        for a in (0, 1):
            tgt, oth = np.flatnonzero(ctx.A_train == a), np.flatnonzero(ctx.A_train != a)
            plan = match(ctx.X_train[tgt], ctx.X_train[oth], fc.matcher, **kw)
            att = shapley_matrix(ctx.baseline, ctx.X_train[tgt], ctx.X_train[oth], plan, ctx.groups,
                                 fc.estimator, fc.dr_mode, ctx.feature_names)
            for i, rid in enumerate(ctx.train_idx[tgt]):
                for k, name in enumerate(ctx.feature_names):
                    w.writerow([int(rid), name, repr(float(att.phi[i, k]))])
    return {"fold": fold, "rows": int(len(ctx.train_idx)), "features": len(ctx.feature_names)}
