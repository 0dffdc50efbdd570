"""Tabular data loading, encoding and fold construction.

The sensitive attribute is carried next to the encoded matrix as its own
binary vector and never becomes an encoded feature column.
"""

from __future__ import annotations

import csv
import logging
import os
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import KFold, StratifiedKFold

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class SchemaError(ValueError):
    """Raised when a file or table does not match its FeatureSchema."""


class DatasetError(ValueError):
    """Raised when a dataset violates a structural invariant."""


@dataclass(frozen=True)
class FeatureSchema:
    """Column roles of a raw table.

    ``feature_names`` lists the non-sensitive input features in source order;
    ``feature_kinds`` tags each of them numeric or categorical.
    """

    feature_names: Tuple[str, ...]
    feature_kinds: Tuple[str, ...]
    label_name: str
    sensitive_name: str
    sensitive_positive_values: frozenset
    label_positive_values: frozenset = frozenset({"1"})

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "feature_kinds", tuple(self.feature_kinds))
        object.__setattr__(self, "sensitive_positive_values", frozenset(self.sensitive_positive_values))
        object.__setattr__(self, "label_positive_values", frozenset(self.label_positive_values))
        if len(self.feature_names) != len(self.feature_kinds):
            raise SchemaError("feature_names and feature_kinds differ in length")
        bad = [k for k in self.feature_kinds if k not in (NUMERIC, CATEGORICAL)]
        if bad:
            raise SchemaError(f"unknown feature kind(s): {sorted(set(bad))}")
        names = list(self.feature_names) + [self.label_name, self.sensitive_name]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise SchemaError(f"column(s) assigned more than one role: {dup}")

    @property
    def source_columns(self) -> Tuple[str, ...]:
        return self.feature_names + (self.label_name, self.sensitive_name)

    def kind(self, name: str) -> str:
        return self.feature_kinds[self.feature_names.index(name)]


@dataclass(frozen=True)
class TabularDataset:
    """Raw table split into feature columns, binary labels and binary sensitive values.

    ``columns`` maps each feature name to a 1-D array: float for numeric
    features, ``object`` (str) for categorical ones.
    """

    columns: Dict[str, np.ndarray]
    schema: FeatureSchema
    labels: np.ndarray
    sensitive: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if n == 0:
            raise DatasetError("dataset is empty")
        if len(self.sensitive) != n or any(len(c) != n for c in self.columns.values()):
            raise DatasetError("column lengths disagree")
        for a in (0, 1):
            if not np.any(self.sensitive == a):
                raise DatasetError(f"sensitive group A={a} empty")
            if not np.any(self.labels == a):
                raise DatasetError(f"label class y={a} absent (both classes present required)")

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "TabularDataset":
        idx = np.asarray(indices)
        return TabularDataset(
            {k: v[idx] for k, v in self.columns.items()},
            self.schema,
            self.labels[idx],
            self.sensitive[idx],
        )

    def rows(self) -> List[dict]:
        names = self.schema.feature_names
        return [{k: self.columns[k][i] for k in names} for i in range(self.n_rows)]


def load_csv(path, schema: FeatureSchema, max_rows: Optional[int] = None, seed: int = 0) -> TabularDataset:
    """Read a headed CSV file into a :class:`TabularDataset`.

    Parameters
    ----------
    path : str or path-like
    schema : FeatureSchema
    max_rows : int, optional
        When given and smaller than the file, a seeded uniform subsample of
        this many rows is kept (original order preserved).
    seed : int
        Seed for the subsample.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"empty file: {path}") from None
        records = [r for r in reader if r]
    if not records:
        raise DatasetError(f"no data rows in {path}")
    missing = [c for c in schema.source_columns if c not in header]
    if missing:
        raise SchemaError(f"missing column {missing[0]!r} in {path}")
    pos = {c: header.index(c) for c in schema.source_columns}

    if max_rows is not None and max_rows < len(records):
        keep = np.sort(np.random.default_rng(seed).choice(len(records), size=max_rows, replace=False))
        records = [records[i] for i in keep]

    columns = {}
    for name, kind in zip(schema.feature_names, schema.feature_kinds):
        j = pos[name]
        if kind == NUMERIC:
            vals = np.empty(len(records))
            for i, rec in enumerate(records):
                try:
                    vals[i] = float(rec[j])
                except (ValueError, IndexError):
                    cell = rec[j] if j < len(rec) else "<missing>"
                    raise DatasetError(f"row {i}: cannot parse {cell!r} in numeric column {name!r}") from None
            columns[name] = vals
        else:
            columns[name] = np.array([rec[j].strip() for rec in records], dtype=object)
    labels = np.array([rec[pos[schema.label_name]].strip() in schema.label_positive_values for rec in records], dtype=int)
    sens = np.array(
        [rec[pos[schema.sensitive_name]].strip() in schema.sensitive_positive_values for rec in records], dtype=int
    )
    return TabularDataset(columns, schema, labels, sens)


def from_arrays(columns: Dict[str, Sequence], labels, sensitive, kinds: Optional[Dict[str, str]] = None) -> TabularDataset:
    """Build a dataset from in-memory columns (labels/sensitive already binary)."""
    names = tuple(columns)
    kinds = kinds or {}
    kk = tuple(kinds.get(n, NUMERIC if np.issubdtype(np.asarray(columns[n]).dtype, np.number) else CATEGORICAL) for n in names)
    schema = FeatureSchema(names, kk, "y", "A", frozenset({"1"}), frozenset({"1"}))
    cols = {}
    for n, k in zip(names, kk):
        cols[n] = np.asarray(columns[n], dtype=float) if k == NUMERIC else np.asarray([str(v) for v in columns[n]], dtype=object)
    return TabularDataset(cols, schema, np.asarray(labels, dtype=int), np.asarray(sensitive, dtype=int))


GERMAN_CREDIT_CATEGORICAL = (
    "status_of_existing_checking_account",
    "credit_history",
    "purpose",
    "savings_account_and_bonds",
    "present_employment_since",
    "other_debtors_or_guarantors",
    "property",
    "other_installment_plans",
    "housing",
    "job",
    "telephone",
    "foreign_worker",
)


def german_credit_path() -> str:
    return str(resources.files("fairshap").joinpath("data/german_credit.csv"))


def german_credit_schema() -> FeatureSchema:
    """Schema of the bundled German Credit table (sensitive = sex, A=1 for female, y=1 for good credit)."""
    with open(german_credit_path(), newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    feats = tuple(h for h in header if h not in ("sex", "creditability"))
    kinds = tuple(CATEGORICAL if h in GERMAN_CREDIT_CATEGORICAL else NUMERIC for h in feats)
    return FeatureSchema(feats, kinds, "creditability", "sex", frozenset({"female"}), frozenset({"good"}))


def load_german_credit() -> TabularDataset:
    return load_csv(german_credit_path(), german_credit_schema())


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class EncodedMatrix:
    """Numeric design matrix with a reversible map back to raw features.

    ``column_map[j]`` is ``(feature, category)``; category is ``None`` for
    numeric columns. ``feature_slices[f]`` gives the encoded column indices
    of raw feature ``f`` in source order.
    """

    values: np.ndarray
    column_map: Tuple[Tuple[str, Optional[str]], ...]
    feature_names: Tuple[str, ...]
    feature_slices: Tuple[np.ndarray, ...]
    standardization_params: Dict[str, Tuple[float, float]]
    unseen_count: int = 0

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def with_values(self, values: np.ndarray) -> "EncodedMatrix":
        return EncodedMatrix(
            np.asarray(values, dtype=float),
            self.column_map,
            self.feature_names,
            self.feature_slices,
            self.standardization_params,
            self.unseen_count,
        )

    def take(self, indices) -> "EncodedMatrix":
        return self.with_values(self.values[np.asarray(indices)])

    @property
    def is_categorical(self) -> Tuple[bool, ...]:
        return tuple(self.column_map[s[0]][1] is not None for s in self.feature_slices)


def encode(dataset: TabularDataset, fit_indices) -> EncodedMatrix:
    """One-hot encode categoricals and standardize numerics.

    Statistics (category sets, means, standard deviations) come from the rows
    in ``fit_indices`` and are applied to every row. Categories unseen at fit
    time become an all-zero block; constant numeric columns encode as zero.
    """
    fit = np.asarray(fit_indices)
    if fit.size == 0:
        raise DatasetError("fit_indices must be non-empty")
    schema = dataset.schema
    blocks, cmap, slices, params = [], [], [], {}
    unseen = 0
    col = 0
    for name, kind in zip(schema.feature_names, schema.feature_kinds):
        raw = dataset.columns[name]
        if kind == NUMERIC:
            mu = float(np.mean(raw[fit]))
            sd = float(np.std(raw[fit]))
            if sd > 0:
                z = (raw - mu) / sd
            else:
                z = np.zeros(len(raw))
            params[name] = (mu, sd)
            blocks.append(z[:, None])
            cmap.append((name, None))
            slices.append(np.array([col]))
            col += 1
        else:
            cats = sorted(set(raw[fit]))
            onehot = (raw[:, None] == np.array(cats, dtype=object)[None, :]).astype(float)
            miss = int(np.sum(onehot.sum(axis=1) == 0))
            if miss:
                unseen += miss
                logger.warning("%d value(s) of %r unseen at fit time, encoded as zero block", miss, name)
            blocks.append(onehot)
            cmap.extend((name, c) for c in cats)
            slices.append(np.arange(col, col + len(cats)))
            col += len(cats)
    values = np.hstack(blocks) if blocks else np.zeros((dataset.n_rows, 0))
    return EncodedMatrix(values, tuple(cmap), schema.feature_names, tuple(slices), params, unseen)


def decode(encoded: EncodedMatrix, values: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Invert :func:`encode`; all-zero one-hot blocks decode to ``None``."""
    X = encoded.values if values is None else np.asarray(values)
    out = {}
    for name, sl in zip(encoded.feature_names, encoded.feature_slices):
        cat = encoded.column_map[sl[0]][1]
        if cat is None:
            mu, sd = encoded.standardization_params[name]
            out[name] = X[:, sl[0]] * sd + mu if sd > 0 else np.full(len(X), mu)
        else:
            cats = np.array([encoded.column_map[j][1] for j in sl], dtype=object)
            block = X[:, sl]
            res = cats[np.argmax(block, axis=1)]
            res[block.max(axis=1) <= 0] = None
            out[name] = res
    return out


@dataclass(frozen=True)
class SensitiveSplit:
    group_a0: np.ndarray
    group_a1: np.ndarray
    index_a0: np.ndarray
    index_a1: np.ndarray

    def group(self, a: int) -> np.ndarray:
        return self.group_a1 if a else self.group_a0

    def index(self, a: int) -> np.ndarray:
        return self.index_a1 if a else self.index_a0


def split_by_sensitive(encoded, sensitive) -> SensitiveSplit:
    X = encoded.values if isinstance(encoded, EncodedMatrix) else np.asarray(encoded)
    s = np.asarray(sensitive)
    if len(s) != len(X):
        raise DatasetError(f"sensitive vector has {len(s)} entries for {len(X)} rows")
    i0 = np.flatnonzero(s == 0)
    i1 = np.flatnonzero(s == 1)
    if len(i0) + len(i1) != len(s):
        raise DatasetError("sensitive values must be 0 or 1")
    if len(i0) == 0 or len(i1) == 0:
        raise DatasetError(f"sensitive group A={0 if len(i0) == 0 else 1} empty")
    return SensitiveSplit(X[i0], X[i1], i0, i1)


@dataclass
class FoldPlan:
    folds: List[Tuple[np.ndarray, np.ndarray]]
    stratified_on: str
    warnings: List[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)

    def __getitem__(self, i):
        return self.folds[i]


def kfold_split(dataset, k: int, seed: int) -> FoldPlan:
    """Stratified k-fold partition on the joint (label, sensitive) cell.

    Falls back to label-only stratification when a joint cell has fewer than
    ``k`` rows, and to an unstratified shuffle when a label class does.
    """
    labels = np.asarray(dataset.labels)
    sens = np.asarray(dataset.sensitive)
    n = len(labels)
    if k < 2 or k > n:
        raise DatasetError(f"k must lie in [2, {n}], got {k}")
    joint = labels * 2 + sens
    notes = []
    if np.bincount(joint, minlength=4)[np.unique(joint)].min() >= k:
        strata, how = joint, "label_sensitive"
    elif np.bincount(labels)[np.unique(labels)].min() >= k:
        strata, how = labels, "label"
        notes.append("a (label, sensitive) cell is smaller than k; stratified on label only")
    else:
        strata, how = None, "none"
        notes.append("a label class is smaller than k; unstratified folds")
    for msg in notes:
        warnings.warn(msg)
    X = np.zeros((n, 1))
    if strata is None:
        gen = KFold(n_splits=k, shuffle=True, random_state=seed).split(X)
    else:
        gen = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed).split(X, strata)
    folds = [(np.sort(tr), np.sort(te)) for tr, te in gen]
    return FoldPlan(folds, how, notes)
