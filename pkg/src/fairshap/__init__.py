"""Fairness-aware training-data editing with Shapley values and cross-group matching."""

__version__ = "0.1.0"

from .augment import FairshapConfig, ModificationLog, fairshap_augment, fairshap_modify, modification_sweep
from .dataset import encode, kfold_split, load_csv, load_german_credit
from .fairness import FairnessReport, dr_dataset, evaluate
from .matching import build_reference, match, nearest_neighbor_match, sinkhorn_ot_match
from .model import TrainConfig, train
from .shapley import EstimatorConfig, exact_shapley, sampled_shapley, shapley_matrix

__all__ = [
    "EstimatorConfig",
    "FairnessReport",
    "FairshapConfig",
    "ModificationLog",
    "TrainConfig",
    "build_reference",
    "dr_dataset",
    "encode",
    "evaluate",
    "exact_shapley",
    "fairshap_augment",
    "fairshap_modify",
    "kfold_split",
    "load_csv",
    "load_german_credit",
    "match",
    "modification_sweep",
    "nearest_neighbor_match",
    "sampled_shapley",
    "shapley_matrix",
    "sinkhorn_ot_match",
    "train",
]
