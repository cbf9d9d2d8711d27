"""Missingness-avoiding learning: trees, sparse linear models and tree ensembles
that avoid reading features which are missing at prediction time."""

__version__ = "0.1.0"

from .dataset import Dataset, encode, impute, inject_missingness, load_csv, train_test_split
from .ensemble import Ensemble, fit_ma_gbt, fit_ma_rf
from .evaluation import auroc, bootstrap_ci, evaluate, select_model, sweep
from .linear import LinearModel, fit_ma_lasso
from .reliance import empirical_reliance, mcar_bound
from .tree import DecisionTree, TreeParams, fit_tree

__all__ = [
    "Dataset", "DecisionTree", "Ensemble", "LinearModel", "TreeParams", "auroc", "bootstrap_ci",
    "empirical_reliance", "encode", "evaluate", "fit_ma_gbt", "fit_ma_lasso", "fit_ma_rf", "fit_tree",
    "impute", "inject_missingness", "load_csv", "mcar_bound", "select_model", "sweep",
    "train_test_split",
]
