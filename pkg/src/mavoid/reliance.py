"""Missingness reliance: does a prediction need a feature that is missing?

A model relies on missingness for a row when some feature it reads for that
row is masked. Trees and ensembles read the features on the decision path
(evaluated on imputed values); linear models read every feature with a
nonzero coefficient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ensemble import Ensemble
from .errors import ContractError
from .linear import ZERO_TOL, LinearModel
from .tree import DecisionTree


@dataclass(frozen=True, eq=False)
class RelianceReport:
    per_sample: np.ndarray
    per_feature_usage: np.ndarray

    @property
    def rho_hat(self) -> float:
        return float(self.per_sample.mean()) if self.per_sample.size else 0.0

    @property
    def n(self) -> int:
        return int(self.per_sample.size)

    def to_dict(self) -> dict:
        return {"rho_hat": self.rho_hat,
                "per_feature_usage": [float(u) for u in self.per_feature_usage], "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def reliance_linear(model: LinearModel, x, m) -> int:
    support = np.abs(np.asarray(model.theta)) > ZERO_TOL
    m = np.asarray(m, dtype=bool)
    if m.shape != support.shape:
        raise ContractError("mask row does not match the number of coefficients")
    return int(np.any(support & m))


def reliance_tree(tree: DecisionTree, x, m) -> int:
    m = np.asarray(m, dtype=bool)
    return int(any(m[tree.feature[u]] for u in tree.decision_path(x) if not tree.is_leaf(u)))


def reliance_ensemble(ens: Ensemble, x, m) -> int:
    return max(reliance_tree(t, x, m) for t in ens.trees)


def usage_matrix(model, x) -> np.ndarray:
    """(n, d) boolean: model reads feature j when predicting row i."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if isinstance(model, LinearModel):
        support = np.abs(model.theta) > ZERO_TOL
        if support.size != x.shape[1]:
            raise ContractError("model and data disagree on the number of features")
        return np.broadcast_to(support, x.shape).copy()
    if isinstance(model, (DecisionTree, Ensemble)):
        return model.on_path(x)
    raise ContractError(f"no reliance definition for {type(model).__name__}")


def reliance_vector(model, x, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if mask.shape != x.shape:
        raise ContractError("mask shape must match x")
    return (usage_matrix(model, x) & mask).any(axis=1).astype(np.int8)


def empirical_reliance(model, data=None, *, x=None, mask=None) -> RelianceReport:
    """Per-row reliance, its mean, and per-feature usage rates over a dataset.

    ``data`` is an :class:`~mavoid.dataset.ImputedDataset`; alternatively pass
    imputed ``x`` and the original ``mask`` as keywords.
    """
    if data is not None:
        x, mask = data.x_imputed, data.mask
    x = np.atleast_2d(np.asarray(x, dtype=float))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ContractError("mask shape must match x")
    used = usage_matrix(model, x)
    per_sample = (used & mask).any(axis=1).astype(np.int8)
    return RelianceReport(per_sample, used.mean(axis=0) if x.shape[0] else np.zeros(x.shape[1]))


def mcar_bound(report: RelianceReport, p) -> float:
    """max_j usage_j * p_j, a lower bound on reliance under independent MCAR masking."""
    p = np.asarray(p, dtype=float)
    if p.shape != report.per_feature_usage.shape:
        raise ContractError("one missingness rate per feature is required")
    if np.any((p < 0) | (p > 1)):
        raise ContractError("rates must lie in [0, 1]")
    return float(np.max(report.per_feature_usage * p)) if p.size else 0.0
