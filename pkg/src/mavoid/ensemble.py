"""Random forests and gradient-boosted trees built from missingness-avoiding trees."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractError, FormatError
from .tree import CLASSIFY, REGRESS, DecisionTree, TreeParams, fit_tree

FOREST = "forest"
BOOSTED = "boosted"


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 50
    max_depth: int = 3
    alpha: float = 0.0
    min_samples_split: int = 2
    feature_subsample: float | None = None  # None: ceil(sqrt(d)) features per node
    bootstrap: bool = True
    seed: int = 0


@dataclass(frozen=True)
class BoostParams:
    n_estimators: int = 10
    learning_rate: float = 0.1
    max_depth: int = 3
    alpha: float = 0.0
    min_samples_split: int = 2
    seed: int = 0


@dataclass(eq=False)
class Ensemble:
    kind: str
    trees: list = field(default_factory=list)
    base_score: float = 0.0
    learning_rate: float = 1.0
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.trees)

    def truncated(self, m: int) -> "Ensemble":
        """The first ``m`` members, with the same combination rule."""
        return Ensemble(self.kind, self.trees[:m], self.base_score, self.learning_rate, self.params)

    def margin(self, x) -> np.ndarray:
        if not self.trees:
            raise ContractError("empty ensemble")
        return self.base_score + self.learning_rate * sum(t.predict(x) for t in self.trees)

    def predict(self, x) -> np.ndarray:
        """Positive-class probability."""
        if not self.trees:
            raise ContractError("empty ensemble")
        if self.kind == FOREST:
            return np.mean([t.predict(x) for t in self.trees], axis=0)
        return expit(self.margin(x))

    def on_path(self, x) -> np.ndarray:
        used = self.trees[0].on_path(x)
        for t in self.trees[1:]:
            used |= t.on_path(x)
        return used

    def to_dict(self) -> dict:
        return {"type": "ensemble", "kind": self.kind, "base_score": float(self.base_score),
                "gamma": float(self.learning_rate), "params": dict(self.params),
                "seed": self.params.get("seed"), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        try:
            return cls(d["kind"], [DecisionTree.from_dict(t) for t in d["trees"]],
                       float(d.get("base_score", 0.0)), float(d.get("gamma", 1.0)),
                       dict(d.get("params", {})))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed ensemble: {exc}") from exc


def predict_ensemble(ens: Ensemble, x) -> np.ndarray:
    return ens.predict(x)


def _subsample_fraction(params: ForestParams, d: int) -> float | None:
    if params.feature_subsample is not None:
        return params.feature_subsample
    return min(1.0, np.ceil(np.sqrt(d)) / d)


def fit_ma_rf(x, mask, y, params: ForestParams | None = None) -> Ensemble:
    """Independent MA trees on bootstrap resamples, sigma fixed to ones.

    Each tree draws its bootstrap counts and per-node feature subsets from
    its own child stream of ``SeedSequence(seed)``.
    """
    params = params or ForestParams()
    if params.n_estimators < 1:
        raise ContractError("n_estimators must be at least 1")
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    frac = _subsample_fraction(params, d)
    tparams = TreeParams(alpha=params.alpha, max_depth=params.max_depth,
                         min_samples_split=params.min_samples_split,
                         max_features=None if frac is None or frac >= 1 else frac, seed=params.seed)
    trees = []
    for child in np.random.SeedSequence(params.seed).spawn(params.n_estimators):
        rng = np.random.default_rng(child)
        weight = np.bincount(rng.integers(0, n, n), minlength=n).astype(float) if params.bootstrap else None
        trees.append(fit_tree(x, y, mask, tparams, sample_weight=weight, task=CLASSIFY, rng=rng))
    return Ensemble(FOREST, trees, params=asdict(params))


def bootstrap_counts(params: ForestParams, n: int) -> list[np.ndarray]:
    """Per-tree bootstrap multiplicities that :func:`fit_ma_rf` uses."""
    out = []
    for child in np.random.SeedSequence(params.seed).spawn(params.n_estimators):
        rng = np.random.default_rng(child)
        out.append(np.bincount(rng.integers(0, n, n), minlength=n))
    return out


def logloss_pseudo_residuals(labels, margins) -> np.ndarray:
    """Negative gradient of the log loss with respect to the margin: y - sigmoid(f)."""
    return np.asarray(labels, dtype=float) - expit(np.asarray(margins, dtype=float))


def log_loss(labels, margins) -> float:
    y = np.asarray(labels, dtype=float)
    f = np.asarray(margins, dtype=float)
    return float(np.mean(np.logaddexp(0.0, f) - y * f))


def update_sigma(sigma, tree: DecisionTree, x, mask) -> np.ndarray:
    """Zero sigma[i, j] where feature j is on row i's path and missing in row i."""
    sigma = np.asarray(sigma, dtype=float)
    used = tree.on_path(x)
    return np.where(used & np.asarray(mask, dtype=bool), 0.0, sigma)


@dataclass
class BoostState:
    sigma: np.ndarray
    current_scores: np.ndarray
    iteration: int = 0


def fit_ma_gbt(x, mask, y, params: BoostParams | None = None, callback=None) -> Ensemble:
    """Gradient boosting on the log loss with sigma-weighted missingness penalties.

    ``callback(state, tree)``, if given, sees the state after each iteration.
    """
    params = params or BoostParams()
    if params.n_estimators < 1:
        raise ContractError("n_estimators must be at least 1")
    if params.learning_rate < 0:
        raise ContractError("learning_rate must be nonnegative")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    rate = y.mean()
    if rate <= 0 or rate >= 1:
        raise ContractError("both classes are required to initialize the log-odds")
    base = float(np.log(rate / (1 - rate)))
    tparams = TreeParams(alpha=params.alpha, max_depth=params.max_depth,
                         min_samples_split=params.min_samples_split, seed=params.seed)
    state = BoostState(np.ones(x.shape, dtype=float), np.full(x.shape[0], base))
    trees = []
    for m in range(1, params.n_estimators + 1):
        resid = logloss_pseudo_residuals(y, state.current_scores)
        tree = fit_tree(x, resid, mask, tparams, sigma=state.sigma, task=REGRESS)
        trees.append(tree)
        state.current_scores = state.current_scores + params.learning_rate * tree.predict(x)
        state.sigma = update_sigma(state.sigma, tree, x, mask)
        state.iteration = m
        if callback is not None:
            callback(state, tree)
    return Ensemble(BOOSTED, trees, base, params.learning_rate, params=asdict(params))
