"""AUROC, bootstrap intervals, cross-validated selection and sweeps."""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from . import dataset as dsm
from .ensemble import BoostParams, Ensemble, ForestParams, fit_ma_gbt, fit_ma_rf
from .errors import ConfigurationError, ContractError, UndefinedMetricError, UnstableMetricError
from .linear import LassoFitParams, LinearModel, fit_ma_lasso
from .reliance import empirical_reliance
from .tree import DecisionTree, TreeParams, fit_tree

ESTIMATORS = ("ma_dt", "ma_lasso", "ma_rf", "ma_gbt")
MODES = ("alpha_star", "alpha_zero", "alpha_inf")
SELECTION_FRACTION = 0.95
ALPHA_INF_RHO = 0.005


# --------------------------------------------------------------------------
# Metrics


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def bootstrap_distribution(inputs, statistic, b: int = 1000, seed: int = 0):
    """Statistic on ``b`` row resamples; returns (values, n_skipped).

    Resamples on which the statistic is undefined (a single class for
    AUROC) are skipped.
    """
    if b < 100:
        raise ContractError("use at least 100 bootstrap resamples")
    inputs = [np.asarray(a) for a in (inputs if isinstance(inputs, (tuple, list)) else (inputs,))]
    n = inputs[0].shape[0]
    rng = np.random.default_rng(seed)
    values, skipped = [], 0
    for _ in range(b):
        idx = rng.integers(0, n, n)
        try:
            values.append(statistic(*(a[idx] for a in inputs)))
        except UndefinedMetricError:
            skipped += 1
    if skipped > b / 2:
        raise UnstableMetricError(f"{skipped} of {b} resamples had an undefined statistic")
    return np.array(values, dtype=float), skipped


def bootstrap_ci(inputs, statistic, b: int = 1000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap interval (lo, hi)."""
    values, _ = bootstrap_distribution(inputs, statistic, b, seed)
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(values, [tail, 100 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class EvaluationReport:
    auroc: float
    auroc_ci: tuple
    rho_hat: float
    rho_ci: tuple
    n_test: int
    bootstrap_b: int
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auroc_ci"] = list(self.auroc_ci)
        d["rho_ci"] = list(self.rho_ci)
        return d


def _around(point, ci):
    # percentile intervals can exclude the point estimate on skewed resamples
    return (min(ci[0], point), max(ci[1], point))


def predict_proba(model, x) -> np.ndarray:
    return model.predict(x)


def evaluate(model, data: dsm.ImputedDataset, b: int = 1000, seed: int = 0,
             level: float = 0.95) -> EvaluationReport:
    scores = predict_proba(model, data.x_imputed)
    rel = empirical_reliance(model, data).per_sample.astype(float)
    a = auroc(scores, data.labels)
    r = float(rel.mean())
    a_ci = bootstrap_ci((scores, data.labels), auroc, b, level, seed)
    r_ci = bootstrap_ci(rel, np.mean, b, level, seed + 1)
    return EvaluationReport(a, _around(a, a_ci), r, _around(r, r_ci), data.n, b, seed)


# --------------------------------------------------------------------------
# Estimators


def fit_estimator(name: str, params: dict, data: dsm.ImputedDataset):
    """Fit one of the four estimators on imputed training data."""
    params = dict(params)
    x, mask, y = data.x_imputed, data.mask, data.labels
    if name == "ma_dt":
        keys = TreeParams.__dataclass_fields__
        tp = TreeParams(**{k: v for k, v in params.items() if k in keys})
        return fit_tree(x, y, mask, tp)
    if name == "ma_lasso":
        keys = LassoFitParams.__dataclass_fields__
        lp = LassoFitParams(**{k: v for k, v in params.items() if k in keys})
        return fit_ma_lasso(x, mask, y, lp, feature_names=data.feature_names)
    if name == "ma_rf":
        keys = ForestParams.__dataclass_fields__
        return fit_ma_rf(x, mask, y, ForestParams(**{k: v for k, v in params.items() if k in keys}))
    if name == "ma_gbt":
        keys = BoostParams.__dataclass_fields__
        return fit_ma_gbt(x, mask, y, BoostParams(**{k: v for k, v in params.items() if k in keys}))
    raise ConfigurationError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")


def model_to_dict(model) -> dict:
    return model.to_dict()


def model_from_dict(d: dict):
    kind = d.get("type")
    if kind == "tree":
        return DecisionTree.from_dict(d)
    if kind == "linear":
        return LinearModel.from_dict(d)
    if kind == "ensemble":
        return Ensemble.from_dict(d)
    from .errors import FormatError
    raise FormatError(f"unknown model type {kind!r}")


DEFAULT_GRIDS = {
    "ma_dt": {"max_depth": list(range(1, 10)), "alpha": [0.001, 0.01, 0.1, 1, 10]},
    "ma_lasso": {"lam": [0.001, 0.01, 0.1], "alpha": [0.01, 0.1, 1, 10]},
    "ma_rf": {"n_estimators": [50], "max_depth": list(range(1, 8)),
              "alpha": [0.001, 0.01, 0.1, 1, 10]},
    "ma_gbt": {"n_estimators": [10], "learning_rate": [0.01, 0.1], "max_depth": list(range(1, 8)),
               "alpha": [0.001, 0.01, 0.1, 1, 10]},
}
SCALED_GRID = {"scheme": ["scaled"], "alpha": [1, 10, 100, 1000, 10000],
               "beta": [0.001, 0.01, 0.1, 1, 10, 100, 1000]}


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product in key order, last key varying fastest."""
    if not grid:
        return [{}]
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], (list, tuple)) or len(grid[k]) == 0:
            raise ConfigurationError(f"grid entry {k!r} must be a nonempty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def sample_grid(grid: dict, n: int, seed: int = 0) -> list[dict]:
    """``n`` distinct points drawn uniformly from the grid, kept in grid order."""
    points = expand_grid(grid)
    if n >= len(points):
        return points
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(points), n, replace=False))
    return [points[i] for i in keep]


# --------------------------------------------------------------------------
# Selection


@dataclass
class Candidate:
    params: dict
    fold_aurocs: list
    fold_rhos: list

    @property
    def cv_auroc(self) -> float:
        return float(np.mean(self.fold_aurocs))

    @property
    def cv_rho(self) -> float:
        return float(np.mean(self.fold_rhos))

    @property
    def alpha(self) -> float:
        return float(self.params.get("alpha", 0.0))

    def to_dict(self) -> dict:
        return {"params": dict(self.params), "fold_aurocs": [float(a) for a in self.fold_aurocs],
                "fold_rhos": [float(r) for r in self.fold_rhos], "cv_auroc": self.cv_auroc,
                "cv_rho": self.cv_rho}


@dataclass
class SelectionResult:
    candidates: list
    chosen: int
    max_auroc: float
    threshold: float
    mode: str = "alpha_star"

    @property
    def best(self) -> Candidate:
        return self.candidates[self.chosen]

    def to_dict(self) -> dict:
        return {"mode": self.mode, "chosen": self.chosen, "max_auroc": self.max_auroc,
                "threshold": self.threshold, "chosen_params": dict(self.best.params),
                "candidates": [c.to_dict() for c in self.candidates]}


def _as_candidate(c) -> Candidate:
    if isinstance(c, Candidate):
        return c
    if "fold_aurocs" in c:
        return Candidate(dict(c["params"]), list(c["fold_aurocs"]), list(c["fold_rhos"]))
    return Candidate(dict(c["params"]), [c["cv_auroc"]], [c["cv_rho"]])


def select_model(candidates, mode: str = "alpha_star") -> SelectionResult:
    """Pick a candidate from cross-validated metrics.

    ``alpha_star``: lowest cv reliance among candidates within 95% of the
    best cv AUROC; ties go to the lower alpha, then the earlier candidate.
    ``alpha_zero``: best cv AUROC among alpha == 0 candidates.
    ``alpha_inf``: best cv AUROC among candidates with cv reliance at most
    0.005 (ties to the larger alpha); falls back to the largest alpha.
    """
    cands = [_as_candidate(c) for c in candidates]
    if not cands:
        raise ConfigurationError("no candidates to select from")
    aurocs = np.array([c.cv_auroc for c in cands])
    max_auroc = float(aurocs.max())
    threshold = SELECTION_FRACTION * max_auroc
    order = range(len(cands))
    if mode == "alpha_star":
        pool = [i for i in order if aurocs[i] >= threshold]
        chosen = min(pool, key=lambda i: (cands[i].cv_rho, cands[i].alpha, i))
    elif mode == "alpha_zero":
        pool = [i for i in order if cands[i].alpha == 0] or list(order)
        chosen = min(pool, key=lambda i: (-aurocs[i], i))
    elif mode == "alpha_inf":
        pool = [i for i in order if cands[i].cv_rho <= ALPHA_INF_RHO]
        if not pool:
            top = max(c.alpha for c in cands)
            pool = [i for i in order if cands[i].alpha == top]
        chosen = min(pool, key=lambda i: (-aurocs[i], -cands[i].alpha, i))
    else:
        raise ConfigurationError(f"unknown selection mode {mode!r}")
    return SelectionResult(cands, int(chosen), max_auroc, threshold, mode)


# --------------------------------------------------------------------------
# Pipelines


@dataclass(frozen=True)
class Pipeline:
    estimator: str = "ma_dt"
    imputation: str = "zero"
    standardize: bool = True
    test_fraction: float = 0.2
    folds: int = 3
    bootstrap_b: int = 1000

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if self.imputation not in dsm.STRATEGIES:
            raise ConfigurationError(f"unknown imputation {self.imputation!r}")


def cross_validate(train: dsm.Dataset, pipeline: Pipeline, points: list[dict], seed: int = 0):
    """Fold-level AUROC and reliance for each parameter point."""
    folds = []
    for tr, va in dsm.kfold(train, pipeline.folds, seed):
        folds.append(dsm.prepare(train.subset(tr), train.subset(va),
                                 pipeline.standardize, pipeline.imputation))
    out = []
    for params in points:
        aurocs, rhos = [], []
        for tr_data, va_data in folds:
            model = fit_estimator(pipeline.estimator, params, tr_data)
            aurocs.append(auroc(model.predict(va_data.x_imputed), va_data.labels))
            rhos.append(empirical_reliance(model, va_data).rho_hat)
        out.append(Candidate(dict(params), aurocs, rhos))
    return out


def select_and_fit(train: dsm.Dataset, pipeline: Pipeline, points: list[dict], mode: str = "alpha_star",
                   seed: int = 0):
    """CV selection on ``train`` then refit of the chosen point on all of it."""
    if mode == "alpha_zero":
        points = [dict(p, alpha=0.0) for p in points]
        points = [p for i, p in enumerate(points) if p not in points[:i]]
    if len(points) == 1:
        sel = SelectionResult([Candidate(points[0], [float("nan")], [float("nan")])], 0,
                              float("nan"), float("nan"), mode)
    else:
        sel = select_model(cross_validate(train, pipeline, points, seed), mode)
    tr_data = dsm.prepare(train, None, pipeline.standardize, pipeline.imputation)
    model = fit_estimator(pipeline.estimator, sel.best.params, tr_data)
    return model, sel, tr_data


def run_split(ds: dsm.Dataset, pipeline: Pipeline, points: list[dict], split_seed: int,
              mode: str = "alpha_star"):
    """Split, select, refit and evaluate once; returns (model, selection, report, encoders)."""
    train, test = dsm.train_test_split(ds, pipeline.test_fraction, split_seed)
    model, sel, tr_data = select_and_fit(train, pipeline, points, mode, split_seed)
    te_data = dsm.impute(dsm.encode(test, pipeline.standardize, reference=tr_data.encoding),
                         pipeline.imputation, reference=tr_data)
    report = evaluate(model, te_data, pipeline.bootstrap_b, split_seed)
    return model, sel, report, tr_data


SWEEP_METRICS = ("auroc", "auroc_lo", "auroc_hi", "rho_hat", "rho_lo", "rho_hi")


def _sweep_cell(ds, pipeline, point, inner, split_seed, mode):
    points = [dict(q, **point) for q in inner]
    _, sel, rep, _ = run_split(ds, pipeline, points, split_seed, mode)
    row = {"split_seed": split_seed, "estimator": pipeline.estimator}
    row.update(sel.best.params)
    row.update(auroc=rep.auroc, auroc_lo=rep.auroc_ci[0], auroc_hi=rep.auroc_ci[1],
               rho_hat=rep.rho_hat, rho_lo=rep.rho_ci[0], rho_hi=rep.rho_ci[1])
    return row


def sweep(grid: dict, pipeline: Pipeline, data: dsm.Dataset, seeds=(0, 1, 2, 3, 4),
          inner_grid: dict | None = None, mode: str = "alpha_star", n_jobs: int = 1) -> list[dict]:
    """Test metrics for every grid point on every split.

    Parameters in ``inner_grid`` are chosen by CV selection inside each
    training split; ``grid`` parameters are held fixed per row.
    """
    points = expand_grid(grid)
    inner = expand_grid(inner_grid or {})
    tasks = [(p, s) for s in seeds for p in points]
    if n_jobs == 1:
        return [_sweep_cell(data, pipeline, p, inner, s, mode) for p, s in tasks]
    # results come back in task order, so output does not depend on n_jobs
    with ProcessPoolExecutor(max_workers=None if n_jobs < 0 else n_jobs) as pool:
        futures = [pool.submit(_sweep_cell, data, pipeline, p, inner, s, mode) for p, s in tasks]
        return [f.result() for f in futures]


def sweep_csv(rows: list[dict]) -> str:
    """Tidy CSV text; parameter columns come between the ids and the metrics."""
    params = []
    for r in rows:
        for k in r:
            if k not in ("split_seed", "estimator") + SWEEP_METRICS and k not in params:
                params.append(k)
    header = ["split_seed", "estimator"] + params + list(SWEEP_METRICS)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(k, "")) for k in header])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
