"""Greedy decision trees with a missingness-reliance penalty on splits.

A split of node ``S`` on feature ``j`` at threshold ``tau`` is scored as

    criterion(S; j, tau) + alpha * sum_{i in S} w_i * sigma[i, j] * mask[i, j] / sum_{i in S} w_i

where the criterion is the size-weighted child Gini impurity (classification)
or the size-weighted child mean squared error (regression). Rows with
``x[:, j] <= tau`` go left.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ContractError, FormatError

CLASSIFY = "classify"
REGRESS = "regress"
TIE_TOL = 1e-12


@dataclass(frozen=True)
class TreeParams:
    alpha: float = 0.0
    max_depth: int = 3
    min_samples_split: int = 2
    min_impurity_decrease: float = 0.0
    max_features: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError("alpha must be nonnegative")
        if self.max_depth < 1:
            raise ContractError("max_depth must be at least 1")
        if self.min_samples_split < 2:
            raise ContractError("min_samples_split must be at least 2")
        if self.min_impurity_decrease < 0:
            raise ContractError("min_impurity_decrease must be nonnegative")
        if self.max_features is not None and not 0 < self.max_features <= 1:
            raise ContractError("max_features must lie in (0, 1]")


class Split(NamedTuple):
    feature: int
    threshold: float
    score: float


def gini(class_counts) -> float:
    """Gini impurity sum_c p_c (1 - p_c) of a (negatives, positives) count pair."""
    counts = np.asarray(class_counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ContractError("gini of an empty node is undefined")
    p = counts / total
    return float(np.sum(p * (1.0 - p)))


def split_penalty(node_samples, feature: int, mask, sigma=None, sample_weight=None) -> float:
    """Weighted share of node rows missing ``feature`` and not exempted by sigma."""
    idx = np.asarray(node_samples)
    if idx.size == 0:
        raise ContractError("node has no samples")
    w = np.ones(idx.size) if sample_weight is None else np.asarray(sample_weight, float)[idx]
    miss = np.asarray(mask, dtype=bool)[idx, feature].astype(float)
    if sigma is not None:
        miss = miss * np.asarray(sigma, dtype=float)[idx, feature]
    return float(np.dot(w, miss) / w.sum())


def _node_criterion(y, w, task):
    W = w.sum()
    if task == CLASSIFY:
        P = np.dot(w, y)
        return 2.0 * P * (W - P) / (W * W)
    s1 = np.dot(w, y)
    return max(np.dot(w, y * y) - s1 * s1 / W, 0.0) / W


def _is_pure(y, task) -> bool:
    return bool(y.size == 0 or np.all(y == y[0]))


def _feature_candidates(v, y, w, task):
    """Sorted-scan scores for every cut between distinct consecutive values."""
    order = np.argsort(v, kind="stable")
    v, y, w = v[order], y[order], w[order]
    valid = v[:-1] < v[1:]
    if not valid.any():
        return None, None
    W = w.sum()
    wl = np.cumsum(w)[:-1]
    wr = W - wl
    if task == CLASSIFY:
        pl = np.cumsum(w * y)[:-1]
        pr = pl[-1] + w[-1] * y[-1] - pl
        with np.errstate(invalid="ignore", divide="ignore"):
            score = 2.0 * (pl * (wl - pl) / wl + pr * (wr - pr) / wr) / W
    else:
        s1 = np.cumsum(w * y)
        s2 = np.cumsum(w * y * y)
        t1, t2 = s1[-1], s2[-1]
        s1, s2 = s1[:-1], s2[:-1]
        with np.errstate(invalid="ignore", divide="ignore"):
            sse_l = np.maximum(s2 - s1 * s1 / wl, 0.0)
            sse_r = np.maximum((t2 - s2) - (t1 - s1) ** 2 / wr, 0.0)
        score = (sse_l + sse_r) / W
    lo, hi = v[:-1][valid], v[1:][valid]
    thr = 0.5 * (lo + hi)
    thr = np.where(thr < hi, thr, lo)
    return thr, score[valid]


def _best_split(x, y, w, mask, sigma, idx, features, params: TreeParams, task):
    yn, wn = y[idx], w[idx]
    if wn.sum() < params.min_samples_split or _is_pure(yn, task):
        return None
    parent = _node_criterion(yn, wn, task)
    W = wn.sum()
    sub_mask = mask[np.ix_(idx, features)].astype(float)
    if sigma is not None:
        sub_mask *= sigma[np.ix_(idx, features)]
    penalty = (wn @ sub_mask) / W

    best = None
    for k, j in enumerate(features):
        thr, score = _feature_candidates(x[idx, j], yn, wn, task)
        if thr is None:
            continue
        total = score + params.alpha * penalty[k]
        m = int(np.argmin(total))
        # argmin is the lowest threshold among exact ties; widen to the tolerance band
        m = int(np.flatnonzero(total <= total[m] + TIE_TOL)[0])
        if best is None or total[m] < best.score - TIE_TOL:
            best = Split(int(j), float(thr[m]), float(total[m]))
    if best is None or parent - best.score < params.min_impurity_decrease - TIE_TOL:
        return None
    return best


def best_split(x, y, mask, node_samples=None, params: TreeParams | None = None, sigma=None,
               sample_weight=None, task: str = CLASSIFY, features=None) -> Split | None:
    """Minimizer of criterion + alpha * penalty over all (feature, midpoint) pairs.

    Ties within 1e-12 go to the lower feature index, then the lower threshold.
    Returns None when the node is pure, too small, or no split reduces the
    parent criterion by at least ``min_impurity_decrease``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    params = params or TreeParams()
    idx = np.arange(x.shape[0]) if node_samples is None else np.asarray(node_samples)
    w = np.ones(x.shape[0]) if sample_weight is None else np.asarray(sample_weight, float)
    feats = np.arange(x.shape[1]) if features is None else np.asarray(features)
    sig = None if sigma is None else np.asarray(sigma, dtype=float)
    return _best_split(x, y, w, mask, sig, idx, feats, params, task)


@dataclass(eq=False)
class DecisionTree:
    """Array-backed binary tree. ``feature[u] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    params: TreeParams = field(default_factory=TreeParams)
    task: str = CLASSIFY
    n_features: int = 0

    root = 0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, u: int) -> bool:
        return self.feature[u] < 0

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for u in range(self.n_nodes):
            if not self.is_leaf(u):
                depth[self.left[u]] = depth[self.right[u]] = depth[u] + 1
        return int(depth.max())

    def apply(self, x) -> np.ndarray:
        """Leaf id reached by every row of ``x``."""
        return self._walk(x)[0]

    def on_path(self, x) -> np.ndarray:
        """(n, n_features) boolean matrix: feature used on the row's decision path."""
        return self._walk(x)[1]

    def _walk(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        if self.n_features and x.shape[1] != self.n_features:
            raise ContractError(f"expected {self.n_features} features, got {x.shape[1]}")
        node = np.zeros(n, dtype=np.int64)
        used = np.zeros((n, x.shape[1]), dtype=bool)
        rows = np.arange(n)
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            u = node[r]
            j = self.feature[u]
            v = x[r, j]
            if np.isnan(v).any():
                raise ContractError("NA value reached a split; predict on imputed rows")
            used[r, j] = True
            node[r] = np.where(v <= self.threshold[u], self.left[u], self.right[u])
            active = self.feature[node] >= 0
        return node, used

    def node_indicator(self, x) -> np.ndarray:
        """(n, n_nodes) boolean matrix: node lies on the row's decision path."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        out = np.zeros((n, self.n_nodes), dtype=bool)
        node = np.zeros(n, dtype=np.int64)
        rows = np.arange(n)
        out[:, 0] = True
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            u = node[r]
            v = x[r, self.feature[u]]
            if np.isnan(v).any():
                raise ContractError("NA value reached a split; predict on imputed rows")
            node[r] = np.where(v <= self.threshold[u], self.left[u], self.right[u])
            out[r, node[r]] = True
            active = self.feature[node] >= 0
        return out

    def predict(self, x) -> np.ndarray:
        return self.value[self.apply(x)]

    def decision_path(self, row) -> list[int]:
        row = np.asarray(row, dtype=float).ravel()
        path = [0]
        u = 0
        while self.feature[u] >= 0:
            v = row[self.feature[u]]
            if np.isnan(v):
                raise ContractError("NA value reached a split; predict on imputed rows")
            u = int(self.left[u] if v <= self.threshold[u] else self.right[u])
            path.append(u)
        return path

    def to_dict(self) -> dict:
        nodes = []
        for u in range(self.n_nodes):
            node = {"id": u, "n_samples": float(self.n_samples[u])}
            if self.is_leaf(u):
                node["value"] = float(self.value[u])
            else:
                node.update(feature=int(self.feature[u]), threshold=float(self.threshold[u]),
                            left=int(self.left[u]), right=int(self.right[u]),
                            value=float(self.value[u]))
            nodes.append(node)
        return {"type": "tree", "task": self.task, "root": 0, "n_features": self.n_features,
                "params": asdict(self.params), "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        try:
            nodes = sorted(d["nodes"], key=lambda nd: nd["id"])
            if [nd["id"] for nd in nodes] != list(range(len(nodes))) or d.get("root", 0) != 0:
                raise FormatError("tree node ids must be 0..n-1 with root 0")
            feature = np.array([nd.get("feature", -1) for nd in nodes], dtype=np.int64)
            tree = cls(
                feature=feature,
                threshold=np.array([nd.get("threshold", np.nan) for nd in nodes], dtype=float),
                left=np.array([nd.get("left", -1) for nd in nodes], dtype=np.int64),
                right=np.array([nd.get("right", -1) for nd in nodes], dtype=np.int64),
                value=np.array([nd["value"] for nd in nodes], dtype=float),
                n_samples=np.array([nd.get("n_samples", 0.0) for nd in nodes], dtype=float),
                params=TreeParams(**d.get("params", {})),
                task=d.get("task", CLASSIFY),
                n_features=int(d.get("n_features", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed tree: {exc}") from exc
        return tree


def fit_tree(x, y, mask=None, params: TreeParams | None = None, sigma=None, sample_weight=None,
             task: str = CLASSIFY, rng=None) -> DecisionTree:
    """Grow a tree depth-first; node ids are assigned in preorder.

    ``x`` must be imputed. Leaves hold the weighted positive fraction
    (classify) or weighted mean target (regress). Rows with zero weight
    are ignored. ``params.max_features`` enables per-node feature
    subsampling driven by ``rng`` (default: seeded from ``params.seed``).
    """
    params = params or TreeParams()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("cannot fit a tree on empty data")
    if np.isnan(x).any():
        raise ContractError("x must be imputed (no NaN)")
    n, d = x.shape
    if y.shape != (n,):
        raise ContractError("y length must match x")
    if task == CLASSIFY and not np.isin(y, (0, 1)).all():
        raise ContractError("classification labels must be 0/1")
    mask = np.zeros((n, d), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    sig = None if sigma is None else np.asarray(sigma, dtype=float)
    if params.max_features is not None and params.max_features < 1:
        rng = rng if rng is not None else np.random.default_rng(params.seed)
        n_sub = max(1, int(np.ceil(params.max_features * d)))
    else:
        n_sub = d
    all_features = np.arange(d)

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        u = len(feature)
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        wn = w[idx]
        value.append(float(np.dot(wn, y[idx]) / wn.sum()))
        count.append(float(wn.sum()))
        return u

    def grow(idx, depth):
        u = new_node(idx)
        if depth >= params.max_depth:
            return u
        feats = all_features if n_sub == d else np.sort(rng.choice(d, n_sub, replace=False))
        split = _best_split(x, y, w, mask, sig, idx, feats, params, task)
        if split is None:
            return u
        go_left = x[idx, split.feature] <= split.threshold
        feature[u] = split.feature
        threshold[u] = split.threshold
        left[u] = grow(idx[go_left], depth + 1)
        right[u] = grow(idx[~go_left], depth + 1)
        return u

    root_idx = np.flatnonzero(w > 0)
    if root_idx.size == 0:
        raise ContractError("all sample weights are zero")
    grow(root_idx, 0)
    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
        n_samples=np.array(count, dtype=float),
        params=params,
        task=task,
        n_features=d,
    )


def node_missingness(tree: DecisionTree, x, mask) -> np.ndarray:
    """Per internal node, the fraction of rows reaching it that miss its split feature.

    Leaves get NaN, as do nodes no row reaches.
    """
    visits = tree.node_indicator(x)
    mask = np.asarray(mask, dtype=bool)
    reach = visits.sum(axis=0).astype(float)
    internal = tree.feature >= 0
    miss = np.zeros(tree.n_nodes)
    miss[internal] = (visits[:, internal] & mask[:, tree.feature[internal]]).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = miss / reach
    frac[tree.feature < 0] = np.nan
    return frac


def _color(frac: float) -> str:
    # white (no missingness) to red (all rows missing the split feature)
    g = int(round(255 * (1.0 - frac)))
    return f"#ff{g:02x}{g:02x}"


def to_dot(tree: DecisionTree, feature_names=None, missingness=None, name: str = "tree") -> str:
    """Graphviz source: internal nodes read ``name <= tau``, leaves show value and count."""
    names = feature_names or [f"x{j}" for j in range(max(tree.n_features, 1))]
    lines = [f"digraph {name} {{", '  node [shape=box, style="rounded,filled", fillcolor="#ffffff"];']
    for u in range(tree.n_nodes):
        if tree.is_leaf(u):
            label = f"value = {tree.value[u]:.3f}\\nn = {tree.n_samples[u]:g}"
            lines.append(f'  {u} [label="{label}", fillcolor="#e8f0fe"];')
        else:
            label = f"{names[tree.feature[u]]} <= {tree.threshold[u]:.4g}"
            attrs = f'label="{label}"'
            if missingness is not None and np.isfinite(missingness[u]):
                attrs += f', fillcolor="{_color(float(missingness[u]))}"'
                attrs = attrs.replace(f'{label}"', f'{label}\\nmissing = {missingness[u]:.2f}"', 1)
            lines.append(f"  {u} [{attrs}];")
    for u in range(tree.n_nodes):
        if not tree.is_leaf(u):
            lines.append(f'  {u} -> {tree.left[u]} [label="yes"];')
            lines.append(f'  {u} -> {tree.right[u]} [label="no"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
