"""Data collection rules that guarantee a feature is observed, and trees that respect them.

A rule ``(T, A, j)`` says: whenever the features in ``T`` are observed and
lie in the box ``A``, feature ``j`` is observed too. A tree node satisfies a
rule set when the constraints imposed by its ancestors' splits activate a
rule for the node's split feature; a tree whose nodes all do so never reads
a missing value.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import dataset as dsm
from .errors import SpecificationError
from .reliance import empirical_reliance
from .tree import DecisionTree

INF = math.inf


@dataclass(frozen=True)
class Region:
    """``lo < x <= hi``, optionally restricted to a finite set of values."""

    lo: float = -INF
    hi: float = INF
    values: tuple | None = None

    def contains(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        inside = (v > self.lo) & (v <= self.hi)
        if self.values is not None:
            inside &= np.isin(v, self.values)
        return inside

    @classmethod
    def parse(cls, spec: dict) -> "Region":
        lo, hi, values = -INF, INF, None
        for op, v in spec.items():
            if op == "gt":
                lo = max(lo, float(v))
            elif op == "ge":
                lo = max(lo, math.nextafter(float(v), -INF))
            elif op == "le":
                hi = min(hi, float(v))
            elif op == "lt":
                hi = min(hi, math.nextafter(float(v), -INF))
            elif op == "eq":
                values = (float(v),)
            elif op == "in":
                values = tuple(sorted(float(u) for u in v))
            else:
                raise SpecificationError(f"unknown region operator {op!r}")
        return cls(lo, hi, values)

    def to_dict(self) -> dict:
        d = {}
        if self.lo > -INF:
            d["gt"] = self.lo
        if self.hi < INF:
            d["le"] = self.hi
        if self.values is not None:
            d["in"] = list(self.values)
        return d


@dataclass(frozen=True)
class OddcRule:
    antecedent: tuple  # ((feature, Region), ...); empty means "always observed"
    consequent: int

    def __post_init__(self):
        feats = [f for f, _ in self.antecedent]
        if self.consequent in feats:
            raise SpecificationError("a rule's consequent cannot appear in its antecedent")
        if len(set(feats)) != len(feats):
            raise SpecificationError("each antecedent feature may appear once")

    @property
    def features(self) -> tuple:
        return tuple(f for f, _ in self.antecedent)

    def active(self, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Rows where every antecedent feature is observed and inside its region."""
        on = np.ones(values.shape[0], dtype=bool)
        for f, region in self.antecedent:
            with np.errstate(invalid="ignore"):
                on &= ~mask[:, f] & region.contains(values[:, f])
        return on


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    dist: str
    args: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LabelCase:
    when: tuple  # ((feature, Region), ...)
    p: float


@dataclass(frozen=True)
class OddcProcess:
    features: tuple
    rules: tuple
    missing_rates: tuple
    label_cases: tuple
    label_default: float = 0.1
    seed: int = 0

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def feature_order(self) -> list[int]:
        """Features sorted so every rule's antecedent precedes its consequent."""
        d = len(self.features)
        deps = {j: set() for j in range(d)}
        for r in self.rules:
            deps[r.consequent].update(r.features)
        order, state = [], [0] * d

        def visit(j):
            if state[j] == 1:
                raise SpecificationError(f"rule cycle through feature {self.names[j]!r}")
            if state[j] == 2:
                return
            state[j] = 1
            for k in sorted(deps[j]):
                visit(k)
            state[j] = 2
            order.append(j)

        for j in range(d):
            visit(j)
        return order

    def label_probability(self, x) -> np.ndarray:
        """P(y = 1 | complete features), the Bayes score."""
        x = np.asarray(x, dtype=float)
        p = np.full(x.shape[0], self.label_default)
        done = np.zeros(x.shape[0], dtype=bool)
        for case in self.label_cases:
            hit = ~done
            for f, region in case.when:
                hit &= region.contains(x[:, f])
            p[hit] = case.p
            done |= hit
        return p

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        nm = self.names
        return {
            "features": [dict(name=f.name, dist=f.dist, **f.args) for f in self.features],
            "rules": [{"antecedent": {nm[f]: r.to_dict() for f, r in rule.antecedent},
                       "consequent": nm[rule.consequent]} for rule in self.rules],
            "missing_rates": {nm[j]: r for j, r in enumerate(self.missing_rates) if r},
            "label": {"cases": [{"when": {nm[f]: r.to_dict() for f, r in c.when}, "p": c.p}
                                for c in self.label_cases],
                      "default": self.label_default},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OddcProcess":
        try:
            feats = tuple(FeatureSpec(f["name"], f["dist"],
                                      {k: v for k, v in f.items() if k not in ("name", "dist")})
                          for f in d["features"])
            index = {f.name: j for j, f in enumerate(feats)}

            def conj(spec):
                return tuple(sorted((index[name], Region.parse(r)) for name, r in spec.items()))

            rules = tuple(OddcRule(conj(r.get("antecedent", {})), index[r["consequent"]])
                          for r in d.get("rules", ()))
            rates = tuple(float(d.get("missing_rates", {}).get(f.name, 0.0)) for f in feats)
            label = d.get("label", {})
            cases = tuple(LabelCase(conj(c["when"]), float(c["p"])) for c in label.get("cases", ()))
        except KeyError as exc:
            raise SpecificationError(f"process spec refers to unknown name {exc}") from exc
        proc = cls(feats, rules, rates, cases, float(label.get("default", 0.0)), int(d.get("seed", 0)))
        proc.feature_order()
        return proc

    @classmethod
    def load(cls, path) -> "OddcProcess":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _sample_feature(spec: FeatureSpec, x, index, rng, n):
    a = spec.args
    if spec.dist == "uniform":
        return rng.uniform(a.get("low", 0.0), a.get("high", 1.0), n)
    if spec.dist == "randint":
        return rng.integers(a["low"], a["high"] + 1, n).astype(float)
    if spec.dist == "normal":
        return rng.normal(a.get("mean", 0.0), a.get("std", 1.0), n)
    if spec.dist == "bernoulli":
        return (rng.random(n) < a["p"]).astype(float)
    if spec.dist == "logistic":
        parent = x[:, index[a["parent"]]]
        return (rng.random(n) < expit((parent - a["center"]) / a["scale"])).astype(float)
    if spec.dist == "conditional":
        parent = x[:, index[a["parent"]]]
        p = np.full(n, float(a.get("default", 0.0)))
        for value, prob in a["p"].items():
            p[parent == float(value)] = prob
        return (rng.random(n) < p).astype(float)
    raise SpecificationError(f"unknown distribution {spec.dist!r}")


def generate(process: OddcProcess, n: int, seed: int | None = None,
             return_complete: bool = False):
    """Sample ``n`` rows: complete features, rule-respecting mask, noisy labels.

    Features are drawn in declaration order (a parent must come first).
    Baseline missingness is applied everywhere except cells an active rule
    forces to be observed. With ``return_complete`` the fully observed
    feature matrix is returned as well.
    """
    rng = np.random.default_rng(process.seed if seed is None else seed)
    order = process.feature_order()
    d = len(process.features)
    index = {f.name: j for j, f in enumerate(process.features)}
    x = np.zeros((n, d))
    for j, spec in enumerate(process.features):
        if spec.dist in ("logistic", "conditional") and index[spec.args["parent"]] >= j:
            raise SpecificationError(f"feature {spec.name!r} must follow its parent")
        x[:, j] = _sample_feature(spec, x, index, rng, n)
    y = (rng.random(n) < process.label_probability(x)).astype(np.int64)
    draws = rng.random((n, d))
    mask = np.zeros((n, d), dtype=bool)
    for j in order:
        miss = draws[:, j] < process.missing_rates[j]
        for rule in process.rules:
            if rule.consequent == j:
                miss &= ~rule.active(x, mask)
        mask[:, j] = miss
    values = np.where(mask, np.nan, x)
    ds = dsm.Dataset(tuple(dsm.Column(nm) for nm in process.names), values, y,
                     provenance=({"generator": "oddc", "seed": int(seed if seed is not None else process.seed),
                                  "n": n},))
    return (ds, x) if return_complete else ds


def clinic_process(missing_rate: float = 0.6, noise: float = 0.1, seed: int = 0) -> OddcProcess:
    """Age always recorded; the cognitive test always given above 65; an MRI
    always taken after a positive test. The label is positive (up to
    ``noise`` flips) exactly for age > 65 with a positive test and MRI."""
    spec = {
        "features": [
            {"name": "age", "dist": "randint", "low": 40, "high": 90},
            {"name": "test", "dist": "logistic", "parent": "age", "center": 65.0, "scale": 3.0},
            {"name": "mri", "dist": "conditional", "parent": "test", "p": {"0": 0.05, "1": 0.6}},
        ],
        "rules": [
            {"antecedent": {}, "consequent": "age"},
            {"antecedent": {"age": {"gt": 65}}, "consequent": "test"},
            {"antecedent": {"test": {"eq": 1}}, "consequent": "mri"},
        ],
        "missing_rates": {"test": missing_rate, "mri": missing_rate},
        "label": {"cases": [{"when": {"age": {"gt": 65}, "test": {"eq": 1}, "mri": {"eq": 1}},
                             "p": 1.0 - noise}],
                  "default": noise},
        "seed": seed,
    }
    return OddcProcess.from_dict(spec)


def check_generated(process: OddcProcess, ds: dsm.Dataset) -> list[tuple[int, int]]:
    """(rule index, row) pairs where an active rule's consequent is missing."""
    mask = ds.mask
    bad = []
    for k, rule in enumerate(process.rules):
        rows = np.flatnonzero(rule.active(ds.values, mask) & mask[:, rule.consequent])
        bad.extend((k, int(i)) for i in rows)
    return bad


# --------------------------------------------------------------------------
# Tree verification


@dataclass
class TreeCheck:
    ok: bool
    violations: list  # internal node ids no single rule covers
    union_ok: bool
    union_violations: list
    incomplete: list  # node ids where a region could not be represented exactly

    def __bool__(self):
        return self.ok


def _ancestor_boxes(tree: DecisionTree, source, to_raw):
    """Per node: (set of source features split on by ancestors, {source: [lo, hi]})."""
    out = {0: (frozenset(), {})}
    stack = [0]
    while stack:
        u = stack.pop()
        feats, box = out[u]
        if tree.is_leaf(u):
            continue
        k = int(tree.feature[u])
        j = source(k)
        tau = to_raw(k, float(tree.threshold[u]))
        lo, hi = box.get(j, (-INF, INF)) if j is not None else (-INF, INF)
        children = []
        if tau is None:  # one-hot split: observed, but no interval information
            children = [(tree.left[u], box), (tree.right[u], box)]
        else:
            children = [(tree.left[u], {**box, j: (lo, min(hi, tau))}),
                        (tree.right[u], {**box, j: (max(lo, tau), hi)})]
        for child, cbox in children:
            out[int(child)] = (feats | {j}, cbox)
            stack.append(int(child))
    return out


def _canon(lo, hi, domain):
    """Shrink (lo, hi] to the domain values it holds; None when empty."""
    if domain is None:
        return (lo, hi) if lo < hi else None
    inside = domain[(domain > lo) & (domain <= hi)]
    if inside.size == 0:
        return None
    below = domain[domain < inside[0]]
    return (float(below[-1]) if below.size else -INF, float(inside[-1]))


def _rule_box(rule, domains):
    """Canonical box of a rule's antecedent; None when a value set is not an interval."""
    box = {}
    for f, region in rule.antecedent:
        dom = domains.get(f)
        if region.values is None:
            box[f] = _canon(region.lo, region.hi, dom)
            continue
        if dom is None:
            return None
        inside = dom[(dom > region.lo) & (dom <= region.hi)]
        allowed = inside[np.isin(inside, region.values)]
        if allowed.size == 0:
            box[f] = None
            continue
        span = dom[(dom >= allowed[0]) & (dom <= allowed[-1])]
        if span.size != allowed.size:
            return None
        below = dom[dom < allowed[0]]
        box[f] = (float(below[-1]) if below.size else -INF, float(allowed[-1]))
    return box


def _contained(node_box, rule_box, feats):
    for f, target in rule_box.items():
        if target is None:
            return False
        got = node_box.get(f)
        if got is None:
            return False
        if not (got[0] >= target[0] and got[1] <= target[1]):
            return False
    return True


def _covered(box, rule_boxes, feats):
    """Box (dict over ``feats``) inside the union of rule boxes; by box difference."""
    for rb in rule_boxes:
        if _contained(box, rb, feats):
            return True
    for k, rb in enumerate(rule_boxes):
        if any(t is None for t in rb.values()):
            continue
        # split the box along the first boundary of rb that cuts it
        for f, (tlo, thi) in rb.items():
            lo, hi = box[f]
            if lo < tlo < hi:
                return (_covered({**box, f: (lo, tlo)}, rule_boxes, feats)
                        and _covered({**box, f: (tlo, hi)}, rule_boxes, feats))
            if lo < thi < hi:
                return (_covered({**box, f: (lo, thi)}, rule_boxes, feats)
                        and _covered({**box, f: (thi, hi)}, rule_boxes, feats))
    return False


def check_tree(tree: DecisionTree, rules, reference_data: dsm.Dataset | None = None,
               encoding: dsm.Encoding | None = None) -> TreeCheck:
    """Decide, for every internal node, whether its split feature is guaranteed observed.

    A node passes when some rule for its feature has all antecedent features
    either split on above it or never missing, and the ancestors' threshold
    constraints lie inside the rule's region. ``encoding`` maps tree features
    and thresholds back to raw columns; ``reference_data`` supplies the value
    domains used for equality constraints. The union check also accepts a
    node covered jointly by several rules with the same consequent.
    """
    rules = list(rules)
    if encoding is not None:
        sources = encoding.sources
        kinds = [encoding.columns[s].kind for s in sources]
        stats = encoding.standardization

        def source(k):
            return sources[k]

        def to_raw(k, tau):
            if kinds[k] != dsm.NUMERIC:
                return None
            return tau if stats is None else tau * stats[k][1] + stats[k][0]
    else:
        def source(k):
            return k

        def to_raw(k, tau):
            return tau

    discrete = {f for r in rules for f, reg in r.antecedent if reg.values is not None}
    domains = {}
    if reference_data is not None:
        for f in discrete:
            col = reference_data.values[:, f]
            domains[f] = np.unique(col[~np.isnan(col)])
    always = {r.consequent for r in rules if not r.antecedent}
    boxes = _ancestor_boxes(tree, source, to_raw)

    violations, union_viol, incomplete = [], [], []
    for u in range(tree.n_nodes):
        if tree.is_leaf(u):
            continue
        j = source(int(tree.feature[u]))
        if j in always:
            continue
        feats, box = boxes[u]
        canon_box = {}
        empty = False
        for f, (lo, hi) in box.items():
            c = _canon(lo, hi, domains.get(f))
            if c is None:
                empty = True
            canon_box[f] = c
        if empty:
            continue  # unreachable under the domain: vacuous
        cands = []
        for r in rules:
            if r.consequent != j or not r.antecedent:
                continue
            if not all(f in feats or f in always for f, _ in r.antecedent):
                continue
            rb = _rule_box(r, domains)
            if rb is None:
                incomplete.append(u)
                continue
            cands.append(rb)
        full_box = {f: canon_box.get(f) or _canon(-INF, INF, domains.get(f)) for rb in cands for f in rb}
        single = any(_contained(full_box, rb, None) for rb in cands)
        if not single:
            violations.append(u)
            if not (cands and _covered(full_box, cands, None)):
                union_viol.append(u)
    return TreeCheck(not violations, violations, not union_viol, union_viol, sorted(set(incomplete)))


@dataclass
class ZeroRelianceReport:
    ok: bool
    n_checked: int
    rho_hat: float
    check: TreeCheck
    violations: list  # (row, decision path) for reliant rows, at most 20

    def to_dict(self) -> dict:
        return {"ok": self.ok, "n_checked": self.n_checked, "rho_hat": self.rho_hat,
                "tree_satisfies_rules": self.check.ok, "violating_nodes": self.check.violations,
                "reliant_rows": [{"row": r, "path": p} for r, p in self.violations]}


def verify_zero_reliance(tree: DecisionTree, process: OddcProcess, n_check: int = 10_000, seed: int = 1,
                 reference: dsm.ImputedDataset | None = None, standardize: bool = False,
                 strategy: str = "zero") -> ZeroRelianceReport:
    """Check the rules on the tree, then measure reliance on fresh samples.

    ``reference`` carries the training-time encoding and fill values; without
    it the fresh data is encoded as-is (no standardization, zero fill).
    """
    ds = generate(process, n_check, seed)
    if reference is not None and reference.encoding is not None:
        enc = dsm.encode(ds, reference=reference.encoding)
        data = dsm.impute(enc, reference.strategy, reference=reference)
        encoding = reference.encoding
    else:
        enc = dsm.encode(ds, standardize)
        data = dsm.impute(enc, strategy)
        encoding = enc.encoding
    check = check_tree(tree, process.rules, ds, encoding)
    rep = empirical_reliance(tree, data)
    rows = np.flatnonzero(rep.per_sample)[:20]
    bad = [(int(i), tree.decision_path(data.x_imputed[i])) for i in rows]
    return ZeroRelianceReport(rep.rho_hat == 0.0, n_check, rep.rho_hat, check, bad)
