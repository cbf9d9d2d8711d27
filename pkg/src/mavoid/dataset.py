"""Tabular data with an explicit missingness mask.

A :class:`Dataset` stores raw cells (numbers or category ids, NaN for NA);
:func:`encode` one-hot expands and optionally standardizes it, and
:func:`impute` fills the NA cells while carrying the mask along unchanged.
All containers are immutable; every transform returns a new object.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError, MissingColumnError, ParseError, SchemaError

DEFAULT_NA_TOKENS = frozenset({"", "na", "NA", "NaN"})
NUMERIC = "numeric"
CATEGORICAL = "categorical"
MECHANISMS = ("MCAR", "MAR", "MNAR")
STRATEGIES = ("zero", "mean_mode")


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = NUMERIC
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Raw table: ``values[i, j]`` is a float, a category id, or NaN (missing)."""

    columns: tuple
    values: np.ndarray
    labels: np.ndarray
    label_name: str = "y"
    provenance: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ContractError("values must be a 2-d array")
        labels = np.asarray(self.labels)
        if labels.shape != (values.shape[0],):
            raise ContractError("labels length must equal the number of rows")
        if values.shape[1] != len(self.columns):
            raise ContractError("values width must equal the number of columns")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise SchemaError("labels must be binary 0/1")
        for j, col in enumerate(self.columns):
            if col.kind == CATEGORICAL:
                obs = values[:, j][~np.isnan(values[:, j])]
                if obs.size and (
                    (obs != np.round(obs)).any() or obs.min() < 0 or obs.max() >= len(col.categories)
                ):
                    raise ContractError(f"column {col.name!r}: category id out of vocabulary")
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "values", _frozen(values, float))
        object.__setattr__(self, "labels", _frozen(labels, np.int64))
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(self, values=self.values[rows], labels=self.labels[rows])

    def with_values(self, values, provenance=None) -> "Dataset":
        prov = self.provenance if provenance is None else tuple(self.provenance) + (provenance,)
        return replace(self, values=values, provenance=prov)

    def manifest(self) -> dict:
        return {
            "label": self.label_name,
            "n": self.n,
            "columns": [
                {"name": c.name, "kind": c.kind, "categories": list(c.categories)}
                for c in self.columns
            ],
            "provenance": [dict(p) for p in self.provenance],
        }


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def load_csv(path, label: str = "y", schema: dict | None = None,
             na_tokens: Iterable[str] = DEFAULT_NA_TOKENS) -> Dataset:
    """Read a comma-separated file with a header row.

    ``schema`` maps column names to ``"numeric"`` or ``"categorical"`` and
    overrides inference (a column is numeric when every observed cell parses
    as a float).
    """
    na_tokens = frozenset(na_tokens)
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file: header row required")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(r)}", row=i)
    if label not in header:
        raise MissingColumnError(f"label column {label!r} not found in header")
    unknown = set(schema) - set(header)
    if unknown:
        raise SchemaError(f"schema names unknown columns: {sorted(unknown)}")
    li = header.index(label)

    labels = []
    for i, r in enumerate(body, start=1):
        tok = r[li].strip()
        if tok in na_tokens:
            raise SchemaError(f"row {i}: label column {label!r} is missing")
        if not _is_number(tok) or float(tok) not in (0.0, 1.0):
            raise SchemaError(f"row {i}: label {tok!r} is not binary")
        labels.append(int(float(tok)))

    columns, data = [], []
    for j, name in enumerate(header):
        if j == li:
            continue
        raw = [r[j].strip() for r in body]
        observed = [t for t in raw if t not in na_tokens]
        kind = schema.get(name)
        if kind is None:
            kind = NUMERIC if all(_is_number(t) for t in observed) else CATEGORICAL
        if kind == NUMERIC:
            col = np.full(len(raw), np.nan)
            for i, t in enumerate(raw):
                if t in na_tokens:
                    continue
                if not _is_number(t):
                    raise ParseError(f"column {name!r}: {t!r} is not numeric", row=i + 1)
                col[i] = float(t)
            columns.append(Column(name, NUMERIC))
        else:
            cats = tuple(sorted(set(observed)))
            lookup = {c: k for k, c in enumerate(cats)}
            col = np.array([np.nan if t in na_tokens else lookup[t] for t in raw], dtype=float)
            columns.append(Column(name, CATEGORICAL, cats))
        data.append(col)

    values = np.column_stack(data) if data else np.empty((len(body), 0))
    return Dataset(tuple(columns), values.reshape(len(body), len(columns)),
                   np.array(labels, dtype=np.int64), label_name=label)


def _format_cell(v: float, col: Column) -> str:
    if math.isnan(v):
        return ""
    if col.kind == CATEGORICAL:
        return col.categories[int(v)]
    return repr(float(v))


def write_csv(ds: Dataset, path) -> None:
    """Write ``ds`` with the label as the last column; NA cells are empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names + [ds.label_name])
        for i in range(ds.n):
            w.writerow([_format_cell(v, c) for v, c in zip(ds.values[i], ds.columns)]
                       + [str(int(ds.labels[i]))])


def write_dataset(ds: Dataset, csv_path, manifest_path=None, extra: dict | None = None) -> None:
    write_csv(ds, csv_path)
    if manifest_path is not None:
        man = ds.manifest()
        if extra:
            man.update(extra)
        Path(manifest_path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Encoding


@dataclass(frozen=True)
class Encoding:
    """Fitted encoder state, reusable on test data."""

    columns: tuple
    feature_names: tuple
    sources: tuple
    standardization: tuple | None  # per encoded feature (mean, std), or None
    clamped: tuple = ()  # names of constant columns whose std was clamped to 1

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "kind": c.kind, "categories": list(c.categories)}
                        for c in self.columns],
            "feature_names": list(self.feature_names),
            "sources": list(self.sources),
            "standardization": None if self.standardization is None
            else [list(s) for s in self.standardization],
            "clamped": list(self.clamped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Encoding":
        cols = tuple(Column(c["name"], c["kind"], tuple(c["categories"])) for c in d["columns"])
        st = d.get("standardization")
        return cls(cols, tuple(d["feature_names"]), tuple(d["sources"]),
                   None if st is None else tuple(tuple(s) for s in st), tuple(d.get("clamped", ())))


@dataclass(frozen=True, eq=False)
class EncodedDataset:
    x: np.ndarray
    labels: np.ndarray
    encoding: Encoding

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, float))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))

    @property
    def mask(self) -> np.ndarray:
        return np.isnan(self.x)

    @property
    def feature_names(self) -> tuple:
        return self.encoding.feature_names

    @property
    def standardization(self):
        return self.encoding.standardization

    def groups(self) -> dict[int, list[int]]:
        """Encoded column indices per source column."""
        out: dict[int, list[int]] = {}
        for k, s in enumerate(self.encoding.sources):
            out.setdefault(s, []).append(k)
        return out


def fit_encoding(ds: Dataset, standardize: bool = False) -> Encoding:
    names, sources = [], []
    for j, col in enumerate(ds.columns):
        if col.kind == NUMERIC:
            names.append(col.name)
            sources.append(j)
        else:
            for cat in col.categories:
                names.append(f"{col.name}={cat}")
                sources.append(j)
    enc = Encoding(tuple(ds.columns), tuple(names), tuple(sources), None)
    if not standardize:
        return enc
    stats, clamped = [], []
    for k, j in enumerate(sources):
        if ds.columns[j].kind != NUMERIC:
            stats.append((0.0, 1.0))
            continue
        obs = ds.values[:, j][~np.isnan(ds.values[:, j])]
        mean = float(obs.mean()) if obs.size else 0.0
        std = float(obs.std()) if obs.size else 0.0
        if not std > 0:
            std = 1.0
            clamped.append(names[k])
        stats.append((mean, std))
    return replace(enc, standardization=tuple(stats), clamped=tuple(clamped))


def encode(ds: Dataset, standardize: bool = False, reference=None) -> EncodedDataset:
    """One-hot expand categoricals and optionally standardize numerics.

    Statistics come from the observed cells of ``ds`` unless ``reference``
    (an :class:`Encoding` or :class:`EncodedDataset` fitted on training
    data) is supplied. A constant column gets std 1 and is listed in
    ``encoding.clamped``.
    """
    if reference is None:
        enc = fit_encoding(ds, standardize)
    else:
        enc = reference.encoding if isinstance(reference, EncodedDataset) else reference
        if [c.name for c in enc.columns] != ds.names:
            raise ContractError("dataset columns do not match the reference encoding")
    x = np.empty((ds.n, len(enc.sources)))
    offset = {}
    for k, j in enumerate(enc.sources):
        col = enc.columns[j]
        src = ds.values[:, j]
        if col.kind == NUMERIC:
            x[:, k] = src
        else:
            pos = offset.setdefault(j, k)
            with np.errstate(invalid="ignore"):
                x[:, k] = (src == (k - pos)).astype(float)
            x[np.isnan(src), k] = np.nan
    if enc.standardization is not None:
        mean = np.array([s[0] for s in enc.standardization])
        std = np.array([s[1] for s in enc.standardization])
        x = (x - mean) / std
    return EncodedDataset(x, ds.labels, enc)


def decode_category(enc: EncodedDataset, row: int, source: int):
    """Recover the category label of a one-hot group, or None when missing."""
    cols = enc.groups()[source]
    vals = enc.x[row, cols]
    if np.isnan(vals).any():
        return None
    return enc.encoding.columns[source].categories[int(np.argmax(vals))]


# --------------------------------------------------------------------------
# Imputation


@dataclass(frozen=True, eq=False)
class ImputedDataset:
    x_imputed: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    strategy: str
    fill_values: np.ndarray
    encoding: Encoding | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_imputed", _frozen(self.x_imputed, float))
        object.__setattr__(self, "mask", _frozen(self.mask, bool))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "fill_values", _frozen(self.fill_values, float))

    @property
    def x(self) -> np.ndarray:
        return self.x_imputed

    @property
    def n(self) -> int:
        return self.x_imputed.shape[0]

    @property
    def d(self) -> int:
        return self.x_imputed.shape[1]

    @property
    def feature_names(self) -> tuple:
        if self.encoding is None:
            return tuple(f"x{j}" for j in range(self.d))
        return self.encoding.feature_names

    def subset(self, rows) -> "ImputedDataset":
        rows = np.asarray(rows)
        return replace(self, x_imputed=self.x_imputed[rows], mask=self.mask[rows],
                       labels=self.labels[rows])


def fit_fill_values(ds: EncodedDataset, strategy: str) -> np.ndarray:
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"unknown imputation strategy {strategy!r}")
    d = ds.x.shape[1]
    if strategy == "zero":
        return np.zeros(d)
    fill = np.zeros(d)
    for j, cols in ds.groups().items():
        sub = ds.x[:, cols]
        observed = ~np.isnan(sub).any(axis=1)
        if ds.encoding.columns[j].kind == NUMERIC:
            fill[cols] = sub[observed].mean(axis=0) if observed.any() else 0.0
        else:
            counts = np.nan_to_num(sub[observed]).sum(axis=0) if observed.any() else np.zeros(len(cols))
            mode = np.zeros(len(cols))
            if counts.sum() > 0:
                mode[int(np.argmax(counts))] = 1.0
            fill[cols] = mode
    return fill


def impute(ds: EncodedDataset, strategy: str = "zero", reference=None) -> ImputedDataset:
    """Fill NA cells; ``reference`` supplies fill values fitted on training data."""
    if reference is None:
        fill = fit_fill_values(ds, strategy)
    else:
        if reference.strategy != strategy:
            raise ContractError("reference was fitted with a different strategy")
        fill = np.asarray(reference.fill_values)
    mask = ds.mask
    x = np.where(mask, fill[None, :], ds.x)
    return ImputedDataset(x, mask, ds.labels, strategy, fill, ds.encoding)


def prepare(train: Dataset, test: Dataset | None = None, standardize: bool = False,
            strategy: str = "zero"):
    """Encode and impute ``train``; apply the same fitted state to ``test``."""
    enc_tr = encode(train, standardize)
    imp_tr = impute(enc_tr, strategy)
    if test is None:
        return imp_tr
    imp_te = impute(encode(test, standardize, reference=enc_tr), strategy, reference=imp_tr)
    return imp_tr, imp_te


# --------------------------------------------------------------------------
# Synthetic missingness


def _calibrate_intercept(z: np.ndarray, slope: float, rate: float) -> float:
    """Intercept a with mean(sigmoid(a + slope*z)) == rate, by bisection."""
    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expit(mid + slope * z).mean() < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def inject_missingness(ds: Dataset, mechanism: str = "MCAR", rate: float = 0.5,
                       feature_fraction: float = 1.0, seed: int = 0,
                       features: Sequence[int] | None = None,
                       mar_slope: float = 2.0) -> Dataset:
    """Mask additional cells of ``ds``.

    ``features`` pins the masked columns; otherwise a random subset of
    ``ceil(feature_fraction * d)`` eligible columns is drawn. MAR masks with
    a logistic model on one fully observed numeric column left outside the
    drawn subset (the subset is redrawn until one is). MNAR only masks
    values outside the column's interquartile range.
    """
    mechanism = mechanism.upper()
    if mechanism not in MECHANISMS:
        raise ConfigurationError(f"unknown mechanism {mechanism!r}")
    if not 0.0 <= rate <= 1.0:
        raise ConfigurationError("rate must lie in [0, 1]")
    if not 0.0 < feature_fraction <= 1.0:
        raise ConfigurationError("feature_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    values = np.array(ds.values)
    numeric = [j for j, c in enumerate(ds.columns) if c.kind == NUMERIC]

    if mechanism == "MNAR":
        eligible = numeric
        if not eligible:
            raise ConfigurationError("MNAR needs numeric columns; quantiles are undefined otherwise")
    else:
        eligible = list(range(ds.d))
    if features is None:
        k = min(len(eligible), math.ceil(feature_fraction * len(eligible)))
        chosen = sorted(int(j) for j in rng.choice(eligible, size=k, replace=False))
        complete = [j for j in numeric if not np.isnan(ds.values[:, j]).any()]
        if mechanism == "MAR" and complete and k < len(eligible):
            # redraw until a complete column is left over to drive the masking
            while all(j in chosen for j in complete):
                chosen = sorted(int(j) for j in rng.choice(eligible, size=k, replace=False))
    else:
        chosen = sorted(int(j) for j in features)
        bad = [j for j in chosen if j not in eligible]
        if bad:
            raise ConfigurationError(f"features {bad} are not eligible for {mechanism}")

    record = {"mechanism": mechanism, "rate": rate, "feature_fraction": feature_fraction,
              "seed": seed, "features": [ds.columns[j].name for j in chosen]}
    if rate == 0.0 or not chosen:
        return ds.with_values(values, record)

    n = ds.n
    if mechanism == "MCAR":
        for j in chosen:
            values[rng.random(n) < rate, j] = np.nan
    elif mechanism == "MAR":
        complete = [j for j in numeric if not np.isnan(ds.values[:, j]).any() and j not in chosen]
        if not complete:
            raise ConfigurationError("MAR needs a fully observed numeric column outside the masked set")
        driver = int(rng.choice(complete))
        z = ds.values[:, driver]
        z = (z - z.mean()) / (z.std() or 1.0)
        record["driver"] = ds.columns[driver].name
        for j in chosen:
            slope = mar_slope * (1 if rng.random() < 0.5 else -1)
            prob = np.full(n, rate) if rate >= 1.0 else expit(_calibrate_intercept(z, slope, rate) + slope * z)
            values[rng.random(n) < prob, j] = np.nan
    else:
        for j in chosen:
            col = ds.values[:, j]
            obs = ~np.isnan(col)
            if not obs.any():
                continue
            q25, q75 = np.quantile(col[obs], [0.25, 0.75])
            with np.errstate(invalid="ignore"):
                region = obs & ((col < q25) | (col > q75))
            frac = region.sum() / obs.sum()
            p = min(1.0, rate / frac) if frac > 0 else 0.0
            values[region & (rng.random(n) < p), j] = np.nan
    return ds.with_values(values, record)


# --------------------------------------------------------------------------
# Splitting


def _labels_of(ds_or_labels) -> np.ndarray:
    if isinstance(ds_or_labels, (Dataset, EncodedDataset, ImputedDataset)):
        return np.asarray(ds_or_labels.labels)
    return np.asarray(ds_or_labels)


def split_indices(labels, test_fraction: float = 0.2, seed: int = 0):
    """Stratified (train_idx, test_idx), both sorted."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError("test_fraction must lie in (0, 1)")
    labels = _labels_of(labels)
    n = labels.size
    if n < 2:
        raise ConfigurationError("need at least two rows to split")
    n_test = min(n - 1, max(1, int(round(test_fraction * n))))
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    pools = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    ideal = np.array([p.size * n_test / n for p in pools])
    take = np.floor(ideal).astype(int)
    for c in np.argsort(-(ideal - take), kind="stable")[: n_test - take.sum()]:
        take[c] += 1
    test = np.concatenate([p[:t] for p, t in zip(pools, take)])
    train = np.concatenate([p[t:] for p, t in zip(pools, take)])
    return np.sort(train), np.sort(test)


def train_test_split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0):
    train, test = split_indices(ds, test_fraction, seed)
    return ds.subset(train), ds.subset(test)


def kfold(ds_or_labels, k: int = 3, seed: int = 0):
    """Stratified k-fold: list of (train_idx, validation_idx)."""
    labels = _labels_of(ds_or_labels)
    n = labels.size
    if k < 2:
        raise ConfigurationError("k must be at least 2")
    if k > n:
        raise ConfigurationError(f"k={k} exceeds the number of rows n={n}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    fold = np.empty(n, dtype=int)
    fold[order] = np.arange(n) % k
    return [(np.flatnonzero(fold != f), np.flatnonzero(fold == f)) for f in range(k)]


def from_arrays(x, y, names: Sequence[str] | None = None, label_name: str = "y") -> Dataset:
    """Numeric-only Dataset from an (n, d) array with NaN for missing."""
    x = np.asarray(x, dtype=float)
    names = names or [f"x{j}" for j in range(x.shape[1])]
    return Dataset(tuple(Column(nm) for nm in names), x, np.asarray(y), label_name=label_name)
