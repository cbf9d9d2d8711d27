"""Command-line entry point: ``mavoid {train,sweep,synth,inject,inspect,verify-oddc}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as dsm
from . import evaluation as ev
from . import oddc
from .ensemble import Ensemble
from .errors import FormatError, MavoidError, MissingColumnError, PropertyViolation, UsageError
from .linear import LinearModel
from .tree import DecisionTree, node_missingness, to_dot

MODEL_FORMAT = "mavoid-model"
RANDOM_SEARCH = {"ma_rf": 10, "ma_gbt": 10}

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


# --------------------------------------------------------------------------
# helpers


def _write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _parse_value(token: str):
    for cast in (int, float):
        try:
            return cast(token)
        except ValueError:
            pass
    return token


def parse_grid(entries) -> dict:
    """``["alpha=0,0.1", "max_depth=1..9"]`` -> ``{"alpha": [0, 0.1], "max_depth": [1, ..., 9]}``."""
    grid = {}
    if isinstance(entries, dict):
        entries = [entries]
    for entry in entries or ():
        if isinstance(entry, dict):
            grid.update({k: list(v) if isinstance(v, (list, tuple)) else [v] for k, v in entry.items()})
            continue
        key, sep, spec = entry.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"grid entry {entry!r} must look like name=v1,v2")
        values = []
        for tok in filter(None, (t.strip() for t in spec.split(","))):
            if ".." in tok:
                lo, hi = tok.split("..")
                values.extend(range(int(lo), int(hi) + 1))
            else:
                values.append(_parse_value(tok))
        if not values:
            raise UsageError(f"grid entry {key!r} has no values")
        grid[key.strip()] = values
    return grid


def _load_config(path) -> dict:
    if not path:
        return {}
    text = Path(path).read_bytes()
    try:
        if str(path).endswith(".json"):
            return json.loads(text)
        return tomllib.loads(text.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from exc


def _merge(args, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from the config file, then from ``defaults``."""
    conf = _load_config(getattr(args, "config", None))
    for key, value in conf.items():
        key = key.replace("-", "_")
        if key != "grid" and hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, default)
    if getattr(args, "grid", None) in (None, []) and "grid" in conf:
        args.grid = [conf["grid"]]
    return args


def _process(spec: str) -> oddc.OddcProcess:
    if spec == "clinic":
        return oddc.clinic_process()
    return oddc.OddcProcess.load(spec)


def _load_data(args) -> dsm.Dataset:
    if args.data:
        schema = json.loads(args.schema) if getattr(args, "schema", None) else None
        try:
            return dsm.load_csv(args.data, args.label, schema)
        except MissingColumnError as exc:
            raise UsageError(str(exc)) from exc
    if args.synth:
        return oddc.generate(_process(args.synth), args.n, args.synth_seed)
    raise UsageError("give --data CSV (with --label) or --synth SPEC")


def _pipeline(args) -> ev.Pipeline:
    try:
        return ev.Pipeline(args.estimator, args.imputation, args.standardize,
                           folds=args.folds, bootstrap_b=args.bootstrap)
    except MavoidError as exc:
        raise UsageError(str(exc)) from exc


def _candidate_points(args) -> list[dict]:
    grid = parse_grid(args.grid) if args.grid else dict(ev.DEFAULT_GRIDS[args.estimator])
    points = ev.expand_grid(grid)
    n_random = args.n_random if args.n_random is not None else RANDOM_SEARCH.get(args.estimator)
    if n_random:
        points = ev.sample_grid(grid, n_random, args.seed)
    return [dict(p, seed=args.seed) if args.estimator in ("ma_rf", "ma_gbt") else p for p in points]


def _model_document(model, estimator, tr_data: dsm.ImputedDataset, label: str) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": __version__,
        "estimator": estimator,
        "label": label,
        "model": model.to_dict(),
        "encoding": tr_data.encoding.to_dict(),
        "imputation": {"strategy": tr_data.strategy,
                       "fill_values": [float(v) for v in tr_data.fill_values]},
    }


def load_model_file(path):
    """Returns (model, encoding, imputation dict, document)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path} is not a {MODEL_FORMAT} file")
    try:
        model = ev.model_from_dict(doc["model"])
        enc = dsm.Encoding.from_dict(doc["encoding"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
    return model, enc, doc.get("imputation", {"strategy": "zero", "fill_values": None}), doc


def _prepare_with(ds: dsm.Dataset, enc: dsm.Encoding, imputation: dict) -> dsm.ImputedDataset:
    encoded = dsm.encode(ds, reference=enc)
    fill = imputation.get("fill_values")
    if fill is None:
        return dsm.impute(encoded, imputation.get("strategy", "zero"))
    ref = dsm.ImputedDataset(np.zeros((0, len(fill))), np.zeros((0, len(fill)), bool), np.zeros(0),
                             imputation["strategy"], np.asarray(fill))
    return dsm.impute(encoded, imputation["strategy"], reference=ref)


def _manifest(args, command: str, extra: dict | None = None) -> dict:
    conf = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    man = {"command": command, "version": __version__, "config": conf}
    if extra:
        man.update(extra)
    return man


# --------------------------------------------------------------------------
# commands

TRAIN_DEFAULTS = dict(estimator="ma_dt", mode="alpha_star", imputation="zero", standardize=True,
                      seed=0, folds=3, bootstrap=1000, n=5000, synth_seed=0, label="y",
                      test_fraction=0.2, n_random=None, out="mavoid-run")


def cmd_train(args) -> int:
    args = _merge(args, TRAIN_DEFAULTS)
    if args.mode not in ev.MODES:
        raise UsageError(f"unknown mode {args.mode!r}")
    if args.estimator not in ev.ESTIMATORS:
        raise UsageError(f"unknown estimator {args.estimator!r}; choose from {', '.join(ev.ESTIMATORS)}")
    ds = _load_data(args)
    pipe = _pipeline(args)
    pipe = ev.Pipeline(pipe.estimator, pipe.imputation, pipe.standardize, args.test_fraction,
                       pipe.folds, pipe.bootstrap_b)
    points = _candidate_points(args)
    model, sel, report, tr_data = ev.run_split(ds, pipe, points, args.seed, args.mode)
    out = Path(args.out)
    doc = _model_document(model, args.estimator, tr_data, ds.label_name)
    _write_atomic(out / "model.json", _dumps(doc))
    rep = {"evaluation": report.to_dict(), "selection": sel.to_dict(),
           "chosen_alpha": float(sel.best.params.get("alpha", 0.0)), "estimator": args.estimator}
    _write_atomic(out / "report.json", _dumps(rep))
    summary = (
        f"estimator      {args.estimator} ({args.mode})\n"
        f"chosen params  {json.dumps(sel.best.params, sort_keys=True)}\n"
        f"test AUROC     {report.auroc:.4f}  95% CI ({report.auroc_ci[0]:.4f}, {report.auroc_ci[1]:.4f})\n"
        f"test rho_hat   {report.rho_hat:.4f}  95% CI ({report.rho_ci[0]:.4f}, {report.rho_ci[1]:.4f})\n"
        f"n_test         {report.n_test}\n"
    )
    _write_atomic(out / "summary.txt", summary)
    _write_atomic(out / "manifest.json", _dumps(_manifest(args, "train", {"dataset": ds.manifest()})))
    print(summary, end="")
    return 0


SWEEP_DEFAULTS = dict(TRAIN_DEFAULTS, seeds=[0, 1, 2, 3, 4], inner_grid=None, jobs=1,
                      out="sweep.csv", bootstrap=1000)


def cmd_sweep(args) -> int:
    args = _merge(args, SWEEP_DEFAULTS)
    grid = parse_grid(args.grid)
    if not grid:
        raise UsageError("sweep needs a nonempty --grid")
    if args.estimator not in ev.ESTIMATORS:
        raise UsageError(f"unknown estimator {args.estimator!r}")
    ds = _load_data(args)
    pipe = _pipeline(args)
    inner = parse_grid(args.inner_grid) if args.inner_grid else None
    if args.estimator in ("ma_rf", "ma_gbt"):
        grid = dict(grid, seed=grid.get("seed", [args.seed]))
    rows = ev.sweep(grid, pipe, ds, tuple(args.seeds), inner, args.mode, args.jobs)
    _write_atomic(args.out, ev.sweep_csv(rows))
    _write_atomic(str(args.out) + ".manifest.json",
                  _dumps(_manifest(args, "sweep", {"rows": len(rows), "dataset": ds.manifest()})))
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_synth(args) -> int:
    proc = _process(args.spec)
    ds = oddc.generate(proc, args.n, args.seed)
    manifest = args.manifest or str(args.out) + ".manifest.json"
    dsm.write_dataset(ds, args.out, manifest, {"process": proc.to_dict(), "version": __version__})
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def cmd_inject(args) -> int:
    ds = dsm.load_csv(args.data, args.label)
    out = dsm.inject_missingness(ds, args.mechanism, args.rate, args.feature_fraction, args.seed)
    manifest = args.manifest or str(args.out) + ".manifest.json"
    dsm.write_dataset(out, args.out, manifest, {"version": __version__})
    print(f"masked {int(out.mask.sum() - ds.mask.sum())} additional cells; wrote {args.out}")
    return 0


def _linear_table(model: LinearModel, names, mbar) -> str:
    order = sorted(range(model.theta.size), key=lambda j: (-abs(model.theta[j]), j))
    width = max([len("feature")] + [len(str(n)) for n in names])
    lines = [f"{'feature':<{width}}  {'theta':>12}  {'lambda_j':>10}  {'mbar_j':>8}"]
    for j in order:
        mb = "-" if mbar is None else f"{mbar[j]:.4f}"
        lines.append(f"{names[j]:<{width}}  {model.theta[j]:>12.6g}  {model.penalty_weights[j]:>10.4g}  {mb:>8}")
    lines.append(f"{'(intercept)':<{width}}  {model.intercept:>12.6g}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args) -> int:
    model, enc, imputation, doc = load_model_file(args.model)
    names = list(enc.feature_names)
    data = None
    if args.data:
        data = _prepare_with(dsm.load_csv(args.data, doc.get("label", "y")), enc, imputation)
    fmt = args.format
    if fmt == "json":
        text = _dumps(doc["model"])
    elif isinstance(model, LinearModel):
        mbar = None if data is None else data.mask.mean(axis=0)
        text = _linear_table(model, model.feature_names or names, mbar)
    elif isinstance(model, DecisionTree):
        if fmt == "dot":
            miss = None if data is None else node_missingness(model, data.x_imputed, data.mask)
            text = to_dot(model, names, miss)
        else:
            text = _tree_text(model, names)
    else:
        if fmt == "dot":
            if not args.out:
                raise UsageError("ensemble DOT export writes one file per tree; give --out DIR")
            out = Path(args.out)
            index = []
            for k, tree in enumerate(model.trees):
                miss = None if data is None else node_missingness(tree, data.x_imputed, data.mask)
                fname = f"tree_{k:03d}.dot"
                _write_atomic(out / fname, to_dot(tree, names, miss, name=f"tree_{k}"))
                index.append(fname)
            _write_atomic(out / "index.json", _dumps({"kind": model.kind, "trees": index}))
            print(f"wrote {len(index)} trees to {out}")
            return 0
        text = "".join(f"# tree {k}\n" + _tree_text(t, names) for k, t in enumerate(model.trees))
    if args.out:
        _write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _tree_text(tree: DecisionTree, names) -> str:
    lines = []

    def walk(u, indent):
        pad = "  " * indent
        if tree.is_leaf(u):
            lines.append(f"{pad}leaf value={tree.value[u]:.4f} n={tree.n_samples[u]:g}")
            return
        lines.append(f"{pad}if {names[tree.feature[u]]} <= {tree.threshold[u]:.6g}:")
        walk(tree.left[u], indent + 1)
        lines.append(f"{pad}else:")
        walk(tree.right[u], indent + 1)

    walk(0, 0)
    return "\n".join(lines) + "\n"


def cmd_verify(args) -> int:
    model, enc, imputation, _ = load_model_file(args.model)
    proc = _process(args.spec)
    if not isinstance(model, DecisionTree):
        trees = model.trees if isinstance(model, Ensemble) else None
        if trees is None:
            raise UsageError("verify-oddc applies to tree models")
    else:
        trees = [model]
    fill = imputation.get("fill_values")
    ref = dsm.ImputedDataset(np.zeros((0, len(enc.feature_names))),
                             np.zeros((0, len(enc.feature_names)), bool), np.zeros(0),
                             imputation.get("strategy", "zero"),
                             np.zeros(len(enc.feature_names)) if fill is None else np.asarray(fill), enc)
    reports = [oddc.verify_zero_reliance(t, proc, args.n, args.seed, reference=ref) for t in trees]
    result = {"ok": all(r.ok and r.check.ok for r in reports),
              "trees": [r.to_dict() for r in reports]}
    text = _dumps(result)
    if args.out:
        _write_atomic(args.out, text)
    sys.stdout.write(text)
    if not result["ok"]:
        raise PropertyViolation("tree violates the rules or relies on missing values")
    return 0


# --------------------------------------------------------------------------


def _add_data_flags(p):
    p.add_argument("--data", help="input CSV")
    p.add_argument("--label", help="label column name (default y)")
    p.add_argument("--schema", help='JSON column-kind overrides, e.g. \'{"zip": "categorical"}\'')
    p.add_argument("--synth", help="generate data instead: 'clinic' or a process JSON file")
    p.add_argument("--n", type=int, help="rows to generate with --synth")
    p.add_argument("--synth-seed", dest="synth_seed", type=int)


def _add_model_flags(p):
    p.add_argument("--config", help="TOML or JSON file with defaults for any flag")
    p.add_argument("--estimator", choices=ev.ESTIMATORS)
    p.add_argument("--mode", choices=ev.MODES)
    p.add_argument("--grid", action="append", help="name=v1,v2 or name=lo..hi (repeatable)")
    p.add_argument("--n-random", dest="n_random", type=int,
                   help="sample this many grid points (default 10 for ma_rf/ma_gbt)")
    p.add_argument("--imputation", choices=dsm.STRATEGIES)
    p.add_argument("--standardize", dest="standardize", action="store_true", default=None)
    p.add_argument("--no-standardize", dest="standardize", action="store_false")
    p.add_argument("--folds", type=int)
    p.add_argument("--bootstrap", type=int, help="bootstrap resamples for CIs")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mavoid", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="select, refit and evaluate one estimator")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="test metrics across a parameter grid and splits")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--inner-grid", dest="inner_grid", action="append",
                   help="parameters chosen by CV inside each split (repeatable)")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate data from a rule-governed process")
    p.add_argument("--spec", default="clinic")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inject", help="add synthetic missingness to a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--label", default="y")
    p.add_argument("--mechanism", choices=dsm.MECHANISMS, default="MCAR")
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--feature-fraction", dest="feature_fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("inspect", help="render a model file")
    p.add_argument("model")
    p.add_argument("--format", choices=("json", "dot", "text"), default="text")
    p.add_argument("--data", help="CSV used to color nodes / compute missingness rates")
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("verify-oddc", help="check a tree against a process's rules")
    p.add_argument("model")
    p.add_argument("--spec", default="clinic")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MavoidError as exc:
        print(f"mavoid: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mavoid: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
