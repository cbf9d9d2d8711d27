import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mavoid import dataset as dsm
from mavoid.errors import ConfigurationError, MissingColumnError, ParseError, SchemaError


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_marks_empty_cells_missing(tmp_path):
    ds = dsm.load_csv(write(tmp_path, "a,y\n1,0\n,1\n2,0\n"))
    assert (ds.n, ds.d) == (3, 1)
    assert ds.mask[:, 0].tolist() == [False, True, False]
    assert ds.labels.tolist() == [0, 1, 0]


def test_load_csv_complete_file_has_empty_mask(tmp_path):
    ds = dsm.load_csv(write(tmp_path, "a,b,y\n1,2,0\n3,4,1\n"))
    assert not ds.mask.any()


@pytest.mark.parametrize("token", ["na", "NA", "NaN", ""])
def test_load_csv_default_na_tokens(tmp_path, token):
    ds = dsm.load_csv(write(tmp_path, f"a,y\n{token},1\n2,0\n"))
    assert ds.mask[0, 0] and not ds.mask[1, 0]


def test_load_csv_custom_na_token(tmp_path):
    ds = dsm.load_csv(write(tmp_path, "a,y\n-9,1\n2,0\n"), na_tokens={"-9"})
    assert ds.mask[:, 0].tolist() == [True, False]


def test_label_na_is_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        dsm.load_csv(write(tmp_path, "a,y\n1,na\n2,0\n"))


def test_non_binary_label_is_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        dsm.load_csv(write(tmp_path, "a,y\n1,2\n2,0\n"))


def test_missing_label_column(tmp_path):
    with pytest.raises(MissingColumnError):
        dsm.load_csv(write(tmp_path, "a,b\n1,0\n"), label="y")


def test_ragged_row_reports_row_index(tmp_path):
    with pytest.raises(ParseError) as info:
        dsm.load_csv(write(tmp_path, "a,y\n1,0\n2\n3,1\n"))
    assert info.value.row == 2


def test_kind_inference_and_override(tmp_path):
    p = write(tmp_path, "color,size,y\nred,1,0\nblue,,1\n,3,0\n")
    ds = dsm.load_csv(p)
    assert [c.kind for c in ds.columns] == ["categorical", "numeric"]
    assert ds.columns[0].categories == ("blue", "red")
    forced = dsm.load_csv(p, schema={"size": "categorical"})
    assert forced.columns[1].kind == "categorical"


def test_csv_round_trip(tmp_path):
    ds = dsm.load_csv(write(tmp_path, "color,v,y\nred,1.5,0\nblue,,1\n,3,0\n"))
    out = tmp_path / "out.csv"
    dsm.write_csv(ds, out)
    again = dsm.load_csv(out)
    np.testing.assert_array_equal(again.mask, ds.mask)
    np.testing.assert_array_equal(np.nan_to_num(again.values, nan=-1), np.nan_to_num(ds.values, nan=-1))


def test_standardize_uses_observed_values():
    ds = dsm.from_arrays([[2.0], [np.nan], [4.0]], [0, 1, 0])
    enc = dsm.encode(ds, standardize=True)
    assert enc.encoding.standardization[0] == (3.0, 1.0)
    np.testing.assert_allclose(enc.x[[0, 2], 0], [-1.0, 1.0])
    assert np.isnan(enc.x[1, 0]) and enc.mask[1, 0]


def test_one_hot_propagates_na_to_whole_group():
    cols = (dsm.Column("c", "categorical", ("blue", "red")),)
    ds = dsm.Dataset(cols, np.array([[1.0], [0.0], [np.nan]]), np.array([0, 1, 0]))
    enc = dsm.encode(ds)
    assert enc.feature_names == ("c=blue", "c=red")
    np.testing.assert_array_equal(enc.x[:2], [[0, 1], [1, 0]])
    assert enc.mask[2].all()


def test_standardization_is_idempotent_on_standard_input():
    rng = np.random.default_rng(0)
    v = rng.normal(size=50)
    v = (v - v.mean()) / v.std()
    enc = dsm.encode(dsm.from_arrays(v[:, None], np.arange(50) % 2), standardize=True)
    np.testing.assert_allclose(enc.x[:, 0], v, atol=1e-12)


def test_constant_column_std_is_clamped():
    enc = dsm.encode(dsm.from_arrays([[5.0], [5.0], [np.nan]], [0, 1, 0]), standardize=True)
    assert enc.encoding.standardization[0] == (5.0, 1.0)
    assert enc.encoding.clamped == ("x0",)


def test_test_data_reuses_training_statistics():
    tr = dsm.from_arrays([[0.0], [2.0]], [0, 1])
    te = dsm.from_arrays([[4.0]], [1])
    _, te_imp = dsm.prepare(tr, te, standardize=True)
    assert te_imp.x[0, 0] == pytest.approx(3.0)


def test_decode_category_round_trip():
    cols = (dsm.Column("c", "categorical", ("a", "b", "c")),)
    raw = np.array([[2.0], [0.0], [1.0], [np.nan]])
    enc = dsm.encode(dsm.Dataset(cols, raw, np.array([0, 1, 0, 1])))
    assert [dsm.decode_category(enc, i, 0) for i in range(4)] == ["c", "a", "b", None]


def test_zero_and_mean_imputation():
    ds = dsm.from_arrays([[1.0], [np.nan], [3.0]], [0, 1, 0])
    enc = dsm.encode(ds)
    assert dsm.impute(enc, "zero").x[:, 0].tolist() == [1.0, 0.0, 3.0]
    assert dsm.impute(enc, "mean_mode").x[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_mean_imputation_uses_reference_statistics():
    tr = dsm.impute(dsm.encode(dsm.from_arrays([[0.0], [4.0]], [0, 1])), "mean_mode")
    te = dsm.impute(dsm.encode(dsm.from_arrays([[np.nan]], [1])), "mean_mode", reference=tr)
    assert te.x[0, 0] == 2.0


def test_mode_imputation_fills_categorical_group():
    cols = (dsm.Column("c", "categorical", ("a", "b")),)
    ds = dsm.Dataset(cols, np.array([[1.0], [1.0], [0.0], [np.nan]]), np.array([0, 1, 0, 1]))
    imp = dsm.impute(dsm.encode(ds), "mean_mode")
    assert imp.x[3].tolist() == [0.0, 1.0]
    assert imp.mask[3].all()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=2, max_size=30),
       st.sampled_from(["zero", "mean_mode"]), st.booleans())
def test_imputation_keeps_observed_cells_and_mask(cells, strategy, standardize):
    col = np.array([np.nan if c is None else c for c in cells])
    ds = dsm.from_arrays(col[:, None], np.arange(col.size) % 2)
    enc = dsm.encode(ds, standardize)
    imp = dsm.impute(enc, strategy)
    obs = ~np.isnan(col)
    np.testing.assert_array_equal(imp.mask[:, 0], ~obs)
    np.testing.assert_array_equal(imp.x[obs, 0], enc.x[obs, 0])
    assert not np.isnan(imp.x).any()


def _normal_ds(n=10000, d=1, seed=0):
    rng = np.random.default_rng(seed)
    return dsm.from_arrays(rng.normal(size=(n, d)), rng.integers(0, 2, n))


def test_zero_rate_is_identity():
    ds = _normal_ds(100, 3)
    for mech in ("MCAR", "MAR", "MNAR"):
        out = dsm.inject_missingness(ds, mech, 0.0, seed=1)
        np.testing.assert_array_equal(out.mask, ds.mask)


def test_mcar_rate_and_independence():
    ds = _normal_ds()
    out = dsm.inject_missingness(ds, "MCAR", 0.5, seed=3)
    m = out.mask[:, 0]
    assert abs(m.mean() - 0.5) <= 0.02
    v = ds.values[:, 0]
    diff = v[m].mean() - v[~m].mean()
    se = np.sqrt(v[m].var() / m.sum() + v[~m].var() / (~m).sum())
    assert abs(diff) <= 3 * se


def test_mnar_masks_only_outside_quartiles():
    ds = _normal_ds()
    out = dsm.inject_missingness(ds, "MNAR", 0.5, seed=2)
    v = ds.values[:, 0]
    q25, q75 = np.sort(v)[[int(0.25 * (v.size - 1)), int(np.ceil(0.75 * (v.size - 1)))]]
    m = out.mask[:, 0]
    assert ((v[m] <= q25) | (v[m] >= q75)).all()
    assert abs(m.mean() - 0.5) <= 0.02


def test_mar_calibrated_rate():
    ds = _normal_ds(10000, 2)
    out = dsm.inject_missingness(ds, "MAR", 0.3, seed=5, features=[0])
    assert abs(out.mask[:, 0].mean() - 0.3) <= 0.02
    assert not out.mask[:, 1].any()
    assert out.provenance[-1]["driver"] == "x1"


def test_mar_without_observed_driver_is_configuration_error():
    with pytest.raises(ConfigurationError):
        dsm.inject_missingness(_normal_ds(50, 2), "MAR", 0.3, feature_fraction=1.0)


def test_mnar_on_categorical_only_is_configuration_error():
    cols = (dsm.Column("c", "categorical", ("a", "b")),)
    ds = dsm.Dataset(cols, np.array([[0.0], [1.0]]), np.array([0, 1]))
    with pytest.raises(ConfigurationError):
        dsm.inject_missingness(ds, "MNAR", 0.5)


def test_injection_is_seeded_and_recorded():
    ds = _normal_ds(500, 4)
    a = dsm.inject_missingness(ds, "MCAR", 0.4, feature_fraction=0.5, seed=9)
    b = dsm.inject_missingness(ds, "MCAR", 0.4, feature_fraction=0.5, seed=9)
    np.testing.assert_array_equal(a.mask, b.mask)
    rec = a.provenance[-1]
    assert rec["mechanism"] == "MCAR" and rec["rate"] == 0.4 and rec["seed"] == 9
    assert len(rec["features"]) == 2
    assert a.mask.any(axis=0).sum() == 2


def test_train_test_split_sizes_and_determinism():
    ds = dsm.from_arrays(np.arange(10.0)[:, None], [0, 1] * 5)
    tr, te = dsm.split_indices(ds, 0.2, seed=4)
    assert (tr.size, te.size) == (8, 2)
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(10))
    tr2, te2 = dsm.split_indices(ds, 0.2, seed=4)
    np.testing.assert_array_equal(te, te2)
    assert ds.labels[te].sum() == 1


def test_split_is_stratified():
    labels = np.array([1] * 30 + [0] * 70)
    _, te = dsm.split_indices(labels, 0.2, seed=0)
    assert abs(labels[te].sum() - 0.3 * te.size) <= 1


def test_kfold_partitions():
    folds = dsm.kfold(np.array([0, 1, 0, 1, 0, 1, 0, 1, 0]), 3, seed=0)
    vals = [set(v.tolist()) for _, v in folds]
    assert [len(v) for v in vals] == [3, 3, 3]
    assert set().union(*vals) == set(range(9))
    for tr, va in folds:
        assert not set(tr) & set(va)


def test_kfold_more_folds_than_rows():
    with pytest.raises(ConfigurationError):
        dsm.kfold(np.array([0, 1]), 3)


def test_dataset_values_are_read_only():
    ds = dsm.from_arrays([[1.0]], [0])
    with pytest.raises(ValueError):
        ds.values[0, 0] = 2.0


def test_mar_subset_leaves_a_driver_column():
    ds = dsm.from_arrays(np.random.default_rng(0).normal(size=(500, 3)), np.zeros(500))
    ds = dsm.inject_missingness(ds, "MCAR", 0.2, seed=0, features=[1, 2])
    for seed in range(10):
        out = dsm.inject_missingness(ds, "MAR", 0.3, feature_fraction=0.5, seed=seed)
        assert out.provenance[-1]["driver"] == "x0"
        assert not out.mask[:, 0].any()
