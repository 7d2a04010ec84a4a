import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fidelity_audit.data import (
    Column,
    FeatureSchema,
    dataset_from_arrays,
    encode,
    load_dataset,
    load_schema,
    oversample,
    oversample_indices,
    split,
    split_sizes,
)
from fidelity_audit.errors import (
    DatasetTooSmall,
    EmptyDataset,
    MissingColumn,
    SchemaError,
    SingleStratum,
    UnknownGroupLabel,
    UnparseableValue,
    ZeroVarianceColumn,
)

SCHEMA = {
    "columns": [
        {"name": "age", "kind": "continuous"},
        {"name": "color", "kind": "categorical", "levels": ["a", "b", "c"]},
        {"name": "income", "kind": "categorical", "role": "label", "positive": ">50K"},
        {"name": "sex", "kind": "categorical", "role": "group"},
    ]
}

CSV = """age,color,income,sex
30,a,>50K,F
41,b,<=50K,M
25,c,<=50K,F
52,b,>50K,M
"""


@pytest.fixture
def files(tmp_path):
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps(SCHEMA))
    csv = tmp_path / "data.csv"
    csv.write_text(CSV)
    return csv, schema


def test_load_dataset_roundtrip(files):
    csv, schema_path = files
    ds = load_dataset(csv, load_schema(schema_path))
    assert ds.n == 4
    assert ds.y.tolist() == [1, 0, 0, 1]
    assert ds.group_levels == ("F", "M")
    assert ds.g.tolist() == [0, 1, 0, 1]
    assert list(ds.features.columns) == ["age", "color"]


def test_yaml_schema(tmp_path, files):
    import yaml

    csv, _ = files
    path = tmp_path / "schema.yaml"
    path.write_text(yaml.safe_dump(SCHEMA))
    schema = load_schema(path)
    assert schema.label.name == "income"
    assert FeatureSchema.from_dict(schema.to_dict()) == schema
    assert load_dataset(csv, schema).n == 4


def test_header_only_is_empty(tmp_path, files):
    _, schema = files
    csv = tmp_path / "empty.csv"
    csv.write_text("age,color,income,sex\n")
    with pytest.raises(EmptyDataset):
        load_dataset(csv, load_schema(schema))


def test_blank_group_reports_row(tmp_path, files):
    _, schema = files
    csv = tmp_path / "bad.csv"
    csv.write_text(CSV.replace("25,c,<=50K,F", "25,c,<=50K,"))
    with pytest.raises(UnparseableValue) as exc:
        load_dataset(csv, load_schema(schema))
    assert exc.value.row == 2
    assert exc.value.column == "sex"


def test_bad_number_and_level(tmp_path, files):
    _, schema = files
    csv = tmp_path / "bad.csv"
    csv.write_text(CSV.replace("41,b", "forty,b"))
    with pytest.raises(UnparseableValue):
        load_dataset(csv, load_schema(schema))
    csv.write_text(CSV.replace("25,c", "25,z"))
    with pytest.raises(UnparseableValue):
        load_dataset(csv, load_schema(schema))


def test_missing_column(tmp_path, files):
    _, schema = files
    csv = tmp_path / "bad.csv"
    csv.write_text("age,income,sex\n30,>50K,F\n")
    with pytest.raises(MissingColumn):
        load_dataset(csv, load_schema(schema))


def test_unknown_group(tmp_path, files):
    _, schema_path = files
    spec = json.loads(schema_path.read_text())
    spec["columns"][3]["levels"] = ["F"]
    schema_path.write_text(json.dumps(spec))
    with pytest.raises(UnknownGroupLabel):
        load_dataset(files[0], load_schema(schema_path))


def test_schema_needs_one_label_and_group():
    with pytest.raises(SchemaError):
        FeatureSchema((Column("x"), Column("y", role="label")))
    with pytest.raises(SchemaError):
        Column("x", kind="ordinal")


def test_one_hot_block(files):
    csv, schema = files
    ds = load_dataset(csv, load_schema(schema))
    enc = encode(ds, np.arange(ds.n))
    assert enc.columns == ["age", "color=a", "color=b", "color=c"]
    assert enc.X[1, 1:].tolist() == [0.0, 1.0, 0.0]   # "b"
    assert enc.blocks() == [[0], [1, 2, 3]]


def test_continuous_only_keeps_width():
    rng = np.random.default_rng(0)
    ds = dataset_from_arrays(rng.normal(size=(50, 3)), rng.integers(0, 2, 50),
                             rng.integers(0, 2, 50))
    assert encode(ds, np.arange(50)).d == 3


def test_standardization_and_decode():
    rng = np.random.default_rng(1)
    X = np.column_stack([rng.normal(5, 3, 200), rng.choice(["u", "v"], 200)])
    ds = dataset_from_arrays(X, rng.integers(0, 2, 200), rng.integers(0, 2, 200),
                             names=["x", "c"], categorical=("c",))
    fit_on = np.arange(100)
    enc = encode(ds, fit_on)
    col = enc.X[fit_on, 0]
    assert abs(col.mean()) < 1e-9
    assert abs(col.var() - 1) < 1e-9
    back = enc.encoder.decode(enc.X)
    np.testing.assert_allclose(back["x"].to_numpy(float), ds.features["x"].to_numpy(float))
    assert (back["c"].to_numpy() == ds.features["c"].to_numpy()).all()


def test_zero_variance_warns():
    X = np.column_stack([np.ones(20), np.arange(20.0)])
    ds = dataset_from_arrays(X, np.arange(20) % 2, np.arange(20) % 2)
    with pytest.warns(ZeroVarianceColumn):
        enc = encode(ds, np.arange(20))
    assert np.all(enc.X[:, 0] == 0)


def test_split_sizes_and_partition():
    assert split_sizes(1000) == (500, 300, 100, 100)
    sp = split(1000, seed=3)
    assert sp.sizes() == (500, 300, 100, 100)
    allidx = np.concatenate([sp.blackbox_train, sp.explainer_train, sp.explainer_valid, sp.test])
    assert sorted(allidx.tolist()) == list(range(1000))
    sp2 = split(1000, seed=3)
    for a, b in zip((sp.blackbox_train, sp.test), (sp2.blackbox_train, sp2.test)):
        assert np.array_equal(a, b)


def test_split_too_small():
    with pytest.raises(DatasetTooSmall):
        split(9, 0)


@given(st.integers(10, 5000))
@settings(max_examples=60, deadline=None)
def test_split_proportions(n):
    sizes = split_sizes(n)
    target = np.array([0.5, 0.3, 0.1, 0.1]) * n
    assert sum(sizes) == n
    # the first three are floored and the remainder goes to test
    shortfall = target[:3] - np.array(sizes[:3])
    assert np.all(shortfall >= 0)
    assert shortfall.sum() <= 3
    assert 0 <= sizes[3] - target[3] <= 3


def test_oversample_groups():
    g = np.array([0] * 30 + [1] * 10)
    idx = oversample_indices(g, seed=0)
    assert np.bincount(g[idx]).tolist() == [30, 30]
    assert len(idx) - 40 == 20
    balanced = np.array([0, 1] * 5)
    assert sorted(oversample_indices(balanced, 0).tolist()) == list(range(10))
    with pytest.raises(SingleStratum):
        oversample_indices(np.zeros(5), 0)


def test_oversample_class_95_5():
    rng = np.random.default_rng(0)
    y = np.r_[np.zeros(95), np.ones(5)].astype(int)
    ds = dataset_from_arrays(rng.normal(size=(100, 2)), y, rng.integers(0, 2, 100))
    enc = encode(ds, np.arange(100))
    out = oversample(enc, "class", seed=1)
    assert np.bincount(out.y).tolist() == [95, 95]
    # no new feature vectors
    original = {tuple(r) for r in enc.X}
    assert all(tuple(r) in original for r in out.X)


@given(st.lists(st.integers(0, 3), min_size=2, max_size=60), st.integers(0, 100))
@settings(max_examples=60, deadline=None)
def test_oversample_property(strata, seed):
    strata = np.array(strata)
    if len(np.unique(strata)) < 2:
        return
    idx = oversample_indices(strata, seed)
    counts = np.bincount(strata[idx])
    counts = counts[counts > 0]
    assert len(set(counts)) == 1
    assert np.array_equal(idx[: len(strata)], np.arange(len(strata)))


def test_warning_free_encoding_on_normal_data():
    rng = np.random.default_rng(2)
    ds = dataset_from_arrays(rng.normal(size=(30, 2)), rng.integers(0, 2, 30),
                             rng.integers(0, 2, 30))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        encode(ds, np.arange(30))
