"""Tabular dataset loading, encoding, splitting and resampling.

A dataset is described by an explicit schema sidecar (JSON or YAML) that
lists every column with its kind (``continuous`` / ``categorical``) and role
(``feature`` / ``label`` / ``group``). Label and group columns never enter
the encoded feature matrix.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import (
    DatasetTooSmall,
    EmptyDataset,
    MissingColumn,
    SchemaError,
    SingleStratum,
    UnknownGroupLabel,
    UnparseableValue,
    ZeroVarianceColumn,
)

KINDS = ("continuous", "categorical")
ROLES = ("feature", "label", "group")

SPLIT_NAMES = ("blackbox_train", "explainer_train", "explainer_valid", "test")
SPLIT_FRACTIONS = (0.5, 0.3, 0.1)

_TRUE = {"1", "1.0", "true", "yes"}
_FALSE = {"0", "0.0", "false", "no"}


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = "continuous"
    role: str = "feature"
    levels: tuple[str, ...] | None = None
    positive: str | None = None  # label only: raw value mapped to y = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
            if not self.levels:
                raise SchemaError(f"column {self.name!r}: empty level set")


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        for role in ("label", "group"):
            n = sum(c.role == role for c in self.columns)
            if n != 1:
                raise SchemaError(f"schema needs exactly one {role} column, found {n}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def label(self) -> Column:
        return next(c for c in self.columns if c.role == "label")

    @property
    def group(self) -> Column:
        return next(c for c in self.columns if c.role == "group")

    @property
    def features(self) -> list[Column]:
        return [c for c in self.columns if c.role == "feature"]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @classmethod
    def from_dict(cls, spec: dict) -> "FeatureSchema":
        cols = spec["columns"] if isinstance(spec, dict) else spec
        return cls(tuple(Column(**c) for c in cols))

    def to_dict(self) -> dict:
        out = []
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind, "role": c.role}
            if c.levels is not None:
                d["levels"] = list(c.levels)
            if c.positive is not None:
                d["positive"] = c.positive
            out.append(d)
        return {"columns": out}


def load_schema(path: str | Path) -> FeatureSchema:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        spec = yaml.safe_load(text)
    else:
        spec = json.loads(text)
    return FeatureSchema.from_dict(spec)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Validated rows. ``g`` holds 0-based codes into ``group_levels``."""

    schema: FeatureSchema
    features: pd.DataFrame
    y: np.ndarray
    g: np.ndarray
    group_levels: tuple[str, ...]

    def __post_init__(self):
        if len(self.features) == 0:
            raise EmptyDataset("dataset has no rows")
        object.__setattr__(self, "y", _freeze(np.asarray(self.y, dtype=np.int8)))
        object.__setattr__(self, "g", _freeze(np.asarray(self.g, dtype=np.int64)))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n_groups(self) -> int:
        return len(self.group_levels)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        feats = self.features.iloc[idx].reset_index(drop=True)
        return replace(self, features=feats, y=self.y[idx], g=self.g[idx])


def _parse_label(raw: pd.Series, col: Column) -> np.ndarray:
    y = np.empty(len(raw), dtype=np.int8)
    for i, v in enumerate(raw):
        s = v.strip()
        if col.positive is not None:
            if s == "":
                raise UnparseableValue(i, col.name, v, "blank label")
            y[i] = s == col.positive
            continue
        key = s.lower()
        if key in _TRUE:
            y[i] = 1
        elif key in _FALSE:
            y[i] = 0
        else:
            raise UnparseableValue(i, col.name, v, "label must be binary")
    return y


def load_dataset(csv_path: str | Path, schema: FeatureSchema) -> Dataset:
    """Read a UTF-8 CSV with a header row and validate it against ``schema``."""
    raw = pd.read_csv(csv_path, dtype=str, keep_default_na=False, encoding="utf-8",
                      skipinitialspace=True)
    missing = [c for c in schema.names if c not in raw.columns]
    if missing:
        raise MissingColumn(f"columns missing from {csv_path}: {missing}")
    if len(raw) == 0:
        raise EmptyDataset(f"{csv_path} has a header but no rows")

    feats = {}
    columns = []
    for col in schema.columns:
        series = raw[col.name]
        if col.role == "label":
            y = _parse_label(series, col)
            columns.append(col)
        elif col.role == "group":
            vals = series.str.strip()
            blank = np.flatnonzero((vals == "").to_numpy())
            if blank.size:
                r = int(blank[0])
                raise UnparseableValue(r, col.name, series.iloc[r], "blank group")
            levels = col.levels or tuple(sorted(vals.unique()))
            lookup = {lv: i for i, lv in enumerate(levels)}
            unknown = sorted(set(vals) - set(lookup))
            if unknown:
                raise UnknownGroupLabel(f"column {col.name!r}: unknown groups {unknown}")
            g = vals.map(lookup).to_numpy(dtype=np.int64)
            group_levels = tuple(levels)
            columns.append(replace(col, levels=group_levels))
        elif col.kind == "continuous":
            num = pd.to_numeric(series, errors="coerce")
            bad = np.flatnonzero(num.isna().to_numpy() | ~np.isfinite(num.to_numpy(dtype=float)))
            if bad.size:
                r = int(bad[0])
                raise UnparseableValue(r, col.name, series.iloc[r], "not a finite number")
            feats[col.name] = num.to_numpy(dtype=np.float64)
            columns.append(col)
        else:
            vals = series.str.strip()
            blank = np.flatnonzero((vals == "").to_numpy())
            if blank.size:
                r = int(blank[0])
                raise UnparseableValue(r, col.name, series.iloc[r], "blank category")
            levels = col.levels or tuple(sorted(vals.unique()))
            unknown = sorted(set(vals) - set(levels))
            if unknown:
                r = int(np.flatnonzero(vals.isin(unknown).to_numpy())[0])
                raise UnparseableValue(r, col.name, series.iloc[r], "level not in schema")
            feats[col.name] = vals.to_numpy(dtype=object)
            columns.append(replace(col, levels=tuple(levels)))

    schema = FeatureSchema(tuple(columns))
    frame = pd.DataFrame({c.name: feats[c.name] for c in schema.features})
    return Dataset(schema, frame, y, g, group_levels)


def dataset_from_arrays(X, y, g, *, names=None, categorical=(), group_levels=None) -> Dataset:
    """Build a Dataset directly from in-memory arrays (synthetic data, tests)."""
    X = np.asarray(X, dtype=object if categorical else np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    g = np.asarray(g)
    if group_levels is None:
        codes = np.unique(g)
        group_levels = tuple(str(c) for c in codes)
        g = np.searchsorted(codes, g)
    cols, frame = [], {}
    for j, name in enumerate(names):
        if name in categorical:
            vals = np.array([str(v) for v in X[:, j]], dtype=object)
            cols.append(Column(name, "categorical", "feature", tuple(sorted(set(vals)))))
            frame[name] = vals
        else:
            cols.append(Column(name, "continuous", "feature"))
            frame[name] = X[:, j].astype(np.float64)
    cols.append(Column("label", "categorical", "label"))
    cols.append(Column("group", "categorical", "group", tuple(group_levels)))
    return Dataset(FeatureSchema(tuple(cols)), pd.DataFrame(frame), np.asarray(y), g,
                   tuple(group_levels))


# -- encoding ---------------------------------------------------------------

@dataclass(frozen=True)
class Encoder:
    """One-hot + standardization parameters fit on a subset of rows."""

    schema: FeatureSchema
    columns: tuple[str, ...]            # encoded column names
    source: tuple[str, ...]             # schema column behind each encoded column
    level: tuple[str | None, ...]       # category level, None for continuous
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, dataset: Dataset, fit_on) -> "Encoder":
        fit_on = np.asarray(fit_on, dtype=np.int64)
        if fit_on.size == 0:
            raise ValueError("fit_on must be nonempty")
        columns, source, level = [], [], []
        mean, std = {}, {}
        for col in dataset.schema.features:
            if col.kind == "continuous":
                vals = dataset.features[col.name].to_numpy(dtype=np.float64)[fit_on]
                mu = float(vals.mean())
                sd = float(vals.std())
                if not sd > 0:
                    warnings.warn(f"column {col.name!r} is constant on the fit rows; "
                                  "using stddev 1", ZeroVarianceColumn, stacklevel=2)
                    sd = 1.0
                mean[col.name], std[col.name] = mu, sd
                columns.append(col.name)
                source.append(col.name)
                level.append(None)
            else:
                for lv in col.levels:
                    columns.append(f"{col.name}={lv}")
                    source.append(col.name)
                    level.append(lv)
        return cls(dataset.schema, tuple(columns), tuple(source), tuple(level), mean, std)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def transform_frame(self, frame: pd.DataFrame) -> np.ndarray:
        X = np.empty((len(frame), self.n_features))
        for j, (src, lv) in enumerate(zip(self.source, self.level)):
            vals = frame[src].to_numpy()
            if lv is None:
                X[:, j] = (vals.astype(np.float64) - self.mean[src]) / self.std[src]
            else:
                X[:, j] = vals == lv
        return X

    def transform(self, dataset: Dataset) -> "EncodedDataset":
        X = self.transform_frame(dataset.features)
        return EncodedDataset(X, dataset.y, dataset.g, self, dataset.group_levels)

    def decode(self, X: np.ndarray) -> pd.DataFrame:
        """Map encoded rows back to schema feature values."""
        X = np.asarray(X, dtype=np.float64)
        out = {}
        for col in self.schema.features:
            idx = [j for j, s in enumerate(self.source) if s == col.name]
            if col.kind == "continuous":
                j = idx[0]
                out[col.name] = X[:, j] * self.std[col.name] + self.mean[col.name]
            else:
                levels = np.array([self.level[j] for j in idx], dtype=object)
                out[col.name] = levels[np.argmax(X[:, idx], axis=1)]
        return pd.DataFrame(out)

    def blocks(self) -> dict[str, list[int]]:
        """Encoded column indices per schema feature column."""
        out: dict[str, list[int]] = {}
        for j, s in enumerate(self.source):
            out.setdefault(s, []).append(j)
        return out

    def is_continuous(self) -> np.ndarray:
        return np.array([lv is None for lv in self.level])


@dataclass(frozen=True)
class EncodedDataset:
    X: np.ndarray
    y: np.ndarray
    g: np.ndarray
    encoder: Encoder
    group_levels: tuple[str, ...]
    feature_ids: tuple[int, ...] | None = None  # subset of encoder columns kept

    def __post_init__(self):
        object.__setattr__(self, "X", _freeze(np.asarray(self.X, dtype=np.float64)))
        object.__setattr__(self, "y", _freeze(np.asarray(self.y, dtype=np.int8)))
        object.__setattr__(self, "g", _freeze(np.asarray(self.g, dtype=np.int64)))
        if self.feature_ids is None:
            object.__setattr__(self, "feature_ids", tuple(range(self.X.shape[1])))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_levels)

    @property
    def columns(self) -> list[str]:
        return [self.encoder.columns[j] for j in self.feature_ids]

    def continuous_mask(self) -> np.ndarray:
        return self.encoder.is_continuous()[list(self.feature_ids)]

    def blocks(self) -> list[list[int]]:
        """Groups of local column positions sharing one schema column."""
        pos = {fid: i for i, fid in enumerate(self.feature_ids)}
        out = []
        for ids in self.encoder.blocks().values():
            local = [pos[j] for j in ids if j in pos]
            if local:
                out.append(local)
        return out

    def take(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, X=self.X[idx], y=self.y[idx], g=self.g[idx])

    def select_features(self, keep: Sequence[int]) -> "EncodedDataset":
        keep = list(keep)
        return replace(self, X=self.X[:, keep],
                       feature_ids=tuple(self.feature_ids[j] for j in keep))

    def with_labels(self, y) -> "EncodedDataset":
        return replace(self, y=np.asarray(y))


def encode(dataset: Dataset, fit_on) -> EncodedDataset:
    """One-hot encode categoricals and standardize continuous columns.

    Standardization parameters come from the ``fit_on`` rows only.
    """
    return Encoder.fit(dataset, fit_on).transform(dataset)


# -- splitting / resampling -------------------------------------------------

@dataclass(frozen=True)
class SplitBundle:
    blackbox_train: np.ndarray
    explainer_train: np.ndarray
    explainer_valid: np.ndarray
    test: np.ndarray
    seed: int

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def sizes(self) -> tuple[int, int, int, int]:
        return tuple(len(self[s]) for s in SPLIT_NAMES)


def split_sizes(n: int) -> tuple[int, int, int, int]:
    a, b, c = (int(np.floor(f * n)) for f in SPLIT_FRACTIONS)
    return a, b, c, n - a - b - c


def split(dataset, seed: int) -> SplitBundle:
    """Random 50/30/10/10 partition; floors for the first three, rest to test."""
    n = dataset if isinstance(dataset, (int, np.integer)) else dataset.n
    if n < 10:
        raise DatasetTooSmall(f"need at least 10 rows to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum((0,) + split_sizes(n))
    parts = [np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(4)]
    return SplitBundle(*[_freeze(p) for p in parts], seed=seed)


def oversample_indices(strata, seed: int) -> np.ndarray:
    """Row indices that balance ``strata`` by duplicating minority rows.

    Original rows come first, in order, followed by the duplicates.
    """
    strata = np.asarray(strata)
    values, counts = np.unique(strata, return_counts=True)
    if len(values) < 2:
        raise SingleStratum("oversampling needs at least two classes/groups")
    rng = np.random.default_rng(seed)
    target = counts.max()
    extra = []
    for v, c in zip(values, counts):
        if c < target:
            members = np.flatnonzero(strata == v)
            extra.append(rng.choice(members, size=target - c, replace=True))
    return np.concatenate([np.arange(len(strata))] + extra)


def oversample(dataset, axis: str, seed: int):
    """Balance classes (``axis='class'``) or groups (``axis='group'``)."""
    if axis == "class":
        strata = dataset.y
    elif axis == "group":
        strata = dataset.g
    else:
        raise ValueError(f"axis must be 'class' or 'group', not {axis!r}")
    return dataset.take(oversample_indices(strata, seed))
