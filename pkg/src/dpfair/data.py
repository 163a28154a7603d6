"""Tabular ingestion, preprocessing, seeded splitting and group partitioning.

A :class:`GroupedDataset` carries a feature frame together with the binary
sensitive attribute ``a`` and binary label ``y``. Right after
:func:`load_csv` the frame still holds the raw (string) columns named by the
schema; :func:`preprocess` turns it into a numeric, one-hot/standardized frame.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping, NamedTuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "DPFAIR_DATA_DIR"
SHUFFLE_ALGORITHM = "numpy.PCG64/permutation-v1"

_DATASET_FILES = {"adult": "adult.csv", "credit_card": "credit_card.csv"}


class DataError(ValueError):
    """Raised for malformed input files or invalid dataset operations."""


class Record(NamedTuple):
    features: np.ndarray
    sensitive: int
    label: int


@dataclass(frozen=True)
class BinaryColumn:
    """Maps the raw string values of a column onto {0, 1}."""

    column: str
    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def encode(self, values: pd.Series) -> np.ndarray:
        pos = values.isin(self.positive)
        neg = values.isin(self.negative)
        bad = ~(pos | neg)
        if bad.any():
            sample = sorted(set(values[bad]))[:5]
            raise DataError(f"column {self.column!r} has non-binary values after mapping: {sample}")
        return pos.to_numpy(dtype=np.int8)


@dataclass(frozen=True)
class Schema:
    """Static description of a dataset: which columns exist and how to encode them.

    Categorical levels are listed explicitly so the encoded dimension does not
    depend on which rare levels happen to land in the training split.
    """

    name: str
    d: int
    continuous: tuple[str, ...]
    categorical: Mapping[str, tuple[str, ...]]
    sensitive: BinaryColumn
    label: BinaryColumn
    recode: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    missing_values: tuple[str, ...] = ("", "?")

    @property
    def feature_columns(self) -> tuple[str, ...]:
        return tuple(self.continuous) + tuple(self.categorical)

    @property
    def required_columns(self) -> tuple[str, ...]:
        return self.feature_columns + (self.sensitive.column, self.label.column)

    @property
    def encoded_names(self) -> list[str]:
        names = list(self.continuous)
        for col, levels in self.categorical.items():
            names.extend(f"{col}={lvl}" for lvl in levels)
        return names

    @classmethod
    def from_dict(cls, cfg: Mapping) -> "Schema":
        def binary(c: Mapping) -> BinaryColumn:
            return BinaryColumn(c["column"], tuple(map(str, c["positive"])), tuple(map(str, c["negative"])))

        schema = cls(
            name=cfg["name"],
            d=int(cfg["d"]),
            continuous=tuple(cfg["continuous"]),
            categorical={k: tuple(map(str, v)) for k, v in cfg["categorical"].items()},
            sensitive=binary(cfg["sensitive"]),
            label=binary(cfg["label"]),
            recode={k: dict(v) for k, v in cfg.get("recode", {}).items()},
            missing_values=tuple(cfg.get("missing_values", ("", "?"))),
        )
        if len(schema.encoded_names) != schema.d:
            raise DataError(
                f"schema {schema.name!r} declares d={schema.d} but encodes {len(schema.encoded_names)} features"
            )
        return schema

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def shipped_schema(name: str) -> Schema:
    """Load one of the bundled schemas (``adult`` or ``credit_card``)."""
    ref = resources.files("dpfair.schemas") / f"{name}.json"
    if not ref.is_file():
        raise DataError(f"no shipped schema named {name!r}")
    return Schema.from_dict(json.loads(ref.read_text()))


def default_data_path(name: str) -> Path:
    """Resolve a dataset file under ``$DPFAIR_DATA_DIR`` (default ``./data``)."""
    base = Path(os.environ.get(DATA_DIR_ENV, "data"))
    return base / _DATASET_FILES.get(name, f"{name}.csv")


@dataclass(frozen=True)
class GroupedDataset:
    """Features plus binary sensitive attribute and label.

    ``frame`` is either raw (as ingested) or encoded (numeric, after
    :func:`preprocess`). Treat instances as immutable.
    """

    frame: pd.DataFrame
    a: np.ndarray
    y: np.ndarray
    schema_name: str = ""
    info: Mapping = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.frame)
        if len(self.a) != n or len(self.y) != n:
            raise DataError("frame, sensitive and label lengths differ")

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def d(self) -> int:
        return self.frame.shape[1]

    @property
    def X(self) -> np.ndarray:
        return self.frame.to_numpy(dtype=float)

    @property
    def n0(self) -> int:
        return int(np.sum(self.a == 0))

    @property
    def n1(self) -> int:
        return int(np.sum(self.a == 1))

    def take(self, idx: np.ndarray) -> "GroupedDataset":
        idx = np.asarray(idx)
        return GroupedDataset(
            self.frame.iloc[idx].reset_index(drop=True),
            self.a[idx],
            self.y[idx],
            self.schema_name,
            dict(self.info),
        )

    def records(self) -> Iterator[Record]:
        X = self.X
        for i in range(len(self)):
            yield Record(X[i], int(self.a[i]), int(self.y[i]))

    @classmethod
    def from_arrays(cls, X, a, y, names=None, schema_name: str = "synthetic") -> "GroupedDataset":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a = np.asarray(a).astype(np.int8)
        y = np.asarray(y).astype(np.int8)
        for arr, what in ((a, "sensitive"), (y, "label")):
            if not np.isin(arr, (0, 1)).all():
                raise DataError(f"{what} values must be 0/1")
        names = names or [f"x{i}" for i in range(X.shape[1])]
        return cls(pd.DataFrame(X, columns=names), a, y, schema_name)


def load_csv(path: str | os.PathLike, schema: Schema) -> GroupedDataset:
    """Read a headered CSV, drop rows with missing required values and map the
    sensitive/label columns onto {0, 1}.

    Ingestion counts (rows read, dropped, group sizes) go to ``info``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: no records") from None
    raw.columns = [c.strip() for c in raw.columns]
    missing_cols = [c for c in schema.required_columns if c not in raw.columns]
    if missing_cols:
        raise DataError(f"{path}: columns missing from header: {missing_cols}")
    rows_read = len(raw)
    if rows_read == 0:
        raise DataError(f"{path}: no records")

    raw = raw[list(schema.required_columns)].apply(lambda s: s.str.strip())
    keep = ~raw.isin(schema.missing_values).any(axis=1)
    raw = raw[keep].reset_index(drop=True)
    if len(raw) == 0:
        raise DataError(f"{path}: no records left after dropping missing values")
    for col, mapping in schema.recode.items():
        raw[col] = raw[col].replace(mapping)

    a = schema.sensitive.encode(raw[schema.sensitive.column])
    y = schema.label.encode(raw[schema.label.column])
    frame = raw[list(schema.feature_columns)].reset_index(drop=True)
    info = {
        "source": str(path),
        "rows_read": rows_read,
        "rows_dropped": int(rows_read - len(raw)),
        "rows_kept": len(raw),
        "n0": int(np.sum(a == 0)),
        "n1": int(np.sum(a == 1)),
    }
    logger.info("loaded %s: %d rows kept, %d dropped", path.name, len(raw), info["rows_dropped"])
    return GroupedDataset(frame, a, y, schema.name, info)


@dataclass(frozen=True)
class PreprocessSpec:
    """A schema plus standardization statistics fitted on a training split."""

    schema: Schema
    means: Mapping[str, float]
    stds: Mapping[str, float]

    def to_dict(self) -> dict:
        return {"schema": self.schema.name, "means": dict(self.means), "stds": dict(self.stds)}


def fit_preprocess(train: GroupedDataset, schema: Schema) -> PreprocessSpec:
    means, stds = {}, {}
    for col in schema.continuous:
        v = pd.to_numeric(train.frame[col], errors="raise").to_numpy(dtype=float)
        mu = float(v.mean())
        sd = float(v.std())
        # zero-variance guard
        means[col], stds[col] = mu, sd if sd > 0 else 1.0
    return PreprocessSpec(schema, means, stds)


def preprocess(raw: GroupedDataset, spec: PreprocessSpec) -> GroupedDataset:
    """Standardize continuous columns and one-hot the categorical ones.

    Values outside the schema's level list encode as all zeros; how many were
    seen per column is recorded under ``info["unseen_levels"]``.
    """
    schema = spec.schema
    cols: dict[str, np.ndarray] = {}
    for col in schema.continuous:
        v = pd.to_numeric(raw.frame[col], errors="raise").to_numpy(dtype=float)
        cols[col] = (v - spec.means[col]) / spec.stds[col]
    unseen = {}
    for col, levels in schema.categorical.items():
        v = raw.frame[col].astype(str).to_numpy()
        hits = np.zeros(len(v), dtype=bool)
        for lvl in levels:
            onehot = v == lvl
            hits |= onehot
            cols[f"{col}={lvl}"] = onehot.astype(float)
        if (~hits).any():
            unseen[col] = int((~hits).sum())
    if unseen:
        logger.warning("unseen categorical levels encoded as zeros: %s", unseen)
    frame = pd.DataFrame(cols, columns=schema.encoded_names)
    info = dict(raw.info, unseen_levels=unseen)
    return GroupedDataset(frame, raw.a.copy(), raw.y.copy(), raw.schema_name, info)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f < 0 or f > 1 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise DataError(f"split fractions must be three values in [0,1] summing to 1, got {self.fractions}")
        object.__setattr__(self, "fractions", fr)


def split(ds: GroupedDataset, spec: SplitSpec) -> tuple[GroupedDataset, GroupedDataset, GroupedDataset]:
    """Seeded shuffle into disjoint (train, post, test) parts.

    Sizes are ``floor(frac * n)`` for train and post; test takes the rest.
    """
    n = len(ds)
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    perm = rng.permutation(n)
    n_train = int(np.floor(spec.fractions[0] * n + 1e-9))
    n_post = int(np.floor(spec.fractions[1] * n + 1e-9))
    if spec.fractions[2] == 0:
        n_post = n - n_train
    cut = (n_train, n_train + n_post)
    return ds.take(perm[: cut[0]]), ds.take(perm[cut[0] : cut[1]]), ds.take(perm[cut[1] :])


def partition_by_group(ds: GroupedDataset) -> tuple[GroupedDataset, GroupedDataset]:
    """(D0, D1): the A=0 and A=1 records, in their original order."""
    return ds.take(np.flatnonzero(ds.a == 0)), ds.take(np.flatnonzero(ds.a == 1))


def ingestion_report(ds: GroupedDataset) -> dict:
    report = dict(ds.info)
    report.update(schema=ds.schema_name, n=len(ds), n0=ds.n0, n1=ds.n1, d=ds.d)
    return report
