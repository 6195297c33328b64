"""Data ingestion: feature schemas, CSV loading, discretization, integer encoding.

The model consumes purely categorical data. Continuous columns are discretized
into equal-frequency bins first; every column is then mapped to integer codes
``0..D_m-1`` with a per-feature vocabulary in order of first appearance, so the
encoding of a file is deterministic and independent of value frequencies.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

# Reserved code for values unseen at fit time. A row cell holding UNK_CODE
# contributes the uniform mass 1/D_m to both mixture branches downstream.
UNK_CODE = -1

KINDS = ("categorical", "continuous")

DEFAULT_BIN_COUNT = 10


class DataError(ValueError):
    """Malformed input file, schema, or column."""


@dataclass(frozen=True)
class FeatureSpec:
    """One column declaration: a name, a kind, and an optional bin override."""

    name: str
    kind: str = "categorical"
    bins: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.bins is not None:
            if self.kind != "continuous":
                raise DataError(f"feature {self.name!r}: bins only apply to continuous columns")
            if self.bins < 2:
                raise DataError(f"feature {self.name!r}: bins must be >= 2, got {self.bins}")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature declarations plus an optional label column name."""

    features: tuple[FeatureSpec, ...]
    label: str | None = None

    def __post_init__(self) -> None:
        if not self.features:
            raise DataError("schema declares no features")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("schema has duplicate feature names")
        if self.label is not None and self.label in names:
            raise DataError(f"label column {self.label!r} also declared as a feature")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        try:
            raw = d["features"]
        except (KeyError, TypeError):
            raise DataError("schema JSON must contain a 'features' list") from None
        feats = tuple(
            FeatureSpec(name=f["name"], kind=f.get("kind", "categorical"), bins=f.get("bins"))
            for f in raw
        )
        return cls(features=feats, label=d.get("label"))

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            entry: dict[str, Any] = {"name": f.name, "kind": f.kind}
            if f.bins is not None:
                entry["bins"] = f.bins
            feats.append(entry)
        d: dict[str, Any] = {"features": feats}
        if self.label is not None:
            d["label"] = self.label
        return d

    @classmethod
    def load(cls, path: str) -> "FeatureSchema":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"schema file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(d)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


@dataclass
class RawTable:
    """Column-major table straight off the wire; cells are raw values."""

    names: list[str]
    columns: dict[str, list]

    @property
    def n_rows(self) -> int:
        return len(self.columns[self.names[0]]) if self.names else 0


@dataclass
class EncodedDataset:
    """Integer-coded rows plus the vocabularies needed to decode them.

    codes[n, m] is the index of row n's value for feature m in vocab[m],
    or UNK_CODE for values unseen when the vocabulary was built.
    """

    codes: np.ndarray                      # (N, M) int32
    vocab: list[list]                      # vocab[m][i] = raw value with code i
    feature_names: list[str]
    labels: np.ndarray | None = None       # optional label column, raw values

    @property
    def n_rows(self) -> int:
        return int(self.codes.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.codes.shape[1])

    @property
    def dims(self) -> list[int]:
        """Per-feature category counts D_m."""
        return [len(v) for v in self.vocab]


def load_csv(path: str, schema: FeatureSchema) -> RawTable:
    """Read an RFC-4180 CSV whose header covers the schema's columns.

    Continuous columns are parsed to float (empty cells become NaN); every
    structural or type problem is reported with the offending line number.
    """
    wanted = list(schema.names)
    if schema.label is not None:
        wanted.append(schema.label)
    kind_of = {f.name: f.kind for f in schema.features}

    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None

    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"{path}: header is missing columns {missing}")
        width = len(header)
        idx = {c: header.index(c) for c in wanted}

        columns: dict[str, list] = {c: [] for c in wanted}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}"
                )
            for c in wanted:
                cell = row[idx[c]]
                if kind_of.get(c) == "continuous":
                    if cell == "" or cell.lower() == "nan":
                        columns[c].append(float("nan"))
                    else:
                        try:
                            columns[c].append(float(cell))
                        except ValueError:
                            raise DataError(
                                f"{path}: line {lineno}: column {c!r}: "
                                f"not numeric: {cell!r}"
                            ) from None
                else:
                    columns[c].append(cell)

    return RawTable(names=wanted, columns=columns)


def bin_continuous(values: Sequence[float], bin_count: int) -> np.ndarray:
    """Equal-frequency binning of a numeric column into integer bin ids.

    Quantile edges are deduplicated, so heavily tied columns produce fewer
    than bin_count distinct bins (a constant column collapses to one). NaN
    values get a dedicated bin of their own.
    """
    if bin_count < 2:
        raise DataError(f"bin_count must be >= 2, got {bin_count}")
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DataError("bin_continuous expects a 1-D column")
    finite = np.isfinite(arr)
    if not finite.any():
        raise DataError("cannot bin a column with no finite values")
    probs = np.linspace(0.0, 1.0, bin_count + 1)[1:-1]
    edges = np.unique(np.quantile(arr[finite], probs))
    codes = np.digitize(arr, edges).astype(np.int64)
    # NaN sorts after every edge and would collide with the top bin
    codes[~finite] = bin_count
    return codes


def _first_appearance_codes(values: Sequence) -> tuple[np.ndarray, list]:
    mapping: dict = {}
    codes = np.empty(len(values), dtype=np.int32)
    for n, v in enumerate(values):
        code = mapping.get(v)
        if code is None:
            code = len(mapping)
            mapping[v] = code
        codes[n] = code
    return codes, list(mapping)


def encode(
    table: RawTable, schema: FeatureSchema, bin_count: int = DEFAULT_BIN_COUNT
) -> EncodedDataset:
    """Discretize and integer-code a table in schema feature order.

    Vocabularies list distinct values in order of first appearance, making the
    encoding deterministic for a given row order. A feature's own ``bins``
    override wins over the bin_count argument.
    """
    n_rows = table.n_rows
    if n_rows == 0:
        raise DataError("cannot encode an empty table")
    codes = np.empty((n_rows, len(schema.features)), dtype=np.int32)
    vocab: list[list] = []
    for m, feat in enumerate(schema.features):
        if feat.name not in table.columns:
            raise DataError(f"table has no column {feat.name!r}")
        col = table.columns[feat.name]
        if feat.kind == "continuous":
            col = bin_continuous(col, feat.bins or bin_count).tolist()
        codes[:, m], vocab_m = _first_appearance_codes(col)
        vocab.append(vocab_m)
    labels = None
    if schema.label is not None:
        if schema.label not in table.columns:
            raise DataError(f"table has no label column {schema.label!r}")
        labels = np.asarray(table.columns[schema.label])
    return EncodedDataset(
        codes=codes, vocab=vocab, feature_names=list(schema.names), labels=labels
    )


def encode_with_vocab(
    table: RawTable,
    schema: FeatureSchema,
    vocab: list[list],
    bin_count: int = DEFAULT_BIN_COUNT,
) -> EncodedDataset:
    """Code a table against an existing (fit-time) vocabulary.

    Values absent from the vocabulary map to UNK_CODE. Comparison happens on
    the string form, the common denominator between in-memory values and
    vocabularies round-tripped through JSON.
    """
    if len(vocab) != len(schema.features):
        raise DataError(
            f"vocabulary covers {len(vocab)} features, schema declares {len(schema.features)}"
        )
    n_rows = table.n_rows
    codes = np.empty((n_rows, len(schema.features)), dtype=np.int32)
    for m, feat in enumerate(schema.features):
        if feat.name not in table.columns:
            raise DataError(f"table has no column {feat.name!r}")
        col = table.columns[feat.name]
        if feat.kind == "continuous":
            col = bin_continuous(col, feat.bins or bin_count).tolist()
        mapping = {str(v): i for i, v in enumerate(vocab[m])}
        codes[:, m] = [mapping.get(str(v), UNK_CODE) for v in col]
    labels = None
    if schema.label is not None and schema.label in table.columns:
        labels = np.asarray(table.columns[schema.label])
    return EncodedDataset(
        codes=codes, vocab=[list(v) for v in vocab],
        feature_names=list(schema.names), labels=labels,
    )


def decode(ds: EncodedDataset) -> RawTable:
    """Map codes back to raw vocabulary values (bin ids for binned columns)."""
    columns: dict[str, list] = {}
    for m, name in enumerate(ds.feature_names):
        vocab_m = ds.vocab[m]
        columns[name] = [
            vocab_m[c] if c != UNK_CODE else None for c in ds.codes[:, m].tolist()
        ]
    return RawTable(names=list(ds.feature_names), columns=columns)


def load_odds_mat(path: str) -> tuple[RawTable, FeatureSchema, np.ndarray]:
    """Load an ODDS-style .mat benchmark file: X (n, d) features, y (n,) labels."""
    from scipy.io import loadmat

    try:
        mat = loadmat(path)
    except FileNotFoundError:
        raise DataError(f"input file not found: {path}") from None
    if "X" not in mat or "y" not in mat:
        raise DataError(f"{path}: expected variables 'X' and 'y'")
    X = np.asarray(mat["X"], dtype=float)
    y = np.asarray(mat["y"]).ravel().astype(int)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"{path}: X and y shapes disagree")
    names = [f"x{j}" for j in range(X.shape[1])]
    columns: dict[str, list] = {name: X[:, j].tolist() for j, name in enumerate(names)}
    schema = FeatureSchema(
        features=tuple(FeatureSpec(name=n, kind="continuous") for n in names)
    )
    return RawTable(names=names, columns=columns), schema, y
