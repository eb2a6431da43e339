"""Mixed-type tabular data: schema, CSV ingestion and the Gower distance.

Instances are 1-D float arrays positionally aligned with the schema.
Continuous features hold their value, categorical features hold the level
index as a float, and missing entries are NaN.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
_MISSING_TOKENS = {"", "NA", "NaN", "nan"}


class SchemaError(ValueError):
    """Schema definition is inconsistent or a row does not conform to it."""


class DataError(ValueError):
    """A data file could not be parsed against its schema."""


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = CONTINUOUS
    levels: tuple[str, ...] = ()
    range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(str(lv) for lv in self.levels))
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise SchemaError(f"categorical feature {self.name!r} needs levels")
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"categorical feature {self.name!r} has duplicate levels")
            if self.range is not None:
                raise SchemaError(f"categorical feature {self.name!r} cannot declare a range")
        else:
            if self.levels:
                raise SchemaError(f"continuous feature {self.name!r} cannot declare levels")
            if self.range is not None:
                lo, hi = (float(v) for v in self.range)
                if not lo <= hi:
                    raise SchemaError(f"feature {self.name!r}: range lo > hi")
                object.__setattr__(self, "range", (lo, hi))

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def n_levels(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    target: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.target is not None and self.target in names:
            raise SchemaError(f"target {self.target!r} is also listed as a feature")

    @property
    def p(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.features], dtype=bool)

    @property
    def n_levels(self) -> np.ndarray:
        """Number of levels per feature (0 for continuous)."""
        return np.array([f.n_levels for f in self.features], dtype=np.int64)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown feature {name!r}") from None

    def with_feature(self, feature: Feature) -> "FeatureSchema":
        return FeatureSchema(self.features + (feature,), target=self.target)

    def drop_last(self) -> "FeatureSchema":
        return FeatureSchema(self.features[:-1], target=self.target)

    def to_dict(self) -> dict:
        out = []
        for f in self.features:
            entry: dict = {"name": f.name, "kind": f.kind}
            if f.is_categorical:
                entry["levels"] = list(f.levels)
            elif f.range is not None:
                entry["range"] = list(f.range)
            out.append(entry)
        return {"target": self.target, "features": out}

    @classmethod
    def from_dict(cls, spec: dict) -> "FeatureSchema":
        if not isinstance(spec, dict) or "features" not in spec:
            raise SchemaError("schema needs a 'features' list")
        feats = []
        for entry in spec["features"]:
            if "name" not in entry:
                raise SchemaError(f"schema entry without name: {entry!r}")
            rng = entry.get("range")
            feats.append(
                Feature(
                    name=str(entry["name"]),
                    kind=entry.get("kind", CONTINUOUS),
                    levels=tuple(entry.get("levels", ()) or ()),
                    range=tuple(rng) if rng is not None else None,
                )
            )
        return cls(tuple(feats), target=spec.get("target"))

    def validate_instance(self, x: np.ndarray, allow_missing: bool = True) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise SchemaError(f"instance has length {x.shape}, schema has {self.p} features")
        for j, f in enumerate(self.features):
            v = x[j]
            if math.isnan(v):
                if not allow_missing:
                    raise SchemaError(f"feature {f.name!r} is missing")
                continue
            if not math.isfinite(v):
                raise SchemaError(f"feature {f.name!r} is not finite")
            if f.is_categorical and (v != int(v) or not 0 <= v < f.n_levels):
                raise SchemaError(f"feature {f.name!r}: invalid level index {v}")


def load_schema(path: str | Path) -> FeatureSchema:
    """Read a schema from a YAML (or JSON) file."""
    with open(path, encoding="utf-8") as fh:
        spec = yaml.safe_load(fh)
    return FeatureSchema.from_dict(spec)


def save_schema(schema: FeatureSchema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)


@dataclass(frozen=True)
class Dataset:
    """Rows of a tabular dataset, stored as an (n, p) float matrix."""

    schema: FeatureSchema
    X: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, self.schema.p)
        if X.ndim != 2 or X.shape[1] != self.schema.p:
            raise SchemaError(f"data shape {X.shape} does not match {self.schema.p} features")
        if np.isinf(X).any():
            raise SchemaError("infinite values are not allowed")
        cat = self.schema.categorical_mask
        if cat.any():
            codes = X[:, cat]
            ok = np.isnan(codes) | ((codes == np.floor(codes)) & (codes >= 0) & (codes < self.schema.n_levels[cat]))
            if not ok.all():
                raise SchemaError("categorical column holds an invalid level index")
        X.flags.writeable = False
        object.__setattr__(self, "X", X)
        if self.target is not None:
            t = np.array(self.target, dtype=float, copy=True)
            if t.shape != (X.shape[0],):
                raise SchemaError("target length does not match row count")
            t.flags.writeable = False
            object.__setattr__(self, "target", t)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.X[i].copy()

    def subset(self, idx) -> "Dataset":
        t = None if self.target is None else self.target[idx]
        return Dataset(self.schema, self.X[idx], t)


@dataclass(frozen=True)
class FeatureRanges:
    """Observed [min, max] per continuous feature; NaN for categorical ones."""

    lo: np.ndarray
    hi: np.ndarray
    categorical: np.ndarray = field(repr=False)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


def feature_ranges(d: Dataset) -> FeatureRanges:
    if d.n == 0:
        raise DataError("cannot compute ranges of an empty dataset")
    cat = d.schema.categorical_mask
    lo = np.full(d.p, np.nan)
    hi = np.full(d.p, np.nan)
    for j in np.flatnonzero(~cat):
        col = d.X[:, j]
        col = col[~np.isnan(col)]
        if col.size:
            lo[j], hi[j] = col.min(), col.max()
        else:
            lo[j] = hi[j] = 0.0
    return FeatureRanges(lo, hi, cat)


def gower_matrix(A: np.ndarray, B: np.ndarray, ranges: FeatureRanges) -> np.ndarray:
    """Gower distances between every row of ``A`` and every row of ``B``.

    Continuous contributions are range-normalised absolute differences
    clipped to [0, 1]; zero-width features contribute 0 when equal and 1
    otherwise. Categorical contributions are mismatch indicators.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if np.isnan(A).any() or np.isnan(B).any():
        raise ValueError("Gower distance is undefined for instances with missing values")
    p = A.shape[1]
    total = np.zeros((A.shape[0], B.shape[0]))
    width = ranges.width
    for j in range(p):
        diff = np.abs(A[:, j, None] - B[None, :, j])
        if ranges.categorical[j]:
            total += diff > 0
        elif width[j] > 0:
            total += np.minimum(diff / width[j], 1.0)
        else:
            total += diff > 0
    return total / p


def gower_distance(a, b, schema: FeatureSchema, ranges: FeatureRanges) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (schema.p,) or b.shape != (schema.p,):
        raise SchemaError("instances do not match the schema length")
    return float(gower_matrix(a[None, :], b[None, :], ranges)[0, 0])


def _parse_cell(raw: str, feat: Feature, row: int) -> float:
    raw = raw.strip()
    if raw in _MISSING_TOKENS:
        return math.nan
    if feat.is_categorical:
        try:
            return float(feat.levels.index(raw))
        except ValueError:
            raise DataError(
                f"row {row}: unknown level {raw!r} for categorical feature {feat.name!r}"
            ) from None
    try:
        v = float(raw)
    except ValueError:
        raise DataError(f"row {row}, column {feat.name!r}: cannot parse number {raw!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {feat.name!r}: non-finite value {raw!r}")
    return v


def load_csv(path: str | Path, schema: FeatureSchema) -> Dataset:
    """Parse a CSV file into a :class:`Dataset`; column order is irrelevant."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header required") from None
        allowed = set(schema.names) | ({schema.target} if schema.target else set())
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        extra = [h for h in header if h not in allowed]
        if extra:
            raise DataError(f"{path}: unexpected column(s) {', '.join(extra)}")
        pos = [header.index(n) for n in schema.names]
        tpos = header.index(schema.target) if schema.target in header else None
        rows, target = [], []
        for i, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {i} has {len(rec)} fields, expected {len(header)}")
            rows.append([_parse_cell(rec[k], f, i) for k, f in zip(pos, schema.features)])
            if tpos is not None:
                try:
                    target.append(float(rec[tpos]))
                except ValueError:
                    raise DataError(f"row {i}, column {schema.target!r}: cannot parse number") from None
    X = np.array(rows, dtype=float).reshape(len(rows), schema.p)
    return Dataset(schema, X, np.array(target) if tpos is not None else None)


def format_value(v: float, feat: Feature) -> str:
    if math.isnan(v):
        return ""
    if feat.is_categorical:
        return feat.levels[int(v)]
    return repr(float(v))


def write_csv(
    d: Dataset,
    path: str | Path,
    extra: dict[str, Sequence[float]] | None = None,
) -> None:
    """Write ``d`` (plus its target and optional extra numeric columns)."""
    schema = d.schema
    extra = extra or {}
    header = schema.names
    if d.target is not None and schema.target:
        header = header + [schema.target]
    header = header + list(extra)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(d.n):
            rec = [format_value(v, f) for v, f in zip(d.X[i], schema.features)]
            if d.target is not None and schema.target:
                rec.append(repr(float(d.target[i])))
            rec.extend(repr(float(col[i])) for col in extra.values())
            w.writerow(rec)


def instance_from_strings(values: Iterable[str], schema: FeatureSchema) -> np.ndarray:
    """Parse one instance given as strings in schema order."""
    values = list(values)
    if len(values) != schema.p:
        raise DataError(f"expected {schema.p} values, got {len(values)}")
    return np.array([_parse_cell(v, f, 1) for v, f in zip(values, schema.features)])
