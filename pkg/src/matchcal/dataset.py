"""CSV microdata ingestion: missing-code filters, recodes and dummy coding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ParseError, SchemaError
from .population import FinitePopulation


@dataclass
class Covariate:
    """One input column.

    ``kind`` is "continuous" or "categorical". Categorical levels are
    compared as strings after ``merge`` is applied; the first entry of
    ``levels`` is the reference level and gets no dummy. ``cut`` turns a
    continuous column into the indicator ``value >= cut``. ``missing`` lists
    codes that drop the row. ``source`` names the raw column when it differs
    from ``name``, so one column can feed several recodes.
    """

    name: str
    kind: str = "continuous"
    levels: Optional[list] = None
    merge: dict = field(default_factory=dict)
    cut: Optional[float] = None
    missing: list = field(default_factory=list)
    source: Optional[str] = None

    @property
    def column(self) -> str:
        return self.source or self.name

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise SchemaError(f"{self.name}: kind must be continuous or categorical, got {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels or len(self.levels) < 2:
                raise SchemaError(f"{self.name}: a categorical column needs at least two levels")
            self.levels = [str(v) for v in self.levels]
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"{self.name}: duplicate levels")
        self.merge = {str(k): str(v) for k, v in self.merge.items()}
        self.missing = [str(v) for v in self.missing]

    def output_names(self) -> list:
        if self.kind == "categorical":
            return [f"{self.name}={lv}" for lv in self.levels[1:]]
        if self.cut is not None:
            return [f"{self.name}>={self.cut:g}"]
        return [self.name]


@dataclass
class Response:
    """Analysis variable; with ``positive`` set it becomes a 0/1 indicator."""

    name: str
    positive: Optional[list] = None
    missing: list = field(default_factory=list)

    def __post_init__(self):
        if self.positive is not None:
            self.positive = [str(v) for v in self.positive]
        self.missing = [str(v) for v in self.missing]


@dataclass
class DatasetSchema:
    covariates: list
    responses: list = field(default_factory=list)
    design_weight: Optional[str] = None
    final_weight: Optional[str] = None
    keep: list = field(default_factory=list)  # extra raw columns carried through
    missing: list = field(default_factory=list)  # codes dropped in every referenced column

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        return cls(
            covariates=[Covariate(**c) for c in d.get("covariates", [])],
            responses=[Response(**r) if isinstance(r, dict) else Response(r) for r in d.get("responses", [])],
            design_weight=d.get("design_weight"),
            final_weight=d.get("final_weight"),
            keep=list(d.get("keep", [])),
            missing=[str(v) for v in d.get("missing", [])],
        )

    def columns(self) -> list:
        cols = [c.column for c in self.covariates] + [r.name for r in self.responses]
        cols += [w for w in (self.design_weight, self.final_weight) if w]
        cols += list(self.keep)
        return list(dict.fromkeys(cols))

    def covariate(self, name: str) -> Covariate:
        for c in self.covariates:
            if c.name == name:
                return c
        raise SchemaError(f"no covariate named {name!r} in the schema")


@dataclass
class LoadedDataset:
    """Filtered, recoded data. Row ``i`` came from file line ``lines[i]``."""

    x: np.ndarray
    x_names: list
    blocks: dict  # covariate name -> column indices in x
    responses: dict
    design_weight: Optional[np.ndarray]
    final_weight: Optional[np.ndarray]
    extra: pd.DataFrame
    lines: np.ndarray
    n_read: int

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_dropped(self) -> int:
        return self.n_read - self.n_rows

    def design(self, names, intercept: bool = True) -> np.ndarray:
        """Columns of ``x`` belonging to the covariates in ``names``."""
        idx = [i for n in names for i in self.blocks[n]]
        cols = [self.x[:, idx]]
        if intercept:
            cols.insert(0, np.ones((self.n_rows, 1)))
        return np.hstack(cols)

    def population(self, response: str, names=None) -> FinitePopulation:
        x = self.x if names is None else self.design(names, intercept=False)
        return FinitePopulation(x=x, y=self.responses[response], stratum=np.ones(self.n_rows, dtype=np.int64))


def _numeric(series: pd.Series, name: str, lines: np.ndarray) -> np.ndarray:
    out = pd.to_numeric(series, errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        k = int(bad[0])
        raise ParseError(f"line {int(lines[k])}: column {name!r}: cannot parse {series.iloc[k]!r} as a number")
    return out


def load_dataset(path, schema: DatasetSchema) -> LoadedDataset:
    """Read a CSV, drop rows holding missing codes, recode and dummy-expand.

    Raises:
        SchemaError: a referenced column is absent or a categorical value is
            not among the declared levels (message names the file line).
        ParseError: a numeric field cannot be parsed.
    """
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file") from None
    absent = [c for c in schema.columns() if c not in raw.columns]
    if absent:
        raise SchemaError(f"{path}: missing columns {absent}")
    raw = raw.apply(lambda s: s.str.strip())
    n_read = len(raw)
    lines = np.arange(n_read) + 2  # header is line 1

    drop = np.zeros(n_read, dtype=bool)
    for name, codes in _missing_rules(schema):
        drop |= raw[name].isin(codes).to_numpy() | (raw[name] == "").to_numpy()
    df = raw.loc[~drop].reset_index(drop=True)
    lines = lines[~drop]

    blocks, cols, names = {}, [], []
    if len({c.name for c in schema.covariates}) != len(schema.covariates):
        raise SchemaError("covariate names must be unique")
    for cov in schema.covariates:
        col = df[cov.column]
        if cov.merge:
            col = col.replace(cov.merge)
        start = len(names)
        if cov.kind == "categorical":
            unknown = ~col.isin(cov.levels)
            if unknown.any():
                k = int(np.flatnonzero(unknown.to_numpy())[0])
                raise SchemaError(f"line {int(lines[k])}: column {cov.name!r}: unknown level {col.iloc[k]!r}")
            for lv in cov.levels[1:]:
                cols.append((col == lv).to_numpy(dtype=float))
        else:
            v = _numeric(col, cov.column, lines)
            cols.append((v >= cov.cut).astype(float) if cov.cut is not None else v)
        names += cov.output_names()
        blocks[cov.name] = list(range(start, len(names)))

    responses = {}
    for r in schema.responses:
        if r.positive is not None:
            responses[r.name] = df[r.name].isin(r.positive).to_numpy(dtype=float)
        else:
            responses[r.name] = _numeric(df[r.name], r.name, lines)

    def weight(name):
        if name is None:
            return None
        w = _numeric(df[name], name, lines)
        if np.any(w <= 0):
            k = int(np.flatnonzero(w <= 0)[0])
            raise SchemaError(f"line {int(lines[k])}: column {name!r}: weights must be positive")
        return w

    x = np.column_stack(cols) if cols else np.empty((len(df), 0))
    return LoadedDataset(
        x=x,
        x_names=names,
        blocks=blocks,
        responses=responses,
        design_weight=weight(schema.design_weight),
        final_weight=weight(schema.final_weight),
        extra=df[schema.keep].copy() if schema.keep else pd.DataFrame(index=df.index),
        lines=lines,
        n_read=n_read,
    )


def _missing_rules(schema: DatasetSchema):
    for cov in schema.covariates:
        yield cov.column, set(cov.missing) | set(schema.missing)
    for r in schema.responses:
        yield r.name, set(r.missing) | set(schema.missing)
    for w in (schema.design_weight, schema.final_weight):
        if w:
            yield w, set(schema.missing)


def interaction_design(ds: LoadedDataset, pairs, intercept: bool = True) -> np.ndarray:
    """Intercept plus products of the columns of each named covariate pair.

    Meant for binary recodes, where each product is the indicator that both
    conditions hold.
    """
    cols = [np.ones(ds.n_rows)] if intercept else []
    for a, b in pairs:
        for i in ds.blocks[a]:
            for j in ds.blocks[b]:
                cols.append(ds.x[:, i] * ds.x[:, j])
    return np.column_stack(cols)
