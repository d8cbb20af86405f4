"""Binary indicator datasets: CSV ingest, validation, summaries, pattern collapsing.

Column roles are declared either through an explicit :class:`Schema` or by a
header-prefix convention: ``i:name`` for indicators, ``c:name`` for binary
covariates and ``y:name`` for continuous outcomes.  A header without any
prefixes and no explicit schema is read as all-indicator.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "."})
ROLE_PREFIXES = {"i:": "indicators", "c:": "covariates", "y:": "outcomes"}


class DataError(ValueError):
    """Invalid input data or schema."""


@dataclass(frozen=True)
class Schema:
    indicators: tuple[str, ...] = ()
    covariates: tuple[str, ...] = ()
    outcomes: tuple[str, ...] = ()

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]]) -> "Schema":
        unknown = set(mapping) - {"indicators", "covariates", "outcomes"}
        if unknown:
            raise DataError(f"unknown schema keys: {sorted(unknown)}")
        return cls(
            indicators=tuple(mapping.get("indicators", ())),
            covariates=tuple(mapping.get("covariates", ())),
            outcomes=tuple(mapping.get("outcomes", ())),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_mapping(json.load(fh))

    def is_empty(self) -> bool:
        return not (self.indicators or self.covariates or self.outcomes)

    def to_dict(self) -> dict:
        return {
            "indicators": list(self.indicators),
            "covariates": list(self.covariates),
            "outcomes": list(self.outcomes),
        }


@dataclass(frozen=True, eq=False)
class CategoricalDataset:
    """N x J binary indicator matrix with optional auxiliary columns.

    Attributes:
        indicators: (N, J) int8 array of 0/1 values.
        indicator_names: J column labels.
        covariates: name -> (N,) array of 0/1 values.
        outcomes: name -> (N,) float array.
        dropped_rows: 1-based data-row numbers removed for missing values.
    """

    indicators: np.ndarray
    indicator_names: tuple[str, ...]
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    outcomes: Mapping[str, np.ndarray] = field(default_factory=dict)
    dropped_rows: tuple[int, ...] = ()

    def __post_init__(self):
        u = np.asarray(self.indicators)
        if u.ndim != 2:
            raise DataError("indicators must be a 2-D matrix")
        n, j = u.shape
        if n < 1 or j < 1:
            raise DataError(f"need N >= 1 and J >= 1, got N={n}, J={j}")
        if not np.isin(u, (0, 1)).all():
            raise DataError("indicator cells must be 0 or 1")
        names = tuple(self.indicator_names)
        if len(names) != j:
            raise DataError(f"{len(names)} indicator names for {j} columns")
        all_names = names + tuple(self.covariates) + tuple(self.outcomes)
        if len(set(all_names)) != len(all_names):
            raise DataError("column names must be unique")
        covs = {}
        for name, col in self.covariates.items():
            col = np.asarray(col)
            if col.shape != (n,):
                raise DataError(f"covariate {name!r} has wrong length")
            if not np.isin(col, (0, 1)).all():
                raise DataError(f"covariate {name!r} must be 0/1")
            covs[name] = _frozen(col.astype(np.int8))
        outs = {}
        for name, col in self.outcomes.items():
            col = np.asarray(col, dtype=float)
            if col.shape != (n,):
                raise DataError(f"outcome {name!r} has wrong length")
            if not np.isfinite(col).all():
                raise DataError(f"outcome {name!r} has non-finite values")
            outs[name] = _frozen(col)
        object.__setattr__(self, "indicators", _frozen(u.astype(np.int8)))
        object.__setattr__(self, "indicator_names", names)
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "outcomes", outs)
        object.__setattr__(self, "dropped_rows", tuple(self.dropped_rows))

    @property
    def n(self) -> int:
        return self.indicators.shape[0]

    @property
    def n_indicators(self) -> int:
        return self.indicators.shape[1]

    @classmethod
    def from_array(cls, u, names: Sequence[str] | None = None, **aux) -> "CategoricalDataset":
        u = np.asarray(u)
        if u.ndim == 1:
            u = u[:, None]
        if names is None:
            names = [f"u{j + 1}" for j in range(u.shape[1])]
        return cls(u, tuple(names), **aux)

    def subset(self, rows) -> "CategoricalDataset":
        """Row subset (or resample, when ``rows`` repeats indices)."""
        rows = np.asarray(rows)
        return CategoricalDataset(
            self.indicators[rows],
            self.indicator_names,
            {k: v[rows] for k, v in self.covariates.items()},
            {k: v[rows] for k, v in self.outcomes.items()},
        )


@dataclass(frozen=True, eq=False)
class PatternTable:
    """Distinct response patterns with their multiplicities."""

    patterns: np.ndarray
    weights: np.ndarray
    inverse: np.ndarray  # row i of the source data is patterns[inverse[i]]

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    def expand(self) -> np.ndarray:
        """Rows in source order (grouped by pattern if no inverse index is kept)."""
        if self.inverse.size == int(self.weights.sum()):
            return self.patterns[self.inverse]
        return np.repeat(self.patterns, self.weights, axis=0)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


def collapse_patterns(ds: CategoricalDataset | np.ndarray) -> PatternTable:
    u = ds.indicators if isinstance(ds, CategoricalDataset) else np.asarray(ds)
    patterns, inverse, counts = np.unique(u, axis=0, return_inverse=True, return_counts=True)
    return PatternTable(_frozen(patterns), _frozen(counts.astype(np.int64)), _frozen(inverse.ravel()))


def describe(ds: CategoricalDataset) -> dict:
    """Endorsement proportion per indicator and the distribution of row totals."""
    u = ds.indicators
    counts = u.sum(axis=1)
    hist = np.bincount(counts, minlength=ds.n_indicators + 1)
    sd = float(counts.std(ddof=1)) if ds.n > 1 else 0.0
    return {
        "n": ds.n,
        "n_indicators": ds.n_indicators,
        "proportions": {name: float(p) for name, p in zip(ds.indicator_names, u.mean(axis=0))},
        "selection_histogram": [int(h) for h in hist],
        "selection_mean": float(counts.mean()),
        "selection_sd": sd,
        "pct_any_selected": float(100.0 * np.mean(counts > 0)),
    }


def parse_role_header(header: Sequence[str]) -> tuple[Schema, dict[str, str]]:
    """Split ``i:``/``c:``/``y:`` prefixed headers into a schema and a rename map."""
    roles: dict[str, list[str]] = {"indicators": [], "covariates": [], "outcomes": []}
    rename = {}
    for col in header:
        for prefix, role in ROLE_PREFIXES.items():
            if col.startswith(prefix):
                bare = col[len(prefix):]
                roles[role].append(bare)
                rename[col] = bare
                break
    return Schema.from_mapping(roles), rename


def load_csv(path: str | Path, schema: Schema | None = None, missing: str = "drop") -> CategoricalDataset:
    """Read a comma-separated file into a validated dataset.

    Rows with a missing cell in any declared column are dropped (listwise) and
    their 1-based data-row numbers kept on ``dropped_rows``; pass
    ``missing="error"`` to raise instead.
    """
    if missing not in ("drop", "error"):
        raise ValueError("missing must be 'drop' or 'error'")
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        body = [row for row in reader if any(cell.strip() for cell in row)]
    if not body:
        raise DataError(f"{path}: no data rows")

    prefixed, rename = parse_role_header(header)
    header = [rename.get(h, h) for h in header]
    if schema is None or schema.is_empty():
        schema = prefixed if not prefixed.is_empty() else Schema(indicators=tuple(header))
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    index = {name: k for k, name in enumerate(header)}
    wanted = schema.indicators + schema.covariates + schema.outcomes
    if not schema.indicators:
        raise DataError("schema declares no indicator columns")
    for name in wanted:
        if name not in index:
            raise DataError(f"unknown column {name!r} (header: {', '.join(header)})")

    binary_cols = set(schema.indicators) | set(schema.covariates)
    values: dict[str, list[float]] = {name: [] for name in wanted}
    dropped = []
    for r, row in enumerate(body, start=1):
        if len(row) < len(header):
            row = row + [""] * (len(header) - len(row))
        cells = {name: row[index[name]].strip() for name in wanted}
        absent = [name for name, cell in cells.items() if cell.lower() in MISSING_TOKENS]
        if absent:
            if missing == "error":
                raise DataError(f"row {r}: missing value in column {absent[0]!r}")
            dropped.append(r)
            continue
        for name, cell in cells.items():
            try:
                x = float(cell)
            except ValueError:
                raise DataError(f"row {r}, column {name!r}: not a number: {cell!r}") from None
            if name in binary_cols and x not in (0.0, 1.0):
                raise DataError(f"row {r}, column {name!r}: value {cell!r} is not 0/1")
            if not math.isfinite(x):
                raise DataError(f"row {r}, column {name!r}: non-finite value")
            values[name].append(x)
    if dropped:
        logger.warning("%s: dropped %d rows with missing values: %s", path, len(dropped), dropped)
    if not values[schema.indicators[0]]:
        raise DataError(f"{path}: every row has missing values")

    u = np.column_stack([values[name] for name in schema.indicators]).astype(np.int8)
    return CategoricalDataset(
        u,
        schema.indicators,
        {name: np.asarray(values[name], dtype=np.int8) for name in schema.covariates},
        {name: np.asarray(values[name], dtype=float) for name in schema.outcomes},
        dropped_rows=tuple(dropped),
    )


def write_csv(ds: CategoricalDataset, path: str | Path, extra: Mapping[str, Sequence] | None = None,
              prefixed: bool = True) -> None:
    """Write ``ds`` with role-prefixed headers so that :func:`load_csv` round-trips it."""
    cols: list[tuple[str, np.ndarray]] = []
    tag = (lambda p, n: p + n) if prefixed else (lambda p, n: n)
    for j, name in enumerate(ds.indicator_names):
        cols.append((tag("i:", name), ds.indicators[:, j]))
    for name, col in ds.covariates.items():
        cols.append((tag("c:", name), col))
    for name, col in ds.outcomes.items():
        cols.append((tag("y:", name), col))
    for name, col in (extra or {}).items():
        cols.append((name, np.asarray(col)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c[0] for c in cols])
        for i in range(ds.n):
            w.writerow([_fmt(c[1][i]) for c in cols])


def _fmt(x) -> str:
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)
