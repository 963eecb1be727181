"""Partially observed datasets and missingness-pattern grouping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MISSING_TOKENS = frozenset({"", "NA", "NaN"})

# Value stored in masked cells. Never read by numerics; everything consults the mask.
SENTINEL = np.nan


class DataError(ValueError):
    """Raised when input data violates the Dataset invariants."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An n x p table with a per-cell observed mask.

    ``mask[i, j]`` is True iff cell (i, j) is observed. Missing cells hold
    ``SENTINEL`` and must never be read.
    """

    values: np.ndarray
    mask: np.ndarray
    columns: tuple[str, ...] = ()
    row_index: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2 or values.shape != mask.shape:
            raise DataError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        n, p = values.shape
        if n == 0 or p == 0:
            raise DataError("dataset must have at least one row and one column")
        if not mask.any(axis=1).all():
            bad = np.flatnonzero(~mask.any(axis=1))
            raise DataError(f"rows with no observed entries: {bad[:10].tolist()}")
        if not mask.any(axis=0).all():
            bad = np.flatnonzero(~mask.any(axis=0))
            raise DataError(f"columns with no observed entries: {bad.tolist()}")
        if not np.isfinite(values[mask]).all():
            raise DataError("observed values must be finite")
        values = np.where(mask, values, SENTINEL)
        columns = tuple(self.columns) or tuple(f"x{j + 1}" for j in range(p))
        if len(columns) != p:
            raise DataError(f"{len(columns)} column names for {p} columns")
        row_index = np.arange(n) if self.row_index is None else np.asarray(self.row_index, dtype=int)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "row_index", _frozen(row_index))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def observed_counts(self) -> np.ndarray:
        """Number of observed features per row."""
        return self.mask.sum(axis=1)

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Copy of the values with masked cells replaced by ``fill``."""
        return np.where(self.mask, self.values, fill)

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.values[rows], self.mask[rows], self.columns, self.row_index[rows])

    @classmethod
    def from_array(cls, values, columns: Iterable[str] = ()) -> "Dataset":
        """Build from an array where NaN marks a missing cell."""
        values = np.asarray(values, dtype=float)
        return cls(values, ~np.isnan(values), tuple(columns))


@dataclass(frozen=True, eq=False)
class MissingnessPattern:
    observed: np.ndarray
    rows: np.ndarray
    p: int

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=int)
        if obs.size == 0 or np.any(np.diff(obs) <= 0) or obs[0] < 0 or obs[-1] >= self.p:
            raise DataError(f"invalid observed index set {obs.tolist()} for p={self.p}")
        object.__setattr__(self, "observed", _frozen(obs))
        object.__setattr__(self, "rows", _frozen(np.asarray(self.rows, dtype=int)))

    @property
    def missing(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.p), self.observed)

    @property
    def complete(self) -> bool:
        return self.observed.size == self.p

    @property
    def size(self) -> int:
        return self.rows.size


def pattern_groups(d: Dataset) -> list[MissingnessPattern]:
    """Group rows by identical mask row, ordered by first member row."""
    keys, first, inverse = np.unique(d.mask, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.ravel()
    groups = []
    for g in np.argsort(first, kind="stable"):
        groups.append(MissingnessPattern(np.flatnonzero(keys[g]), np.flatnonzero(inverse == g), d.p))
    return groups


def complete_case_subset(d: Dataset) -> tuple[Dataset, np.ndarray]:
    """Fully observed rows and their indices in ``d``."""
    rows = np.flatnonzero(d.mask.all(axis=1))
    if rows.size == 0:
        raise DataError("dataset has no complete cases")
    if rows.size == d.n:
        return d, rows
    return d.subset(rows), rows


def load_csv(
    path: str | Path,
    missing_tokens: Iterable[str] = DEFAULT_MISSING_TOKENS,
    log10_transform: bool = False,
    zero_missing: bool | Iterable[str] = False,
) -> Dataset:
    """Read a headed numeric CSV into a Dataset.

    ``zero_missing`` masks literal zeros: True for every column, or an
    iterable of column names to restrict it. Zeros are masked before the
    optional base-10 log transform.
    """
    tokens = {t.strip() for t in missing_tokens}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    p = len(header)
    values = np.full((len(rows), p), SENTINEL)
    mask = np.zeros((len(rows), p), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != p:
            raise DataError(f"{path}: line {i + 2} has {len(row)} fields, expected {p}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell in tokens:
                continue
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {i + 2}, column {header[j]!r}: non-numeric {cell!r}") from None
            mask[i, j] = True

    if zero_missing:
        cols = range(p) if zero_missing is True else [header.index(c) for c in zero_missing]
        for j in cols:
            mask[:, j] &= values[:, j] != 0
    if log10_transform:
        if np.any(values[mask] <= 0):
            raise DataError(f"{path}: non-positive observed value under log10 transform")
        values = np.where(mask, np.log10(np.where(mask, values, 1.0)), SENTINEL)
    return Dataset(values, mask, tuple(header))


def write_csv(d: Dataset, path: str | Path, missing_token: str = "NA") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(d.columns)
        for vals, obs in zip(d.values, d.mask):
            w.writerow([repr(float(v)) if o else missing_token for v, o in zip(vals, obs)])
