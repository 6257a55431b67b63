"""Dataset ingestion: CSV loading, factor encoding and replication counts."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np
import pandas as pd

from .core import Dataset, HypothesisTest

__all__ = [
    "FactorSpec",
    "IngestionError",
    "PRESETS",
    "ReplicationIndex",
    "count_replications",
    "discretize_quantiles",
    "load_dataset",
    "load_preset",
    "order_for_test",
    "resolve_columns",
]

INTERCEPT = "(Intercept)"


class IngestionError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class FactorSpec:
    """Dummy encoding of a categorical column against a reference level."""

    column: str
    levels: tuple
    reference_level: str

    def __post_init__(self):
        levels = tuple(str(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "reference_level", str(self.reference_level))
        if self.reference_level not in levels:
            raise ValueError(f"reference level {self.reference_level!r} not in {levels}")
        if len(set(levels)) != len(levels):
            raise ValueError(f"duplicate levels in {levels}")

    @property
    def dummy_names(self) -> list[str]:
        return [f"{self.column}[{lv}]" for lv in self.levels if lv != self.reference_level]

    def encode(self, values: Sequence[str]) -> np.ndarray:
        values = [str(v) for v in values]
        for i, v in enumerate(values):
            if v not in self.levels:
                raise IngestionError(f"row {i + 1}, column {self.column!r}: unknown level {v!r}")
        others = [lv for lv in self.levels if lv != self.reference_level]
        return np.array([[float(v == lv) for lv in others] for v in values]).reshape(len(values), len(others))


@dataclass(frozen=True)
class ReplicationIndex:
    """Multiplicities ``N(x)`` of the distinct sub-rows ``x[column_subset]``."""

    column_subset: tuple
    counts: dict = field(hash=False)

    def __post_init__(self):
        object.__setattr__(self, "column_subset", tuple(int(j) for j in self.column_subset))
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("replication counts must be positive")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def key(self, row) -> tuple:
        row = np.asarray(row, dtype=float)
        return tuple(row[list(self.column_subset)].tolist())

    def lookup(self, rows) -> np.ndarray:
        """Counts for each full design row in ``rows``."""
        return np.array([self.counts[self.key(r)] for r in np.atleast_2d(rows)], dtype=np.int64)


def count_replications(data, column_subset) -> ReplicationIndex:
    """Count how often each distinct sub-row occurs in the design.

    ``data`` may be a :class:`Dataset` or a bare matrix. Rows are keyed by
    exact floating-point equality.
    """
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    cols = [int(j) for j in column_subset]
    if not cols:
        raise ValueError("column_subset must be nonempty")
    if min(cols) < 0 or max(cols) >= X.shape[1]:
        raise ValueError(f"column indices {cols} out of range for {X.shape[1]} columns")
    counts = Counter(tuple(r) for r in X[:, cols].tolist())
    return ReplicationIndex(tuple(cols), dict(counts))


def discretize_quantiles(column, breakpoints) -> np.ndarray:
    """Map values to interval levels ``1..len(breakpoints)``.

    Intervals include their upper endpoint, so ``v`` gets the first level
    with ``v <= breakpoints[level - 1]``. The last breakpoint must be ``inf``.
    """
    v = np.asarray(column, dtype=float)
    bp = np.asarray(breakpoints, dtype=float)
    if bp.ndim != 1 or bp.size == 0 or not np.isposinf(bp[-1]):
        raise ValueError("breakpoints must be a nonempty list ending with +inf")
    if np.any(np.diff(bp) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise IngestionError(f"row {bad[0] + 1}: non-finite value {v[bad[0]]!r}")
    return np.searchsorted(bp, v, side="left") + 1


def _read(csv_source) -> pd.DataFrame:
    if isinstance(csv_source, pd.DataFrame):
        return csv_source.copy()
    try:
        return pd.read_csv(csv_source, sep=",", encoding="utf-8", dtype=str)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot read CSV: {exc}") from exc


def _int_column(df: pd.DataFrame, name: str) -> np.ndarray:
    if name not in df.columns:
        raise IngestionError(f"missing column {name!r}")
    out = np.empty(len(df), dtype=np.int64)
    for i, raw in enumerate(df[name].tolist()):
        try:
            val = float(raw)
        except (TypeError, ValueError):
            raise IngestionError(f"row {i + 1}, column {name!r}: not a number: {raw!r}") from None
        if not np.isfinite(val) or val != int(val) or val < 0:
            raise IngestionError(f"row {i + 1}, column {name!r}: expected a non-negative integer, got {raw!r}")
        out[i] = int(val)
    return out


def load_dataset(
    csv_source,
    response_column: str,
    factor_specs: Sequence[FactorSpec] = (),
    trials_column: str | None = None,
    covariates: Sequence[str] | None = None,
    tested: Sequence[str] | None = None,
) -> Dataset:
    """Build a :class:`Dataset` from a CSV path, file object or DataFrame.

    Parameters
    ----------
    response_column
        0/1 responses, or event counts when ``trials_column`` is given.
    factor_specs
        Categorical columns to dummy-encode; other covariates are numeric.
    trials_column
        Number of trials per aggregated row. Each row is expanded into
        ``trials`` Bernoulli rows, ``events`` of them successes.
    covariates
        Columns entering the design, in order. Defaults to every column other
        than the response and trials columns.
    tested
        Covariate names (or design column names) under test; their columns
        are moved to the front.
    """
    df = _read(csv_source)
    factors = {f.column: f for f in factor_specs}
    skip = {response_column, trials_column}
    if covariates is None:
        covariates = [c for c in df.columns if c not in skip]
    for c in list(covariates) + list(factors):
        if c not in df.columns:
            raise IngestionError(f"missing column {c!r}")

    events = _int_column(df, response_column)
    if trials_column is not None:
        trials = _int_column(df, trials_column)
        over = np.flatnonzero(events > trials)
        if over.size:
            i = over[0]
            raise IngestionError(
                f"row {i + 1}, column {response_column!r}: events {events[i]} exceed trials {trials[i]}"
            )
    else:
        bad = np.flatnonzero(events > 1)
        if bad.size:
            raise IngestionError(f"row {bad[0] + 1}, column {response_column!r}: response must be 0 or 1")
        trials = np.ones(len(df), dtype=np.int64)

    blocks, names = [], []
    for c in covariates:
        if c in factors:
            blocks.append(factors[c].encode(df[c].tolist()))
            names.extend(factors[c].dummy_names)
        else:
            col = pd.to_numeric(df[c], errors="coerce").to_numpy(dtype=float)
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise IngestionError(f"row {bad[0] + 1}, column {c!r}: not a finite number")
            blocks.append(col[:, None])
            names.append(c)
    blocks.append(np.ones((len(df), 1)))
    names.append(INTERCEPT)
    X_agg = np.hstack(blocks)

    X = np.repeat(X_agg, trials, axis=0)
    y = np.concatenate([np.r_[np.ones(e), np.zeros(t - e)] for e, t in zip(events, trials)]) if len(df) else np.zeros(0)
    data = Dataset(X, y, tuple(names))
    if tested:
        data, _ = order_for_test(data, tested)
    return data


def resolve_columns(data: Dataset, names: Sequence[str]) -> list[int]:
    """Design column indices matching covariate or column names."""
    out = []
    for name in names:
        hits = [j for j, c in enumerate(data.column_names) if c == name or c.startswith(f"{name}[")]
        if not hits:
            raise IngestionError(f"{name!r} does not match any design column of {list(data.column_names)}")
        if data.k - 1 in hits:
            raise IngestionError("the intercept cannot be tested")
        out.extend(j for j in hits if j not in out)
    return out


def order_for_test(data: Dataset, names: Sequence[str]) -> tuple[Dataset, HypothesisTest]:
    """Move the tested columns to the front and build the matching test."""
    lead = resolve_columns(data, names)
    rest = [j for j in range(data.k) if j not in lead]
    return data.columns(lead + rest), HypothesisTest(len(lead), data.k)


def _breast_cancer(tested):
    src = resources.files("intprior.datasets").joinpath("breast_cancer.csv")
    with src.open("r", encoding="utf-8") as fh:
        return load_dataset(
            fh,
            response_column="deaths",
            trials_column="total",
            factor_specs=[
                FactorSpec("receptor", ("1", "2"), "2"),
                FactorSpec("stage", ("1", "2", "3"), "1"),
            ],
            covariates=["receptor", "stage"],
            tested=tested,
        )


def _birthwt(tested):
    src = resources.files("intprior.datasets").joinpath("birthwt.csv")
    with src.open("r", encoding="utf-8") as fh:
        df = pd.read_csv(fh)
    df = pd.DataFrame(
        {
            "low": df["low"],
            "smoke": df["smoke"].astype(str),
            "race": df["race"].astype(str),
            "ptl": np.where(df["ptl"] >= 1, "1+", "0"),
            "age": discretize_quantiles(df["age"], [18, 20, 25, 30, np.inf]).astype(str),
        }
    )
    return load_dataset(
        df,
        response_column="low",
        factor_specs=[
            FactorSpec("smoke", ("0", "1"), "0"),
            FactorSpec("race", ("1", "2", "3"), "1"),
            FactorSpec("ptl", ("0", "1+"), "0"),
            FactorSpec("age", ("1", "2", "3", "4", "5"), "1"),
        ],
        tested=tested,
    )


# Default protocols: the tested covariates and the multi-chain run sizes.
PRESETS = {
    "breast_cancer": {"loader": _breast_cancer, "null": ["receptor"], "chains": 50, "iters": 10000},
    "birthwt": {"loader": _birthwt, "null": ["smoke"], "chains": 30, "iters": 30000},
}


def load_preset(name: str, tested: Sequence[str] | None = None) -> Dataset:
    """Load a packaged dataset with the tested covariates moved first.

    ``breast_cancer``: 192 women by receptor level (reference level 2) and
    stage (reference 1). ``birthwt``: 189 births with smoking, race
    (reference white), previous premature labours (0 vs 1+) and age
    grouped at upper endpoints 18, 20, 25, 30.
    """
    if name not in PRESETS:
        raise IngestionError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    return preset["loader"](preset["null"] if tested is None else tested)
