"""Data model for one-way clustered regression data.

A :class:`ClusteredDataset` is an ordered collection of clusters, each holding
a design matrix ``X`` (N_g rows, k columns) and a response vector ``y``.
Clusters may optionally carry superblock labels (a coarser grouping used by
the parameter-constancy test). CSV ingestion, the minimum-cluster-size
filter, and the Engel-curve model transforms live here too.

No demeaning, rescaling, or other preprocessing is applied anywhere in this
module: estimators see the numbers exactly as loaded.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    ConfigurationError,
    EmptyInputError,
    EmptyResultError,
    ParseError,
    SchemaError,
    TransformError,
)

MODEL_NAMES = ("linear-share", "linear", "double-log", "semi-log", "working-leser")


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Cluster:
    """One cluster: responses ``y`` and regressors ``X`` in row order."""

    id: str
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = _freeze(self.X)
        y = _freeze(self.y)
        if X.ndim != 2:
            raise ConfigurationError(f"cluster {self.id!r}: X must be 2-D, got ndim={X.ndim}")
        if y.ndim != 1:
            raise ConfigurationError(f"cluster {self.id!r}: y must be 1-D, got ndim={y.ndim}")
        if X.shape[0] != y.shape[0]:
            raise ConfigurationError(
                f"cluster {self.id!r}: X has {X.shape[0]} rows but y has length {y.shape[0]}"
            )
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ClusteredDataset:
    """Ordered clusters with an optional cluster-id -> superblock-label map.

    Invariants checked at construction: at least one cluster, a common
    regressor count k, unique cluster ids, and (when present) a superblock
    map covering every cluster id exactly once.
    """

    clusters: tuple[Cluster, ...]
    superblock_of: dict[str, str] | None = None

    def __post_init__(self):
        clusters = tuple(self.clusters)
        if not clusters:
            raise EmptyInputError("dataset has no clusters")
        k = clusters[0].k
        for c in clusters:
            if c.k != k:
                raise ConfigurationError(
                    f"cluster {c.id!r} has {c.k} regressors, expected {k}"
                )
        ids = [c.id for c in clusters]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ConfigurationError(f"duplicate cluster ids: {dupes}")
        sb = self.superblock_of
        if sb is not None:
            sb = dict(sb)
            missing = [i for i in ids if i not in sb]
            if missing:
                raise ConfigurationError(
                    f"superblock map missing cluster ids: {missing[:5]}"
                )
            extra = [i for i in sb if i not in set(ids)]
            if extra:
                raise ConfigurationError(
                    f"superblock map has unknown cluster ids: {extra[:5]}"
                )
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "superblock_of", sb)

    @property
    def G(self) -> int:
        return len(self.clusters)

    @property
    def k(self) -> int:
        return self.clusters[0].k

    @property
    def n_total(self) -> int:
        return sum(c.n for c in self.clusters)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(c.n for c in self.clusters)

    @property
    def superblock_labels(self) -> tuple[str, ...]:
        """Distinct superblock labels in order of first appearance."""
        if self.superblock_of is None:
            raise ConfigurationError("dataset has no superblock map")
        seen: dict[str, None] = {}
        for c in self.clusters:
            seen.setdefault(self.superblock_of[c.id], None)
        return tuple(seen)

    def superblock_members(self) -> dict[str, list[Cluster]]:
        """Clusters grouped by superblock label, dataset order within groups."""
        if self.superblock_of is None:
            raise ConfigurationError("dataset has no superblock map")
        groups: dict[str, list[Cluster]] = {lab: [] for lab in self.superblock_labels}
        for c in self.clusters:
            groups[self.superblock_of[c.id]].append(c)
        return groups


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`load_csv` / :func:`write_csv`."""

    cluster_col: str
    y_col: str
    x_cols: tuple[str, ...]
    superblock_col: str | None = None
    add_intercept: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x_cols", tuple(self.x_cols))
        if not self.x_cols and not self.add_intercept:
            raise ConfigurationError("schema needs at least one regressor column")


@dataclass(frozen=True)
class ModelSpec:
    """One of the five Engel-curve functional forms.

    name selects the (response, regressor) transform applied to columns
    ``food`` and ``total``; ``include_hhsize`` appends the household-size
    column untransformed.
    """

    name: str
    include_hhsize: bool = False

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ConfigurationError(
                f"unknown model {self.name!r}; expected one of {MODEL_NAMES}"
            )


def _parse_numeric(series: pd.Series, col: str) -> np.ndarray:
    """Parse a string column to float64, failing with the first bad row index."""
    raw = series.to_numpy(dtype=object)
    try:
        vals = raw.astype(np.float64)
    except (ValueError, TypeError):
        vals = np.empty(len(raw), dtype=np.float64)
        for i, s in enumerate(raw):
            try:
                vals[i] = float(s)
            except (ValueError, TypeError):
                raise ParseError(
                    f"column {col!r}, row {i}: {s!r} is not a number", row_index=i
                ) from None
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.argmax(bad))
        raise ParseError(
            f"column {col!r}, row {i}: {raw[i]!r} is not finite", row_index=i
        )
    return vals


def group_rows(
    cluster_labels: np.ndarray,
    y: np.ndarray,
    X: np.ndarray,
    superblock_labels: np.ndarray | None = None,
) -> ClusteredDataset:
    """Group parallel row arrays into a ClusteredDataset.

    Clusters appear in order of first appearance of their label; rows keep
    their input order within each cluster. Each cluster's rows must agree on
    the superblock label when one is supplied.
    """
    codes, uniques = pd.factorize(cluster_labels)
    order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    starts = np.searchsorted(sorted_codes, np.arange(len(uniques)))
    ends = np.searchsorted(sorted_codes, np.arange(len(uniques)), side="right")
    clusters = []
    superblock_of: dict[str, str] | None = {} if superblock_labels is not None else None
    for c_idx, cid in enumerate(uniques):
        rows = order[starts[c_idx] : ends[c_idx]]
        clusters.append(Cluster(id=str(cid), X=X[rows], y=y[rows]))
        if superblock_labels is not None:
            labels = set(superblock_labels[rows])
            if len(labels) != 1:
                raise SchemaError(
                    f"cluster {cid!r} spans multiple superblocks: {sorted(labels)}"
                )
            superblock_of[str(cid)] = str(labels.pop())
    return ClusteredDataset(clusters=tuple(clusters), superblock_of=superblock_of)


def load_csv(path, schema: CsvSchema) -> ClusteredDataset:
    """Load a comma-separated file into a ClusteredDataset.

    Clusters appear in order of first appearance of their id; rows keep file
    order within each cluster. With ``schema.add_intercept`` a column of ones
    is prepended to X. Values must parse as finite reals.
    """
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    needed = [schema.cluster_col, schema.y_col, *schema.x_cols]
    if schema.superblock_col is not None:
        needed.append(schema.superblock_col)
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns: {missing} (found {list(df.columns)})")
    if len(df) == 0:
        raise EmptyInputError(f"{path}: no data rows")

    y = _parse_numeric(df[schema.y_col], schema.y_col)
    xcols = [_parse_numeric(df[c], c) for c in schema.x_cols]
    n = len(df)
    if schema.add_intercept:
        xcols.insert(0, np.ones(n))
    X = np.column_stack(xcols) if xcols else np.empty((n, 0))

    sb_vals = df[schema.superblock_col].to_numpy() if schema.superblock_col else None
    return group_rows(df[schema.cluster_col].to_numpy(), y, X, sb_vals)


def write_csv(ds: ClusteredDataset, path, schema: CsvSchema) -> None:
    """Write a dataset so that load_csv(path, schema) round-trips bit-exactly.

    When the schema prepends an intercept, the leading ones column is dropped
    on write (load_csv will re-add it).
    """
    start = 1 if schema.add_intercept else 0
    if len(schema.x_cols) != ds.k - start:
        raise ConfigurationError(
            f"schema names {len(schema.x_cols)} regressor columns, dataset has {ds.k - start}"
        )
    cols: dict[str, list] = {schema.cluster_col: []}
    if schema.superblock_col is not None:
        if ds.superblock_of is None:
            raise ConfigurationError("schema names a superblock column, dataset has none")
        cols[schema.superblock_col] = []
    cols[schema.y_col] = []
    for c in schema.x_cols:
        cols[c] = []
    for c in ds.clusters:
        cols[schema.cluster_col].extend([c.id] * c.n)
        if schema.superblock_col is not None:
            cols[schema.superblock_col].extend([ds.superblock_of[c.id]] * c.n)
        # repr of a builtin float is the shortest string that parses back
        # to the same bits; numpy scalar repr would not round-trip
        cols[schema.y_col].extend(repr(float(v)) for v in c.y)
        for j, name in enumerate(schema.x_cols):
            cols[name].extend(repr(float(v)) for v in c.X[:, start + j])
    pd.DataFrame(cols).to_csv(path, index=False)


def filter_min_cluster_size(ds: ClusteredDataset, m: int) -> ClusteredDataset:
    """Keep clusters with at least m observations.

    The superblock map is restricted to the survivors; superblocks losing all
    their clusters disappear with them.
    """
    if m < 1:
        raise ConfigurationError(f"minimum cluster size must be >= 1, got {m}")
    kept = tuple(c for c in ds.clusters if c.n >= m)
    if not kept:
        raise EmptyResultError(f"no clusters have {m} or more observations")
    sb = None
    if ds.superblock_of is not None:
        sb = {c.id: ds.superblock_of[c.id] for c in kept}
    return ClusteredDataset(clusters=kept, superblock_of=sb)


def apply_model_spec(raw: pd.DataFrame, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Build (y, X) for one Engel-curve functional form.

    ``raw`` must have columns ``food`` and ``total`` (and ``hhsize`` when
    requested). X always starts with an intercept column. Rows where a log
    or a share denominator would hit a nonpositive value fail with the row
    index.
    """
    for col in ("food", "total") + (("hhsize",) if spec.include_hhsize else ()):
        if col not in raw.columns:
            raise SchemaError(f"missing column {col!r}")
    food = raw["food"].to_numpy(dtype=np.float64)
    total = raw["total"].to_numpy(dtype=np.float64)
    n = len(raw)

    def check_positive(vals: np.ndarray, what: str) -> None:
        bad = ~(vals > 0)
        if bad.any():
            i = int(np.argmax(bad))
            raise TransformError(
                f"row {i}: {what} requires a positive value, got {vals[i]!r}",
                row_index=i,
            )

    name = spec.name
    if name == "linear-share":
        check_positive(total, "share denominator total")
        y, x1 = food / total, total
    elif name == "linear":
        y, x1 = food, total
    elif name == "double-log":
        check_positive(food, "log of food")
        check_positive(total, "log of total")
        y, x1 = np.log(food), np.log(total)
    elif name == "semi-log":
        check_positive(food, "log of food")
        y, x1 = np.log(food), total
    else:  # working-leser
        check_positive(total, "share denominator total")
        y, x1 = food / total, np.log(total)
    cols = [np.ones(n), x1]
    if spec.include_hhsize:
        cols.append(raw["hhsize"].to_numpy(dtype=np.float64))
    return y, np.column_stack(cols)


def dataset_checksum(ds: ClusteredDataset) -> str:
    """64-bit content hash of ids, superblock labels, X, and y (for audit)."""
    import hashlib

    h = hashlib.blake2b(digest_size=8)
    for c in ds.clusters:
        h.update(c.id.encode())
        if ds.superblock_of is not None:
            h.update(ds.superblock_of[c.id].encode())
        h.update(c.X.tobytes())
        h.update(c.y.tobytes())
    return h.hexdigest()


def from_arrays(
    blocks: list[tuple[str, np.ndarray, np.ndarray]],
    superblock_of: dict[str, str] | None = None,
) -> ClusteredDataset:
    """Convenience constructor from (id, X, y) triples."""
    return ClusteredDataset(
        clusters=tuple(Cluster(id=i, X=X, y=y) for i, X, y in blocks),
        superblock_of=superblock_of,
    )


def replace_responses(ds: ClusteredDataset, ys: list[np.ndarray]) -> ClusteredDataset:
    """Same design, new response vectors (one array per cluster, in order)."""
    if len(ys) != ds.G:
        raise ConfigurationError(f"expected {ds.G} response vectors, got {len(ys)}")
    clusters = tuple(
        dataclasses.replace(c, y=y) for c, y in zip(ds.clusters, ys)
    )
    return ClusteredDataset(clusters=clusters, superblock_of=ds.superblock_of)
