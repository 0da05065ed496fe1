"""Schema-tagged tabular data: CSV ingestion, filtering, splitting, preprocessing.

The :class:`Table` is the data carrier used throughout the toolkit.  Storage is
columnar: numeric columns are float64 arrays, binary columns are int64 arrays
of 0/1, categorical (and ignored) columns are object arrays of strings.
Tables are immutable; every operation returns a new Table sharing the schema.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyGroupError, NotFittedError, SchemaError

KINDS = ("numeric", "categorical", "binary")
ROLES = ("protected", "unprotected", "label", "ignore")

# Cell contents treated as missing during CSV cleaning.
MISSING_TOKENS = frozenset({"", "?", "NA", "N/A", "NaN", "nan", "null", "NULL"})

COMPARATORS = ("==", "!=", "<", "<=", ">", ">=", "in", "not_in")

_NEGATION = {
    "==": "!=",
    "!=": "==",
    "<": ">=",
    "<=": ">",
    ">": "<=",
    ">=": "<",
    "in": "not_in",
    "not_in": "in",
}


@dataclass(frozen=True)
class ColumnSchema:
    """One column: its name, value kind, and role in fairness analyses.

    ``positive`` applies to binary columns only: the raw CSV token mapped to 1
    (any other non-missing token maps to 0).  Without it, binary cells must
    parse as literal 0/1.
    """

    name: str
    kind: str
    role: str
    positive: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.role not in ROLES:
            raise SchemaError(f"unknown column role {self.role!r} for {self.name!r}")
        if self.positive is not None and self.kind != "binary":
            raise SchemaError(f"'positive' is only valid on binary columns ({self.name!r})")


def _check_schema(schema: Sequence[ColumnSchema]) -> tuple[ColumnSchema, ...]:
    schema = tuple(schema)
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names in schema")
    labels = [c for c in schema if c.role == "label"]
    if len(labels) > 1:
        raise SchemaError("schema declares more than one label column")
    return schema


class Table:
    """Immutable columnar dataset with a fixed schema."""

    def __init__(self, schema: Sequence[ColumnSchema], columns: dict[str, np.ndarray]):
        self.schema = _check_schema(schema)
        if set(columns) != {c.name for c in self.schema}:
            raise SchemaError("columns do not match schema names")
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise SchemaError("columns have unequal lengths")
        self._columns = {name: np.asarray(col) for name, col in columns.items()}
        for col in self._columns.values():
            col.setflags(write=False)

    @property
    def n_rows(self) -> int:
        if not self._columns:
            return 0
        return len(next(iter(self._columns.values())))

    def __len__(self) -> int:
        return self.n_rows

    def column(self, name: str) -> np.ndarray:
        if name not in self._columns:
            raise SchemaError(f"unknown column {name!r}")
        return self._columns[name]

    def column_schema(self, name: str) -> ColumnSchema:
        for c in self.schema:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    @property
    def label_column(self) -> str:
        for c in self.schema:
            if c.role == "label":
                return c.name
        raise SchemaError("schema has no label column")

    def labels(self) -> np.ndarray:
        """Label column as an int64 0/1 vector."""
        return self.column(self.label_column).astype(np.int64)

    def take(self, indices: np.ndarray) -> "Table":
        return Table(self.schema, {n: c[indices] for n, c in self._columns.items()})

    def with_column(self, spec: ColumnSchema, values: np.ndarray) -> "Table":
        """New table with one extra column appended to the schema."""
        if any(c.name == spec.name for c in self.schema):
            raise SchemaError(f"column {spec.name!r} already exists")
        cols = dict(self._columns)
        cols[spec.name] = np.asarray(values)
        return Table(self.schema + (spec,), cols)

    def with_values(self, name: str, values: np.ndarray) -> "Table":
        """New table with the named column's values replaced."""
        self.column(name)
        cols = dict(self._columns)
        cols[name] = np.asarray(values)
        return Table(self.schema, cols)

    def equal_rows(self, other: "Table", ignore: Iterable[str] = ()) -> bool:
        """Row-by-row equality, optionally ignoring some columns."""
        skip = set(ignore)
        if self.schema != other.schema or len(self) != len(other):
            return False
        return all(
            np.array_equal(self._columns[c.name], other._columns[c.name])
            for c in self.schema
            if c.name not in skip
        )


@dataclass(frozen=True)
class Clause:
    """One comparison against a column; value is a number, symbol, or set."""

    column: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in COMPARATORS:
            raise SchemaError(f"unknown comparator {self.op!r}")


@dataclass(frozen=True)
class FilterCondition:
    """Conjunction of clauses; an empty clause list selects every row."""

    clauses: tuple[Clause, ...] = ()

    def negate(self) -> "FilterCondition":
        """Negation of a single-clause condition (used for protected groups)."""
        if len(self.clauses) != 1:
            raise SchemaError("only single-clause conditions have a defined negation")
        c = self.clauses[0]
        return FilterCondition((Clause(c.column, _NEGATION[c.op], c.value),))

    def conjoin(self, other: "FilterCondition") -> "FilterCondition":
        return FilterCondition(self.clauses + other.clauses)


def _clause_mask(table: Table, clause: Clause) -> np.ndarray:
    col = table.column(clause.column)
    kind = table.column_schema(clause.column).kind
    if clause.op in ("in", "not_in"):
        values = set(clause.value)
        if kind == "numeric":
            values = {float(v) for v in values}
        elif kind == "binary":
            values = {int(v) for v in values}
        else:
            values = {str(v) for v in values}
        mask = np.isin(col, list(values))
        return ~mask if clause.op == "not_in" else mask
    if kind == "numeric":
        value = float(clause.value)
    elif kind == "binary":
        value = int(clause.value)
    else:
        value = str(clause.value)
    if clause.op == "==":
        return col == value
    if clause.op == "!=":
        return col != value
    if kind == "categorical":
        raise SchemaError(f"ordering comparator {clause.op!r} on categorical column {clause.column!r}")
    if clause.op == "<":
        return col < value
    if clause.op == "<=":
        return col <= value
    if clause.op == ">":
        return col > value
    return col >= value


def condition_mask(table: Table, cond: FilterCondition) -> np.ndarray:
    mask = np.ones(len(table), dtype=bool)
    for clause in cond.clauses:
        mask &= _clause_mask(table, clause)
    return mask


def filter_rows(table: Table, cond: FilterCondition) -> Table:
    """Rows of ``table`` satisfying every clause of ``cond`` (select-where)."""
    return table.take(np.flatnonzero(condition_mask(table, cond)))


def concatenate(parts: Sequence[Table]) -> Table:
    """Stack tables sharing an identical schema, preserving part order."""
    if not parts:
        raise SchemaError("concatenate requires at least one part")
    schema = parts[0].schema
    for p in parts[1:]:
        if p.schema != schema:
            raise SchemaError("concatenate parts have mismatched schemas")
    cols = {
        c.name: np.concatenate([p.column(c.name) for p in parts])
        for c in schema
    }
    return Table(schema, cols)


@dataclass(frozen=True)
class SplitSpec:
    """Randomized partition into parts of the given fractions."""

    fractions: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.fractions or any(not (0.0 < f <= 1.0) for f in self.fractions):
            raise SchemaError("split fractions must lie in (0, 1]")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise SchemaError("split fractions must sum to 1")
        if self.seed < 0:
            raise SchemaError("seed must be non-negative")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(table: Table, spec: SplitSpec) -> list[Table]:
    """Shuffle rows with the spec's seed and cut into consecutive parts.

    Part i gets round(fraction_i * N) rows; rounding surplus or deficit lands
    in the final part.
    """
    n = len(table)
    perm = np.random.default_rng(spec.seed).permutation(n)
    sizes = [_round_half_up(f * n) for f in spec.fractions[:-1]]
    sizes.append(n - sum(sizes))
    if sizes[-1] < 0:
        raise SchemaError("split fractions round to more rows than available")
    parts, start = [], 0
    for size in sizes:
        parts.append(table.take(perm[start:start + size]))
        start += size
    return parts


def _parse_cell(raw: str, col: ColumnSchema):
    """Parsed value, or None when the cell is missing/unparseable."""
    text = raw.strip()
    if text in MISSING_TOKENS:
        return None
    if col.kind == "numeric":
        try:
            value = float(text)
        except ValueError:
            return None
        return value if np.isfinite(value) else None
    if col.kind == "binary":
        if col.positive is not None:
            return 1 if text == col.positive else 0
        try:
            value = float(text)
        except ValueError:
            return None
        if value not in (0.0, 1.0):
            return None
        return int(value)
    return text


def load_csv(path, schema: Sequence[ColumnSchema]) -> Table:
    """Read a headered CSV into a Table, dropping unclean rows.

    A row is dropped when any non-ignored column holds a missing or
    unparseable cell.  Ignored columns keep their raw text.
    """
    schema = _check_schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        if [h.strip() for h in header] != [c.name for c in schema]:
            raise SchemaError(f"{path}: header does not match schema names")
        kept: list[list] = []
        for row in reader:
            if len(row) != len(schema):
                continue
            values = []
            for raw, col in zip(row, schema):
                if col.role == "ignore":
                    values.append(raw.strip())
                    continue
                value = _parse_cell(raw, col)
                if value is None:
                    break
                values.append(value)
            else:
                kept.append(values)
    if not kept:
        raise EmptyGroupError(f"{path}: no rows survived cleaning")
    columns: dict[str, np.ndarray] = {}
    for j, col in enumerate(schema):
        cells = [r[j] for r in kept]
        if col.role == "ignore":
            columns[col.name] = np.array(cells, dtype=object)
        elif col.kind == "numeric":
            columns[col.name] = np.array(cells, dtype=np.float64)
        elif col.kind == "binary":
            columns[col.name] = np.array(cells, dtype=np.int64)
        else:
            columns[col.name] = np.array(cells, dtype=object)
    return Table(schema, columns)


def write_csv(table: Table, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in table.schema])
        cols = [table.column(c.name) for c in table.schema]
        kinds = [c.kind if c.role != "ignore" else "ignore" for c in table.schema]
        for i in range(len(table)):
            row = []
            for col, kind in zip(cols, kinds):
                v = col[i]
                if kind == "numeric":
                    row.append(format(float(v), ".17g"))
                elif kind == "binary":
                    row.append(str(int(v)))
                else:
                    row.append(str(v))
            writer.writerow(row)


def write_matrix_csv(X: np.ndarray, path) -> None:
    """Row-major CSV dump of a numeric matrix, 17 significant digits."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in X:
            writer.writerow([format(v, ".17g") for v in row])


def load_schema(path) -> tuple[ColumnSchema, ...]:
    """Schema file: JSON array of {name, kind, role[, positive]}."""
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise SchemaError(f"{path}: schema file must be a JSON array")
    return _check_schema(
        ColumnSchema(e["name"], e["kind"], e["role"], e.get("positive")) for e in entries
    )


def save_schema(schema: Sequence[ColumnSchema], path) -> None:
    entries = []
    for c in schema:
        entry = {"name": c.name, "kind": c.kind, "role": c.role}
        if c.positive is not None:
            entry["positive"] = c.positive
        entries.append(entry)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")


class Preprocessor:
    """Feature-matrix builder fitted on one table and reusable on others.

    Feature columns are the unprotected ones, minus an explicit drop list:
    numeric columns are standardized with fit-time mean and population std,
    binary columns pass through as 0/1, categorical columns are one-hot
    encoded against the fit-time vocabulary (unseen categories encode as
    all-zeros).  Protected, label, and ignored columns never enter the
    matrix.
    """

    def __init__(self):
        self.fitted = False
        self.drops: tuple[str, ...] = ()
        self.feature_columns: tuple[ColumnSchema, ...] = ()
        self.numeric_stats: dict[str, tuple[float, float]] = {}
        self.vocabularies: dict[str, tuple[str, ...]] = {}
        self.dimension = 0

    def fit(self, table: Table, drops: Sequence[str] = ()) -> "Preprocessor":
        self.drops = tuple(drops)
        feats = []
        for c in table.schema:
            if c.role != "unprotected" or c.name in self.drops:
                continue
            feats.append(c)
            if c.kind == "numeric":
                col = table.column(c.name)
                mean = float(np.mean(col))
                std = float(np.std(col))  # population std
                self.numeric_stats[c.name] = (mean, std)
            elif c.kind == "categorical":
                self.vocabularies[c.name] = tuple(sorted(set(table.column(c.name))))
        if not feats:
            raise SchemaError("no feature columns to preprocess")
        self.feature_columns = tuple(feats)
        self.dimension = sum(
            len(self.vocabularies[c.name]) if c.kind == "categorical" else 1
            for c in feats
        )
        self.fitted = True
        return self

    def apply(self, table: Table) -> tuple[np.ndarray, np.ndarray | None]:
        """Feature matrix plus the 0/1 label vector (None if unlabeled)."""
        if not self.fitted:
            raise NotFittedError("preprocessor used before fit")
        n = len(table)
        blocks = []
        for c in self.feature_columns:
            spec = table.column_schema(c.name)
            if spec.kind != c.kind:
                raise SchemaError(f"column {c.name!r} changed kind since fit")
            col = table.column(c.name)
            if c.kind == "numeric":
                mean, std = self.numeric_stats[c.name]
                if std == 0.0:
                    blocks.append(np.zeros((n, 1)))
                else:
                    blocks.append(((col - mean) / std).reshape(n, 1))
            elif c.kind == "binary":
                blocks.append(col.astype(np.float64).reshape(n, 1))
            else:
                vocab = self.vocabularies[c.name]
                block = np.zeros((n, len(vocab)))
                index = {v: j for j, v in enumerate(vocab)}
                for i, v in enumerate(col):
                    j = index.get(v)
                    if j is not None:
                        block[i, j] = 1.0
                blocks.append(block)
        X = np.hstack(blocks) if blocks else np.zeros((n, 0))
        y = None
        if any(c.role == "label" for c in table.schema):
            y = table.labels()
        return X, y


def preprocess_fit(table: Table, drops: Sequence[str] = ()) -> Preprocessor:
    return Preprocessor().fit(table, drops)


def preprocess_apply(prep: Preprocessor, table: Table) -> tuple[np.ndarray, np.ndarray | None]:
    return prep.apply(table)


class PcaModel:
    """Top-k principal components of centered data (population covariance)."""

    def __init__(self, mean: np.ndarray, components: np.ndarray, eigenvalues: np.ndarray):
        self.mean = mean
        self.components = components  # shape (k, d), rows orthonormal
        self.eigenvalues = eigenvalues

    @property
    def k(self) -> int:
        return self.components.shape[0]


def pca_fit(X: np.ndarray, k: int) -> PcaModel:
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if k > d:
        raise SchemaError(f"pca k={k} exceeds feature count {d}")
    if n < 2:
        raise SchemaError("pca needs at least 2 rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / n
    if np.trace(cov) == 0.0:
        raise SchemaError("pca input is degenerate (all rows identical)")
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    components = eigvecs[:, order].T.copy()
    # Deterministic sign: largest-magnitude entry of each component positive.
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(mean, components, eigvals[order])


def pca_apply(model: PcaModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return (X - model.mean) @ model.components.T
