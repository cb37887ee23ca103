"""Schema, vocabularies and the integer row store used by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from catcast.errors import SchemaError

UNK = 0
UNK_TOKEN = "<UNK>"
BLANK = "<BLANK>"

# Column names of a scraped notification dump.
NUMBER = "NUMBER"
REF = "REF"
CLASSIFICATION = "CLASSIFICATION"
DATE_CASE = "DATE_CASE"
NOTIFICATION_COUNTRY = "NOTIFICATION_COUNTRY"
SUBJECT = "SUBJECT"
PRODUCT_CATEGORY = "PRODUCT_CATEGORY"
TYPE = "TYPE"
RISK_DECISION = "RISK_DECISION"
ACTION_TAKEN = "ACTION_TAKEN"
DISTRIBUTION_STATUS = "DISTRIBUTION_STATUS"
PRODUCT = "PRODUCT"
HAZARD = "HAZARD"
HAZARD_CATEGORY = "HAZARD_CATEGORY"
COUNTRY_ORIGIN = "COUNTRY_ORIGIN"
COUNTRY_DESTINATION = "COUNTRY_DESTINATION"
COUNTRY_DISTRIBUTION = "COUNTRY_DISTRIBUTION"

# Derived during pre-processing from DATE_CASE.
MONTH = "MONTH"
YEAR = "YEAR"

RAW_COLUMNS = (
    NUMBER, CLASSIFICATION, DATE_CASE, REF, NOTIFICATION_COUNTRY, SUBJECT,
    PRODUCT_CATEGORY, TYPE, RISK_DECISION, ACTION_TAKEN, DISTRIBUTION_STATUS,
    PRODUCT, HAZARD, HAZARD_CATEGORY, COUNTRY_ORIGIN, COUNTRY_DESTINATION,
    COUNTRY_DISTRIBUTION,
)
DROPPED_COLUMNS = (NUMBER, REF)
FREE_TEXT_COLUMNS = (SUBJECT, PRODUCT, HAZARD)

STAGE1_INPUTS = (MONTH, NOTIFICATION_COUNTRY, DISTRIBUTION_STATUS, COUNTRY_ORIGIN)
TARGETS = (PRODUCT_CATEGORY, HAZARD_CATEGORY, ACTION_TAKEN)

ROLES = ("input", "target", "ignored")


class Vocabulary:
    """Ordered category list; index 0 is reserved for unseen values."""

    def __init__(self, entries: Iterable[str]):
        self.entries = tuple(entries)
        self._index = {value: i + 1 for i, value in enumerate(self.entries)}
        if len(self._index) != len(self.entries):
            raise SchemaError("vocabulary entries must be distinct")

    @property
    def cardinality(self) -> int:
        return len(self.entries)

    def lookup(self, value: str) -> int:
        return self._index.get(value, UNK)

    def lookup_many(self, values: Iterable[str]) -> np.ndarray:
        get = self._index.get
        return np.fromiter((get(v, UNK) for v in values), dtype=np.int64)

    def decode(self, index: int) -> str:
        if index == UNK:
            return UNK_TOKEN
        return self.entries[index - 1]

    def __contains__(self, value) -> bool:
        return value in self._index

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"Vocabulary({list(self.entries)!r})"


def fit_vocabulary(raw_column: Sequence[str]) -> Vocabulary:
    """Vocabulary of a column in order of first appearance."""
    if len(raw_column) == 0:
        raise SchemaError("cannot fit a vocabulary on an empty column")
    # dict preserves insertion order
    return Vocabulary(dict.fromkeys(raw_column))


def lookup(vocab: Vocabulary, value: str) -> int:
    return vocab.lookup(value)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str
    vocabulary: Vocabulary

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r} for {self.name}")


@dataclass(frozen=True)
class Schema:
    variables: tuple[VariableSpec, ...]

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate variable names in schema: {names}")

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def __contains__(self, name) -> bool:
        return any(v.name == name for v in self.variables)

    def __getitem__(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise SchemaError(f"variable {name!r} not in schema")

    def position(self, name: str) -> int:
        for i, v in enumerate(self.variables):
            if v.name == name:
                return i
        raise SchemaError(f"variable {name!r} not in schema")

    def vocab(self, name: str) -> Vocabulary:
        return self[name].vocabulary

    def to_dict(self) -> dict:
        return {
            "variables": [
                {"name": v.name, "role": v.role, "vocabulary": list(v.vocabulary.entries)}
                for v in self.variables
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Schema":
        try:
            return cls(tuple(
                VariableSpec(v["name"], v["role"], Vocabulary(v["vocabulary"]))
                for v in data["variables"]
            ))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc


def default_role(name: str) -> str:
    if name in TARGETS:
        return "target"
    if name in STAGE1_INPUTS:
        return "input"
    return "ignored"


@dataclass(frozen=True)
class Table:
    """Category indices, one column per schema variable, plus a per-row year."""

    schema: Schema
    rows: np.ndarray
    year: np.ndarray
    provenance: str = "real"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[1] != len(self.schema.variables):
            raise SchemaError(
                f"rows of shape {rows.shape} do not match {len(self.schema.variables)} variables"
            )
        year = np.asarray(self.year, dtype=np.int64)
        if year.shape != (rows.shape[0],):
            raise SchemaError("year column length differs from row count")
        limits = np.array([v.vocabulary.cardinality for v in self.schema.variables])
        if rows.size and ((rows < 0).any() or (rows > limits).any()):
            raise SchemaError("cell index outside its vocabulary")
        if self.provenance not in ("real", "synthetic"):
            raise SchemaError(f"unknown provenance {self.provenance!r}")
        rows.setflags(write=False)
        year.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "year", year)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.schema.position(name)]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        return self.rows[:, [self.schema.position(n) for n in names]]

    def decode(self, name: str) -> list[str]:
        vocab = self.schema.vocab(name)
        return [vocab.decode(int(i)) for i in self.column(name)]

    def subset(self, indices) -> "Table":
        indices = np.asarray(indices, dtype=np.int64)
        return Table(self.schema, self.rows[indices], self.year[indices], self.provenance)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "rows": self.rows.tolist(),
            "year": self.year.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Table":
        schema = Schema.from_dict(data["schema"])
        rows = np.asarray(data["rows"], dtype=np.int64).reshape(-1, len(schema.variables))
        return cls(schema, rows, np.asarray(data["year"], dtype=np.int64), data.get("provenance", "real"))


def build_table(
    columns: dict[str, Sequence[str]],
    year: Sequence[int],
    provenance: str = "real",
    schema: Schema | None = None,
) -> Table:
    """Index string columns into a Table.

    Without a schema, vocabularies are fitted on ``columns`` (first appearance).
    With one, its vocabularies are applied and unseen values map to UNK.
    """
    if schema is None:
        schema = Schema(tuple(
            VariableSpec(name, default_role(name), fit_vocabulary(values))
            for name, values in columns.items()
        ))
    n = len(year)
    rows = np.zeros((n, len(schema.variables)), dtype=np.int64)
    for j, var in enumerate(schema.variables):
        if var.name not in columns:
            raise SchemaError(f"column {var.name!r} missing from input")
        values = columns[var.name]
        if len(values) != n:
            raise SchemaError(f"column {var.name!r} has {len(values)} rows, expected {n}")
        rows[:, j] = var.vocabulary.lookup_many(values)
    return Table(schema, rows, np.asarray(year, dtype=np.int64), provenance)
