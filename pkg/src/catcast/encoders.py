"""Classical categorical encodings: integer, binary, feature hashing and one-hot."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from catcast.core import UNK_TOKEN, Schema, Table, Vocabulary
from catcast.errors import EncodeError

KINDS = ("integer", "binary", "hashing", "one_hot")
DEFAULT_BUCKETS = 256

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class EncodingScheme:
    kind: str
    buckets: int = DEFAULT_BUCKETS

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        if kind not in KINDS:
            raise EncodeError(f"unknown encoding {self.kind!r}; choose from {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "hashing" and self.buckets < 2:
            raise EncodeError(f"hashing needs at least 2 buckets, got {self.buckets}")

    def width(self, cardinality: int) -> int:
        if self.kind == "integer":
            return 1
        if self.kind == "binary":
            return binary_width(cardinality)
        if self.kind == "hashing":
            return self.buckets
        return cardinality + 1


@dataclass(frozen=True)
class EncodedMatrix:
    values: np.ndarray
    column_names: list[str]
    source_schema: Schema


def _check_index(index: int, cardinality: int) -> None:
    if not 0 <= index <= cardinality:
        raise EncodeError(f"index {index} outside 0..{cardinality}")


def integer_encode(index: int, cardinality: int) -> float:
    _check_index(index, cardinality)
    return float(index)


def binary_width(n: int) -> int:
    """Number of bits needed for codes 0..n, i.e. ceil(log2(n + 1))."""
    if n < 1:
        raise EncodeError(f"cardinality must be at least 1, got {n}")
    # exact integer form of ceil(log2(n + 1))
    return n.bit_length()


def binary_encode(index: int, width: int) -> np.ndarray:
    """Big-endian bits of ``index``."""
    if index < 0 or index >= 1 << width:
        raise EncodeError(f"index {index} does not fit in {width} bits")
    return np.array([(index >> (width - 1 - b)) & 1 for b in range(width)], dtype=np.float64)


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def hash_encode(value: str, buckets: int) -> int:
    if buckets < 2:
        raise EncodeError(f"hashing needs at least 2 buckets, got {buckets}")
    return fnv1a_64(value.encode("utf-8")) % buckets


def hash_vector(value: str, buckets: int) -> np.ndarray:
    v = np.zeros(buckets)
    v[hash_encode(value, buckets)] = 1.0
    return v


def one_hot(index: int, cardinality: int) -> np.ndarray:
    """Indicator vector of length cardinality + 1; slot 0 is UNK."""
    _check_index(index, cardinality)
    v = np.zeros(cardinality + 1)
    v[index] = 1.0
    return v


def code_table(vocab: Vocabulary, scheme: EncodingScheme) -> np.ndarray:
    """Row i is the encoding of vocabulary index i (row 0 = UNK)."""
    n = vocab.cardinality
    if scheme.kind == "integer":
        return np.arange(n + 1, dtype=np.float64)[:, None]
    if scheme.kind == "binary":
        w = binary_width(n)
        return np.stack([binary_encode(i, w) for i in range(n + 1)])
    if scheme.kind == "hashing":
        table = np.zeros((n + 1, scheme.buckets))
        for i in range(n + 1):
            table[i, hash_encode(vocab.decode(i) if i else UNK_TOKEN, scheme.buckets)] = 1.0
        return table
    return np.eye(n + 1)


def encode_indices(index_rows: np.ndarray, vocabs: Sequence[Vocabulary], scheme: EncodingScheme,
                   tables: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Encode an (n, len(vocabs)) matrix of indices column by column and concatenate."""
    index_rows = np.asarray(index_rows, dtype=np.int64)
    if tables is None:
        tables = [code_table(v, scheme) for v in vocabs]
    parts = []
    for j, (vocab, table) in enumerate(zip(vocabs, tables)):
        col = index_rows[:, j]
        if col.size and (col.min() < 0 or col.max() > vocab.cardinality):
            raise EncodeError(f"index outside 0..{vocab.cardinality} in column {j}")
        parts.append(table[col])
    if not parts:
        return np.zeros((index_rows.shape[0], 0))
    return np.concatenate(parts, axis=1)


def column_names(name: str, scheme: EncodingScheme, cardinality: int) -> list[str]:
    if scheme.kind == "integer":
        return [name]
    return [f"{name}-{i}" for i in range(scheme.width(cardinality))]


def encode_table(table: Table, scheme: EncodingScheme, input_variables: Sequence[str]) -> EncodedMatrix:
    order = [v.name for v in table.schema.variables if v.name in set(input_variables)]
    missing = set(input_variables) - set(order)
    if missing:
        raise EncodeError(f"variables not in schema: {sorted(missing)}")
    vocabs = [table.schema.vocab(n) for n in order]
    values = encode_indices(table.columns(order), vocabs, scheme)
    names = [c for n, v in zip(order, vocabs) for c in column_names(n, scheme, v.cardinality)]
    return EncodedMatrix(values, names, table.schema)

